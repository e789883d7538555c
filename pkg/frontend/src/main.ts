import { startViewer } from "./viewer.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const overlay = document.getElementById("overlay") as HTMLElement;
const params = new URLSearchParams(window.location.search);
const bundleUrl = params.get("bundle") ?? "bundle";

startViewer(bundleUrl, canvas, overlay).catch((err) => {
  overlay.textContent = `load failed: ${err instanceof Error ? err.message : err}`;
});
