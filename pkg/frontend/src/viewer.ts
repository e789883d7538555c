/** Browser shell: canvas presentation, input handling, stats overlay.
 *
 * All heavy lifting lives in bundle.ts / camera.ts / render.ts, which are
 * DOM-free and covered by the unit tests; this file only wires them to the
 * page. State is mutated on the UI thread only; the bundle itself is never
 * written to after load.
 */

import { loadBundle, type FileReader } from "./bundle.js";
import {
  cameraCenter,
  decodeCameraState,
  encodeCameraState,
  flyLook,
  flyMove,
  fromManifestCamera,
  orbitCamera,
} from "./camera.js";
import { renderFrame } from "./render.js";
import type { Bundle, CameraState } from "./types.js";

type Mode = "orbit" | "fly";

export class Viewer {
  private bundle: Bundle;
  private canvas: HTMLCanvasElement;
  private overlay: HTMLElement;
  private camera: CameraState;
  private readonly initialCamera: CameraState;
  private filtering = false;
  private mode: Mode = "orbit";
  private orbit = { azimuth: 0.5, elevation: 0.4, radius: 4 };
  private lastFrameMs = 0;
  private dirty = true;

  constructor(bundle: Bundle, canvas: HTMLCanvasElement, overlay: HTMLElement) {
    this.bundle = bundle;
    this.canvas = canvas;
    this.overlay = overlay;
    const first = bundle.manifest.cameras[0];
    this.camera = first
      ? fromManifestCamera(first)
      : this.defaultCamera();
    this.initialCamera = { ...this.camera };
    const c = cameraCenter(this.camera);
    this.orbit.radius = Math.hypot(c[0], c[1], c[2]) || 4;
    canvas.width = this.camera.width;
    canvas.height = this.camera.height;
    this.bindInput();
    requestAnimationFrame(() => this.tick());
  }

  private defaultCamera(): CameraState {
    const m = this.bundle.manifest;
    const size = 256;
    const extent = Math.max(
      ...m.bbox_max.map((v, i) => Math.abs(v - m.bbox_min[i])),
    );
    const fx = size / (2 * Math.tan(Math.PI / 8));
    const base: CameraState = {
      width: size,
      height: size,
      fx,
      fy: fx,
      cx: size / 2,
      cy: size / 2,
      rotation: Float64Array.from([1, 0, 0, 0, 1, 0, 0, 0, 1]),
      translation: Float64Array.from([0, 0, 2 * extent]),
    };
    return orbitCamera(
      { target: [0, 0, 0], radius: 2 * extent, azimuth: 0.5, elevation: 0.4 },
      base,
    );
  }

  private bindInput(): void {
    window.addEventListener("keydown", (ev) => {
      const step = 0.1;
      switch (ev.key) {
        case "f":
          this.filtering = !this.filtering;
          break;
        case "m":
          this.mode = this.mode === "orbit" ? "fly" : "orbit";
          break;
        case "w": this.camera = flyMove(this.camera, [0, 0, step]); break;
        case "s": this.camera = flyMove(this.camera, [0, 0, -step]); break;
        case "a": this.camera = flyMove(this.camera, [-step, 0, 0]); break;
        case "d": this.camera = flyMove(this.camera, [step, 0, 0]); break;
        case "q": this.camera = flyMove(this.camera, [0, -step, 0]); break;
        case "e": this.camera = flyMove(this.camera, [0, step, 0]); break;
        case "c": {
          const state = encodeCameraState(this.camera);
          void navigator.clipboard?.writeText(state);
          console.log("camera state:", state);
          break;
        }
        case "v": {
          const pasted = window.prompt("camera state string:");
          if (pasted) this.camera = decodeCameraState(pasted.trim());
          break;
        }
        default: {
          // digits snap to the corresponding training camera
          const idx = parseInt(ev.key, 10);
          if (!Number.isNaN(idx) && this.bundle.manifest.cameras[idx]) {
            this.camera = fromManifestCamera(this.bundle.manifest.cameras[idx]);
          } else {
            return;
          }
        }
      }
      this.dirty = true;
    });

    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("mousedown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    window.addEventListener("mouseup", () => (dragging = false));
    window.addEventListener("mousemove", (ev) => {
      if (!dragging) return;
      const dx = (ev.clientX - lastX) * 0.01;
      const dy = (ev.clientY - lastY) * 0.01;
      lastX = ev.clientX;
      lastY = ev.clientY;
      if (this.mode === "orbit") {
        this.orbit.azimuth += dx;
        this.orbit.elevation = Math.min(
          Math.max(this.orbit.elevation + dy, -1.4),
          1.4,
        );
        this.camera = orbitCamera(
          { target: [0, 0, 0], ...this.orbit },
          this.camera,
        );
      } else {
        this.camera = flyLook(this.camera, dx, dy);
      }
      this.dirty = true;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.orbit.radius = Math.max(0.2, this.orbit.radius * (1 + ev.deltaY * 1e-3));
      if (this.mode === "orbit") {
        this.camera = orbitCamera(
          { target: [0, 0, 0], ...this.orbit },
          this.camera,
        );
        this.dirty = true;
      }
    });
  }

  private tick(): void {
    if (this.dirty) {
      const t0 = performance.now();
      const frame = renderFrame(
        this.bundle.scene,
        this.bundle.visibility,
        this.camera,
        { filtering: this.filtering },
      );
      this.lastFrameMs = performance.now() - t0;
      this.present(frame.pixels, frame.width, frame.height);
      const fps = this.lastFrameMs > 0 ? 1000 / this.lastFrameMs : 0;
      this.overlay.textContent =
        `${fps.toFixed(1)} fps | active ${frame.stats.activeCount}` +
        `/${frame.stats.totalCount}` +
        (frame.stats.clusterIndex >= 0
          ? ` | cluster ${frame.stats.clusterIndex}`
          : " | filtering off") +
        ` | ${this.mode} mode`;
      this.dirty = false;
    }
    requestAnimationFrame(() => this.tick());
  }

  private present(pixels: Float64Array, w: number, h: number): void {
    if (this.canvas.width !== w) this.canvas.width = w;
    if (this.canvas.height !== h) this.canvas.height = h;
    const ctx = this.canvas.getContext("2d")!;
    const img = ctx.createImageData(w, h);
    for (let p = 0; p < w * h; p++) {
      img.data[4 * p] = Math.round(Math.min(Math.max(pixels[3 * p], 0), 1) * 255);
      img.data[4 * p + 1] = Math.round(Math.min(Math.max(pixels[3 * p + 1], 0), 1) * 255);
      img.data[4 * p + 2] = Math.round(Math.min(Math.max(pixels[3 * p + 2], 0), 1) * 255);
      img.data[4 * p + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
  }

  /** Restore the initial view (used to verify reload reproducibility). */
  reset(): void {
    this.camera = { ...this.initialCamera };
    this.filtering = false;
    this.dirty = true;
  }
}

export async function startViewer(
  baseUrl: string,
  canvas: HTMLCanvasElement,
  overlay: HTMLElement,
): Promise<Viewer> {
  const readFile: FileReader = async (name) => {
    const resp = await fetch(`${baseUrl}/${name}`);
    if (!resp.ok) throw new Error(`failed to fetch ${name}: ${resp.status}`);
    return new Uint8Array(await resp.arrayBuffer());
  };
  const bundle = await loadBundle(readFile);
  return new Viewer(bundle, canvas, overlay);
}
