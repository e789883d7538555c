import { readFile } from "node:fs/promises";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { loadBundle, popcount, type FileReader } from "../src/bundle.js";
import { cameraCenter, decodeCameraState } from "../src/camera.js";
import { framePsnr, nearestCluster, renderFrame } from "../src/render.js";
import type { Bundle } from "../src/types.js";

const FIXTURES = join(__dirname, "fixtures");

const diskReader: FileReader = async (name) =>
  new Uint8Array(await readFile(join(FIXTURES, "bundle", name)));

interface ParityCase {
  state: string;
  width: number;
  height: number;
  frame: string;
  filtered_frame: string;
  active_count: number;
  cluster_index: number;
}

let bundle: Bundle;
let cases: ParityCase[];

async function referenceFrame(name: string): Promise<Float64Array> {
  const raw = await readFile(join(FIXTURES, "parity", name));
  const f32 = new Float32Array(
    raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength),
  );
  return Float64Array.from(f32);
}

beforeAll(async () => {
  bundle = await loadBundle(diskReader);
  const raw = await readFile(join(FIXTURES, "parity", "cases.json"), "utf8");
  cases = JSON.parse(raw).cases;
});

describe("render parity against the reference rasterizer", () => {
  it("matches the shared-pose reference frames at >= 30 dB", async () => {
    expect(cases.length).toBe(5);
    for (const c of cases) {
      const cam = decodeCameraState(c.state);
      const frame = renderFrame(bundle.scene, bundle.visibility, cam, {
        filtering: false,
      });
      const ref = await referenceFrame(c.frame);
      const psnr = framePsnr(frame.pixels, ref);
      // the reference frames are stored as float32, so the practical
      // ceiling is quantization noise, far above the 30 dB requirement
      expect(psnr).toBeGreaterThanOrEqual(30);
      expect(psnr).toBeGreaterThanOrEqual(80);
    }
  });

  it("matches the filtered reference frames and their active counts", async () => {
    for (const c of cases) {
      const cam = decodeCameraState(c.state);
      const frame = renderFrame(bundle.scene, bundle.visibility, cam, {
        filtering: true,
      });
      const ref = await referenceFrame(c.filtered_frame);
      expect(framePsnr(frame.pixels, ref)).toBeGreaterThanOrEqual(30);
      expect(frame.stats.clusterIndex).toBe(c.cluster_index);
      expect(frame.stats.activeCount).toBe(c.active_count);
    }
  });
});

describe("filtering toggle", () => {
  it("reports active count equal to the cluster bitset population", () => {
    const cam = decodeCameraState(cases[0].state);
    const frame = renderFrame(bundle.scene, bundle.visibility, cam, {
      filtering: true,
    });
    const j = frame.stats.clusterIndex;
    const expected = popcount(
      bundle.visibility!.clusters[j].bitset,
      bundle.scene.count,
    );
    expect(frame.stats.activeCount).toBe(expected);
  });

  it("with an all-active bitset the frames are pixel-identical", () => {
    const cam = decodeCameraState(cases[1].state);
    const off = renderFrame(bundle.scene, bundle.visibility, cam, {
      filtering: false,
    });
    // synthesize all-active clusters without touching the real bundle data
    const nBytes = bundle.visibility!.clusters[0].bitset.length;
    const allOn = {
      ...bundle.visibility!,
      clusters: bundle.visibility!.clusters.map((c) => ({
        ...c,
        bitset: new Uint8Array(nBytes).fill(0xff),
        activeCount: bundle.scene.count,
      })),
    };
    const on = renderFrame(bundle.scene, allOn, cam, { filtering: true });
    let maxDiff = 0;
    for (let i = 0; i < off.pixels.length; i++) {
      maxDiff = Math.max(maxDiff, Math.abs(off.pixels[i] - on.pixels[i]));
    }
    expect(maxDiff).toBeLessThan(1 / 255);
    expect(on.stats.activeCount).toBe(bundle.scene.count);
  });

  it("never mutates the bundle while rendering", () => {
    const before = bundle.scene.positions.slice();
    const bitsBefore = bundle.visibility!.clusters[0].bitset.slice();
    const cam = decodeCameraState(cases[2].state);
    renderFrame(bundle.scene, bundle.visibility, cam, { filtering: true });
    renderFrame(bundle.scene, bundle.visibility, cam, { filtering: false });
    expect(bundle.scene.positions).toEqual(before);
    expect(bundle.visibility!.clusters[0].bitset).toEqual(bitsBefore);
  });
});

describe("cluster switching", () => {
  it("crossing between the two camera groups changes the cluster", () => {
    const left = cases.find((c) => c.cluster_index === 0)!;
    const right = cases.find((c) => c.cluster_index === 1)!;
    expect(left).toBeDefined();
    expect(right).toBeDefined();
    const camL = decodeCameraState(left.state);
    const camR = decodeCameraState(right.state);
    const jL = nearestCluster(bundle.visibility!, cameraCenter(camL));
    const jR = nearestCluster(bundle.visibility!, cameraCenter(camR));
    expect(jL).not.toBe(jR);
    expect(jL).toBe(left.cluster_index);
    expect(jR).toBe(right.cluster_index);
  });
});
