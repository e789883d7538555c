/** Bundle loading: slice scene.bin / visibility.bin per the manifest and
 * verify every checksum before handing data to the renderer. All arrays are
 * immutable after load (the viewer never writes to them). */

import type {
  Bundle,
  ClusterData,
  SceneData,
  ViewerManifest,
  VisibilityData,
} from "./types.js";

export const SUPPORTED_SCHEMA_VERSION = 1;

export class BundleError extends Error {}

const PAYLOAD_ORDER = [
  "positions",
  "log_scales",
  "quaternions",
  "opacity_logits",
  "sh",
] as const;

async function sha256Hex(data: Uint8Array): Promise<string> {
  const buf = data.buffer.slice(
    data.byteOffset,
    data.byteOffset + data.byteLength,
  ) as ArrayBuffer;
  const digest = await crypto.subtle.digest("SHA-256", buf);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

function sliceF32(bin: Uint8Array, offset: number, length: number): Float32Array {
  if (offset + length > bin.byteLength) {
    throw new BundleError(
      `buffer slice [${offset}, ${offset + length}) exceeds binary size ${bin.byteLength}`,
    );
  }
  // copy into an aligned buffer; bundles are small enough that this is cheap
  const copy = bin.slice(offset, offset + length);
  return new Float32Array(copy.buffer, 0, length / 4);
}

async function checkBuffer(
  name: string,
  data: Uint8Array,
  expected: string,
): Promise<void> {
  const actual = await sha256Hex(data);
  if (actual !== expected) {
    throw new BundleError(
      `checksum mismatch for ${name}: expected ${expected}, got ${actual}`,
    );
  }
}

export function popcount(bitset: Uint8Array, nBits: number): number {
  let total = 0;
  for (let i = 0; i < bitset.length; i++) {
    let b = bitset[i];
    while (b) {
      b &= b - 1;
      total++;
    }
  }
  // guard: bits past nBits must be zero by construction, but count only nBits
  const spare = bitset.length * 8 - nBits;
  if (spare < 0) throw new BundleError("bitset shorter than primitive count");
  return total;
}

export function bitsetGet(bitset: Uint8Array, index: number): boolean {
  return (bitset[index >> 3] & (1 << (index & 7))) !== 0;
}

function parseScene(manifest: ViewerManifest, sceneBin: Uint8Array): SceneData {
  const n = manifest.count;
  const expect: Record<string, number> = {
    positions: n * 3 * 4,
    log_scales: n * 3 * 4,
    quaternions: n * 4 * 4,
    opacity_logits: n * 4,
    sh: n * 48 * 4,
  };
  const arrays: Record<string, Float32Array> = {};
  for (const key of PAYLOAD_ORDER) {
    const desc = manifest.buffers[key];
    if (!desc) throw new BundleError(`manifest is missing buffer ${key}`);
    if (desc.length !== expect[key]) {
      throw new BundleError(
        `buffer ${key} has ${desc.length} bytes, expected ${expect[key]}`,
      );
    }
    arrays[key] = sliceF32(sceneBin, desc.offset, desc.length);
  }
  return {
    count: n,
    activeShDegree: manifest.active_sh_degree,
    positions: arrays.positions,
    logScales: arrays.log_scales,
    quaternions: arrays.quaternions,
    opacityLogits: arrays.opacity_logits,
    sh: arrays.sh,
  };
}

function parseVisibility(
  manifest: ViewerManifest,
  visBin: Uint8Array,
): VisibilityData {
  const section = manifest.visibility;
  if (!section.available || !section.clusters || !section.centers) {
    throw new BundleError("manifest has no visibility section");
  }
  const clusters: ClusterData[] = section.clusters.map((desc, j) => {
    const end = desc.bitset_offset + desc.bitset_length;
    if (end > visBin.byteLength) {
      throw new BundleError(`cluster ${j} bitset exceeds visibility binary`);
    }
    const bitset = visBin.slice(desc.bitset_offset, end);
    return {
      center: Float32Array.from(section.centers![j]),
      bitset,
      activeCount: popcount(bitset, manifest.count),
    };
  });
  return { k: section.k!, tCluster: section.t_cluster!, clusters };
}

/** Fetches bundle files; injectable so tests can read from disk. */
export type FileReader = (name: string) => Promise<Uint8Array>;

export async function loadBundle(readFile: FileReader): Promise<Bundle> {
  const manifestRaw = await readFile("manifest.json");
  const manifest = JSON.parse(
    new TextDecoder().decode(manifestRaw),
  ) as ViewerManifest;
  if (manifest.schema_version !== SUPPORTED_SCHEMA_VERSION) {
    throw new BundleError(
      `unsupported bundle schema version ${manifest.schema_version} ` +
        `(viewer supports ${SUPPORTED_SCHEMA_VERSION})`,
    );
  }

  const sceneBin = await readFile("scene.bin");
  await checkBuffer("scene.bin", sceneBin, manifest.scene_bin_sha256);
  for (const key of PAYLOAD_ORDER) {
    const desc = manifest.buffers[key];
    if (!desc) throw new BundleError(`manifest is missing buffer ${key}`);
    await checkBuffer(
      key,
      sceneBin.subarray(desc.offset, desc.offset + desc.length),
      desc.sha256,
    );
  }
  const scene = parseScene(manifest, sceneBin);

  let visibility: VisibilityData | null = null;
  if (manifest.visibility.available) {
    const visBin = await readFile("visibility.bin");
    await checkBuffer(
      "visibility.bin",
      visBin,
      manifest.visibility.visibility_bin_sha256!,
    );
    visibility = parseVisibility(manifest, visBin);
  }
  return { manifest, scene, visibility };
}
