/** Shapes of the manifest written by `fieldsplat export-viewer`. */

export interface BufferDescriptor {
  offset: number;
  length: number;
  sha256: string;
}

export interface ManifestCamera {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  rotation: number[]; // row-major 3x3
  translation: number[];
}

export interface ClusterDescriptor {
  center_offset: number;
  bitset_offset: number;
  bitset_length: number;
}

export interface VisibilitySection {
  available: boolean;
  k?: number;
  t_cluster?: number;
  centers?: number[][];
  clusters?: ClusterDescriptor[];
  visibility_bin_sha256?: string;
}

export interface ViewerManifest {
  schema_version: number;
  count: number;
  active_sh_degree: number;
  bbox_min: number[];
  bbox_max: number[];
  buffers: Record<string, BufferDescriptor>;
  scene_bin_sha256: string;
  cameras: ManifestCamera[];
  visibility: VisibilitySection;
}

/** Scene arrays sliced out of scene.bin (float32, row-major). */
export interface SceneData {
  count: number;
  activeShDegree: number;
  positions: Float32Array; // (n, 3)
  logScales: Float32Array; // (n, 3)
  quaternions: Float32Array; // (n, 4) wxyz
  opacityLogits: Float32Array; // (n,)
  sh: Float32Array; // (n, 48) = (3 channels, 16 bands)
}

export interface ClusterData {
  center: Float32Array; // (3,)
  bitset: Uint8Array; // little-endian bit order
  activeCount: number;
}

export interface VisibilityData {
  k: number;
  tCluster: number;
  clusters: ClusterData[];
}

export interface Bundle {
  manifest: ViewerManifest;
  scene: SceneData;
  visibility: VisibilityData | null;
}

export interface CameraState {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  rotation: Float64Array; // row-major 3x3, world-to-camera
  translation: Float64Array; // (3,)
}

export interface FrameStats {
  activeCount: number;
  totalCount: number;
  clusterIndex: number; // -1 when filtering is off or unavailable
  compositedSplats: number;
}

export interface Frame {
  width: number;
  height: number;
  /** RGB, row-major, values in [0, 1]. */
  pixels: Float64Array;
  stats: FrameStats;
}
