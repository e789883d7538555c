/** CPU splat renderer: a scalar port of the reference rasterizer.
 *
 * Projects each Gaussian through the pinhole camera with the standard EWA
 * linearization, sorts by depth (ties by primitive index), then
 * alpha-composites front to back per pixel. The depth sort is exact per
 * frame here; at interactive sizes this is still cheap because each splat
 * only touches its 3-sigma screen bounds.
 */

import { bitsetGet } from "./bundle.js";
import { cameraCenter } from "./camera.js";
import type {
  CameraState,
  Frame,
  SceneData,
  VisibilityData,
} from "./types.js";

export const ALPHA_MAX = 0.99;
export const ALPHA_CUT = 1.0 / 255.0;
export const TAU_STOP = 1e-4;
export const NEAR_LIMIT = 0.01;
export const LOWPASS = 0.3;
export const SIGMA_BOUND = 3.0;

const SH_C0 = 0.28209479177387814;
const SH_C1 = 0.4886025119029199;
const SH_C2 = [
  1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
  -1.0925484305920792, 0.5462742152960396,
];
const SH_C3 = [
  -0.5900435899266435, 2.890611442640554, -0.4570457994644658,
  0.3731763325901154, -0.4570457994644658, 1.445305721320277,
  -0.5900435899266435,
];
const SH_BANDS_FOR_DEGREE = [1, 4, 9, 16];
const SH_COLOR_OFFSET = 0.5;

function sigmoid(x: number): number {
  return x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x));
}

function shBasis(x: number, y: number, z: number, degree: number): number[] {
  const out = new Array<number>(SH_BANDS_FOR_DEGREE[degree]);
  out[0] = SH_C0;
  if (degree >= 1) {
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
  }
  if (degree >= 2) {
    const xx = x * x, yy = y * y, zz = z * z;
    out[4] = SH_C2[0] * x * y;
    out[5] = SH_C2[1] * y * z;
    out[6] = SH_C2[2] * (2 * zz - xx - yy);
    out[7] = SH_C2[3] * x * z;
    out[8] = SH_C2[4] * (xx - yy);
    if (degree >= 3) {
      out[9] = SH_C3[0] * y * (3 * xx - yy);
      out[10] = SH_C3[1] * x * y * z;
      out[11] = SH_C3[2] * y * (4 * zz - xx - yy);
      out[12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy);
      out[13] = SH_C3[4] * x * (4 * zz - xx - yy);
      out[14] = SH_C3[5] * z * (xx - yy);
      out[15] = SH_C3[6] * x * (xx - 3 * yy);
    }
  }
  return out;
}

interface Projected {
  index: number;
  depth: number;
  mx: number;
  my: number;
  invA: number;
  invB: number;
  invC: number;
  opacity: number;
  r: number;
  g: number;
  b: number;
  x0: number;
  x1: number;
  y0: number;
  y1: number;
}

/** Nearest cluster by squared distance to the camera center; ties resolve
 * to the lowest index, matching the primary implementation. */
export function nearestCluster(
  visibility: VisibilityData,
  center: ArrayLike<number>,
): number {
  let best = 0;
  let bestD = Infinity;
  for (let j = 0; j < visibility.clusters.length; j++) {
    const c = visibility.clusters[j].center;
    const dx = c[0] - center[0];
    const dy = c[1] - center[1];
    const dz = c[2] - center[2];
    const d = dx * dx + dy * dy + dz * dz;
    if (d < bestD) {
      bestD = d;
      best = j;
    }
  }
  return best;
}

function projectScene(
  scene: SceneData,
  cam: CameraState,
  gate: ((i: number) => boolean) | null,
): Projected[] {
  const r = cam.rotation;
  const t = cam.translation;
  const center = cameraCenter(cam);
  const degree = scene.activeShDegree;
  const nBands = SH_BANDS_FOR_DEGREE[degree];
  const out: Projected[] = [];

  for (let i = 0; i < scene.count; i++) {
    if (gate && !gate(i)) continue;
    const px = scene.positions[3 * i];
    const py = scene.positions[3 * i + 1];
    const pz = scene.positions[3 * i + 2];

    const tx = r[0] * px + r[1] * py + r[2] * pz + t[0];
    const ty = r[3] * px + r[4] * py + r[5] * pz + t[1];
    const tz = r[6] * px + r[7] * py + r[8] * pz + t[2];
    if (tz <= NEAR_LIMIT) continue;

    const mx = (cam.fx * tx) / tz + cam.cx;
    const my = (cam.fy * ty) / tz + cam.cy;

    // rotation from the (normalized) quaternion
    let qw = scene.quaternions[4 * i];
    let qx = scene.quaternions[4 * i + 1];
    let qy = scene.quaternions[4 * i + 2];
    let qz = scene.quaternions[4 * i + 3];
    const qn = Math.hypot(qw, qx, qy, qz);
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const R = [
      1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
      2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
      2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
    ];
    const s0 = Math.exp(scene.logScales[3 * i]);
    const s1 = Math.exp(scene.logScales[3 * i + 1]);
    const s2 = Math.exp(scene.logScales[3 * i + 2]);
    // L = R diag(s); cov3d = L L^T
    const L = [
      R[0] * s0, R[1] * s1, R[2] * s2,
      R[3] * s0, R[4] * s1, R[5] * s2,
      R[6] * s0, R[7] * s1, R[8] * s2,
    ];
    const cov = new Array<number>(9);
    for (let a = 0; a < 3; a++) {
      for (let b = 0; b < 3; b++) {
        cov[3 * a + b] =
          L[3 * a] * L[3 * b] + L[3 * a + 1] * L[3 * b + 1] + L[3 * a + 2] * L[3 * b + 2];
      }
    }

    // A = J * R_cam, J the pinhole Jacobian at (tx, ty, tz)
    const j00 = cam.fx / tz;
    const j02 = (-cam.fx * tx) / (tz * tz);
    const j11 = cam.fy / tz;
    const j12 = (-cam.fy * ty) / (tz * tz);
    const A = [
      j00 * r[0] + j02 * r[6], j00 * r[1] + j02 * r[7], j00 * r[2] + j02 * r[8],
      j11 * r[3] + j12 * r[6], j11 * r[4] + j12 * r[7], j11 * r[5] + j12 * r[8],
    ];
    // cov2d = A cov A^T + lowpass I
    const c00 = A[0] * (cov[0] * A[0] + cov[1] * A[1] + cov[2] * A[2]) +
      A[1] * (cov[3] * A[0] + cov[4] * A[1] + cov[5] * A[2]) +
      A[2] * (cov[6] * A[0] + cov[7] * A[1] + cov[8] * A[2]);
    const c01 = A[0] * (cov[0] * A[3] + cov[1] * A[4] + cov[2] * A[5]) +
      A[1] * (cov[3] * A[3] + cov[4] * A[4] + cov[5] * A[5]) +
      A[2] * (cov[6] * A[3] + cov[7] * A[4] + cov[8] * A[5]);
    const c11 = A[3] * (cov[0] * A[3] + cov[1] * A[4] + cov[2] * A[5]) +
      A[4] * (cov[3] * A[3] + cov[4] * A[4] + cov[5] * A[5]) +
      A[5] * (cov[6] * A[3] + cov[7] * A[4] + cov[8] * A[5]);
    const a = c00 + LOWPASS;
    const b = c01;
    const c = c11 + LOWPASS;
    const det = a * c - b * b;

    const lamMax = 0.5 * (a + c) + Math.sqrt(Math.max(0.25 * (a - c) ** 2 + b * b, 0));
    const radius = SIGMA_BOUND * Math.sqrt(Math.max(lamMax, 0));
    const x0 = Math.min(Math.max(Math.floor(mx - radius), 0), cam.width);
    const x1 = Math.min(Math.max(Math.ceil(mx + radius) + 1, 0), cam.width);
    const y0 = Math.min(Math.max(Math.floor(my - radius), 0), cam.height);
    const y1 = Math.min(Math.max(Math.ceil(my + radius) + 1, 0), cam.height);
    if (x1 <= x0 || y1 <= y0) continue;

    // view-evaluated color
    let dx = px - center[0];
    let dy = py - center[1];
    let dz = pz - center[2];
    const dn = Math.hypot(dx, dy, dz) || 1;
    dx /= dn; dy /= dn; dz /= dn;
    const basis = shBasis(dx, dy, dz, degree);
    const rgb = [0, 0, 0];
    for (let ch = 0; ch < 3; ch++) {
      let v = 0;
      for (let bIdx = 0; bIdx < nBands; bIdx++) {
        v += scene.sh[48 * i + 16 * ch + bIdx] * basis[bIdx];
      }
      rgb[ch] = Math.min(Math.max(SH_COLOR_OFFSET + v, 0), 1);
    }

    out.push({
      index: i,
      depth: tz,
      mx,
      my,
      invA: c / det,
      invB: -b / det,
      invC: a / det,
      opacity: sigmoid(scene.opacityLogits[i]),
      r: rgb[0],
      g: rgb[1],
      b: rgb[2],
      x0,
      x1,
      y0,
      y1,
    });
  }
  out.sort((p, q) => (p.depth - q.depth) || (p.index - q.index));
  return out;
}

export interface RenderOptions {
  filtering: boolean;
}

export function renderFrame(
  scene: SceneData,
  visibility: VisibilityData | null,
  cam: CameraState,
  options: RenderOptions,
): Frame {
  let gate: ((i: number) => boolean) | null = null;
  let clusterIndex = -1;
  let activeCount = scene.count;
  if (options.filtering && visibility) {
    clusterIndex = nearestCluster(visibility, cameraCenter(cam));
    const cluster = visibility.clusters[clusterIndex];
    gate = (i) => bitsetGet(cluster.bitset, i);
    activeCount = cluster.activeCount;
  }

  const projected = projectScene(scene, cam, gate);
  const w = cam.width;
  const h = cam.height;
  const pixels = new Float64Array(w * h * 3);
  const tau = new Float64Array(w * h).fill(1);
  let composited = 0;

  for (const g of projected) {
    for (let y = g.y0; y < g.y1; y++) {
      const dy = y + 0.5 - g.my;
      for (let x = g.x0; x < g.x1; x++) {
        const p = y * w + x;
        const tp = tau[p];
        if (tp < TAU_STOP) continue;
        const dx = x + 0.5 - g.mx;
        const q = g.invA * dx * dx + 2 * g.invB * dy * dx + g.invC * dy * dy;
        const alpha = Math.min(g.opacity * Math.exp(-0.5 * q), ALPHA_MAX);
        if (alpha < ALPHA_CUT) continue;
        const weight = alpha * tp;
        pixels[3 * p] += g.r * weight;
        pixels[3 * p + 1] += g.g * weight;
        pixels[3 * p + 2] += g.b * weight;
        tau[p] = tp * (1 - alpha);
        composited++;
      }
    }
  }

  return {
    width: w,
    height: h,
    pixels,
    stats: {
      activeCount,
      totalCount: scene.count,
      clusterIndex,
      compositedSplats: composited,
    },
  };
}

/** Peak signal-to-noise ratio between two frames (used by the parity tests
 * and the stats overlay's capture comparison). */
export function framePsnr(a: Float64Array, b: Float64Array): number {
  if (a.length !== b.length) throw new Error("frame size mismatch");
  let sum = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    sum += d * d;
  }
  if (sum === 0) return Infinity;
  return 10 * Math.log10(a.length / sum);
}
