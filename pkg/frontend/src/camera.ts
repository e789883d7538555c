/** Camera state, share strings, and orbit/fly navigation.
 *
 * A pose travels between the CLI and the viewer as base64 of 18
 * little-endian float64 values: rotation (row-major 9), translation (3),
 * fx, fy, cx, cy, width, height. The rotation maps world to camera
 * coordinates; the camera center is -R^T t.
 */

import type { CameraState, ManifestCamera } from "./types.js";

export class CameraStateError extends Error {}

export function encodeCameraState(cam: CameraState): string {
  const vals = new Float64Array(18);
  vals.set(cam.rotation, 0);
  vals.set(cam.translation, 9);
  vals[12] = cam.fx;
  vals[13] = cam.fy;
  vals[14] = cam.cx;
  vals[15] = cam.cy;
  vals[16] = cam.width;
  vals[17] = cam.height;
  const bytes = new Uint8Array(vals.buffer);
  let bin = "";
  for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
  return btoa(bin);
}

export function decodeCameraState(state: string): CameraState {
  let bin: string;
  try {
    bin = atob(state);
  } catch {
    throw new CameraStateError("camera state is not valid base64");
  }
  if (bin.length !== 18 * 8) {
    throw new CameraStateError(
      `camera state must hold 18 float64 values, got ${bin.length} bytes`,
    );
  }
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  const vals = new Float64Array(bytes.buffer);
  return {
    rotation: vals.slice(0, 9),
    translation: vals.slice(9, 12),
    fx: vals[12],
    fy: vals[13],
    cx: vals[14],
    cy: vals[15],
    width: Math.trunc(vals[16]),
    height: Math.trunc(vals[17]),
  };
}

export function fromManifestCamera(cam: ManifestCamera): CameraState {
  return {
    width: cam.width,
    height: cam.height,
    fx: cam.fx,
    fy: cam.fy,
    cx: cam.cx,
    cy: cam.cy,
    rotation: Float64Array.from(cam.rotation),
    translation: Float64Array.from(cam.translation),
  };
}

export function cameraCenter(cam: CameraState): Float64Array {
  // center = -R^T t
  const r = cam.rotation;
  const t = cam.translation;
  return Float64Array.from([
    -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
    -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
    -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
  ]);
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n === 0) throw new CameraStateError("degenerate view direction");
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** Rebuild a camera at `eye` looking at `target` (matches the primary
 * pipeline's look-at convention: +z forward, +y down-ish via up vector). */
export function lookAt(
  eye: number[],
  target: number[],
  base: CameraState,
  up: number[] = [0, 1, 0],
): CameraState {
  const forward = normalize([
    target[0] - eye[0],
    target[1] - eye[1],
    target[2] - eye[2],
  ]);
  let right = cross(up, forward);
  const rn = Math.hypot(right[0], right[1], right[2]);
  if (rn < 1e-12) {
    right = cross([0, 0, 1], forward);
  }
  right = normalize(right);
  const down = cross(forward, right);
  const rotation = Float64Array.from([
    right[0], right[1], right[2],
    down[0], down[1], down[2],
    forward[0], forward[1], forward[2],
  ]);
  // t = -R * eye
  const translation = Float64Array.from([
    -(rotation[0] * eye[0] + rotation[1] * eye[1] + rotation[2] * eye[2]),
    -(rotation[3] * eye[0] + rotation[4] * eye[1] + rotation[5] * eye[2]),
    -(rotation[6] * eye[0] + rotation[7] * eye[1] + rotation[8] * eye[2]),
  ]);
  return { ...base, rotation, translation };
}

export interface OrbitParams {
  target: number[];
  radius: number;
  azimuth: number; // radians around +y... (y is "up" in screen terms)
  elevation: number; // radians above the target plane
}

export function orbitCamera(params: OrbitParams, base: CameraState): CameraState {
  const { target, radius, azimuth, elevation } = params;
  const eye = [
    target[0] + radius * Math.cos(elevation) * Math.cos(azimuth),
    target[1] + radius * Math.sin(elevation),
    target[2] + radius * Math.cos(elevation) * Math.sin(azimuth),
  ];
  return lookAt(eye, target, base);
}

/** Move the camera by (dx, dy, dz) in its own frame (fly navigation). */
export function flyMove(cam: CameraState, delta: number[]): CameraState {
  // new center = center + R^T * delta; keep the rotation
  const r = cam.rotation;
  const c = cameraCenter(cam);
  const nc = [
    c[0] + r[0] * delta[0] + r[3] * delta[1] + r[6] * delta[2],
    c[1] + r[1] * delta[0] + r[4] * delta[1] + r[7] * delta[2],
    c[2] + r[2] * delta[0] + r[5] * delta[1] + r[8] * delta[2],
  ];
  const translation = Float64Array.from([
    -(r[0] * nc[0] + r[1] * nc[1] + r[2] * nc[2]),
    -(r[3] * nc[0] + r[4] * nc[1] + r[5] * nc[2]),
    -(r[6] * nc[0] + r[7] * nc[1] + r[8] * nc[2]),
  ]);
  return { ...cam, translation };
}

/** Rotate the camera in place: yaw then pitch, in its own frame. */
export function flyLook(cam: CameraState, yaw: number, pitch: number): CameraState {
  const cy = Math.cos(yaw), sy = Math.sin(yaw);
  const cp = Math.cos(pitch), sp = Math.sin(pitch);
  // yaw about the camera's +y (row 1), pitch about its +x (row 0)
  const yawM = [cy, 0, sy, 0, 1, 0, -sy, 0, cy];
  const pitchM = [1, 0, 0, 0, cp, -sp, 0, sp, cp];
  const mul = (a: number[], b: ArrayLike<number>): number[] => {
    const out = new Array<number>(9).fill(0);
    for (let i = 0; i < 3; i++)
      for (let j = 0; j < 3; j++)
        for (let k = 0; k < 3; k++) out[3 * i + j] += a[3 * i + k] * b[3 * k + j];
    return out;
  };
  const center = cameraCenter(cam);
  const rotation = Float64Array.from(mul(pitchM, mul(yawM, cam.rotation)));
  const translation = Float64Array.from([
    -(rotation[0] * center[0] + rotation[1] * center[1] + rotation[2] * center[2]),
    -(rotation[3] * center[0] + rotation[4] * center[1] + rotation[5] * center[2]),
    -(rotation[6] * center[0] + rotation[7] * center[1] + rotation[8] * center[2]),
  ]);
  return { ...cam, rotation, translation };
}
