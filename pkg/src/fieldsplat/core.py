"""Core domain types and shared math.

Cameras, image buffers, Gaussian primitives/scenes, quaternion and
covariance helpers, and real spherical-harmonics evaluation. Everything
here is an immutable value type once constructed; the optimizer works on
its own writable copies and builds fresh scenes.

All color math is linear RGB in [0, 1]; 8-bit I/O goes through the sRGB
transfer function (see ``srgb_encode`` / ``srgb_decode``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class InvalidParameterError(ValueError):
    """A primitive or camera parameter violates its domain."""


class InvalidSceneError(ValueError):
    """A scene contains non-finite or otherwise unusable parameters."""


class StaleTableError(RuntimeError):
    """A per-Gaussian table was computed against a different scene revision."""


class EmptyInitializationError(RuntimeError):
    """Point-set initialization produced no surface points."""


class FileFormatError(IOError):
    """A persisted file has the wrong magic or an unsupported version."""


# ---------------------------------------------------------------------------
# Color transfer
# ---------------------------------------------------------------------------

def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear [0,1] -> sRGB [0,1]."""
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(linear, 1.0 / 2.4) - 0.055,
    )


def srgb_decode(srgb: np.ndarray) -> np.ndarray:
    """sRGB [0,1] -> linear [0,1]."""
    srgb = np.clip(srgb, 0.0, 1.0)
    return np.where(
        srgb <= 0.04045,
        srgb / 12.92,
        np.power((srgb + 0.055) / 1.055, 2.4),
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Image buffer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageBuffer:
    """Full-precision 3-channel linear-color image with values in [0, 1]."""

    data: np.ndarray  # (H, W, 3) float64, read-only

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise InvalidParameterError(f"image must be (H, W, 3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidParameterError("image contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_srgb_u8(self) -> np.ndarray:
        return np.round(srgb_encode(self.data) * 255.0).astype(np.uint8)

    @staticmethod
    def from_srgb_u8(u8: np.ndarray) -> "ImageBuffer":
        return ImageBuffer(srgb_decode(u8.astype(np.float64) / 255.0))


# ---------------------------------------------------------------------------
# Quaternions and covariance
# ---------------------------------------------------------------------------

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Return q / |q|; idempotent. Raises on (near-)zero quaternions."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise InvalidParameterError("zero quaternion has no direction")
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (w, x, y, z) -> rotation matrix/matrices.

    Accepts (..., 4) and returns (..., 3, 3). The input is normalized; a
    zero quaternion raises rather than defaulting to identity so optimizer
    bugs surface early.
    """
    q = normalize_quaternion(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def quat_to_rotmat_backward(q_unit: np.ndarray, grad_rot: np.ndarray) -> np.ndarray:
    """Gradient of ``quat_to_rotmat`` w.r.t. the *unit* quaternion.

    ``grad_rot`` is dL/dR with shape (..., 3, 3); returns dL/dq_unit with
    shape (..., 4). Chain through the normalization separately (see
    ``normalize_quaternion_backward``).
    """
    w, x, y, z = (q_unit[..., i] for i in range(4))
    g = grad_rot
    dw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2]
              + z * g[..., 1, 0] - x * g[..., 1, 2]
              - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2]
              + y * g[..., 1, 0] - 2 * x * g[..., 1, 1] - w * g[..., 1, 2]
              + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    dy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2]
              - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    dz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
              + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    return np.stack([dw, dx, dy, dz], axis=-1)


def normalize_quaternion_backward(q_raw: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Gradient of q/|q| w.r.t. the raw (unnormalized) quaternion."""
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    unit = q_raw / norm
    dot = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - unit * dot) / norm


def covariance_from_scale_rot(s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """3D covariance R diag(s^2) R^T from positive scales and a unit quaternion.

    Computed as L L^T with L = R diag(s), which is exactly symmetric in
    floating point and positive semi-definite by construction.
    """
    s = np.asarray(s, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(s <= 0):
        raise InvalidParameterError(f"scales must be positive, got {s}")
    norm = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise InvalidParameterError("quaternion must be unit within 1e-6")
    rot = quat_to_rotmat(q)
    lmat = rot * s[..., None, :]
    return lmat @ np.swapaxes(lmat, -1, -2)


# ---------------------------------------------------------------------------
# Real spherical harmonics (degree 0..3, 16 bands)
# ---------------------------------------------------------------------------

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

SH_BANDS_FOR_DEGREE = (1, 4, 9, 16)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values Y_i(d) for unit directions.

    ``dirs`` is (..., 3); returns (..., n_bands) with n_bands in {1,4,9,16}.
    """
    if not 0 <= degree <= 3:
        raise InvalidParameterError(f"SH degree must be in 0..3, got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    n = SH_BANDS_FOR_DEGREE[degree]
    out = np.empty(dirs.shape[:-1] + (n,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """dY_i/dd for unit directions; returns (..., n_bands, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = SH_BANDS_FOR_DEGREE[degree]
    g = np.zeros(dirs.shape[:-1] + (n, 3), dtype=np.float64)
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = SH_C2[2] * (-2 * x)
        g[..., 6, 1] = SH_C2[2] * (-2 * y)
        g[..., 6, 2] = SH_C2[2] * (4 * z)
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = SH_C2[4] * (2 * x)
        g[..., 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[..., 9, 0] = SH_C3[0] * 6 * x * y
        g[..., 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        g[..., 11, 2] = SH_C3[2] * (8 * y * z)
        g[..., 12, 0] = SH_C3[3] * (-6 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        g[..., 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        g[..., 13, 1] = SH_C3[4] * (-2 * x * y)
        g[..., 13, 2] = SH_C3[4] * (8 * x * z)
        g[..., 14, 0] = SH_C3[5] * (2 * x * z)
        g[..., 14, 1] = SH_C3[5] * (-2 * y * z)
        g[..., 14, 2] = SH_C3[5] * (xx - yy)
        g[..., 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        g[..., 15, 1] = SH_C3[6] * (-6 * x * y)
    return g


SH_COLOR_OFFSET = 0.5


def eval_sh(sh: np.ndarray, dirs: np.ndarray, degree: int, raw: bool = False) -> np.ndarray:
    """Evaluate view-dependent color from SH coefficients.

    ``sh`` is (..., 3, 16), ``dirs`` (..., 3) unit vectors. Returns
    (..., 3). The default convention is color = clip(0.5 + sum k_i Y_i, 0, 1);
    with ``raw=True`` the bare linear combination is returned (no offset,
    no clamp), which is linear in the coefficients.
    """
    sh = np.asarray(sh, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    norm = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise InvalidParameterError("directions must be unit within 1e-6")
    basis = sh_basis(dirs, degree)
    n = basis.shape[-1]
    val = np.einsum("...cb,...b->...c", sh[..., :n], basis)
    if raw:
        return val
    return np.clip(SH_COLOR_OFFSET + val, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole camera; +z forward, x right, y down in camera space.

    ``rotation``/``translation`` form the world-to-camera rigid transform:
    p_cam = R p_world + t.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray   # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise InvalidParameterError("rotation must be 3x3")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise InvalidParameterError("rotation must be orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise InvalidParameterError("rotation must have det +1 within 1e-9")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(tr))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def pixel_directions(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Unit world-space ray directions through pixel centers (px+0.5, py+0.5)."""
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        d = np.stack([
            (px + 0.5 - self.cx) / self.fx,
            (py + 0.5 - self.cy) / self.fy,
            np.ones_like(px, dtype=np.float64),
        ], axis=-1)
        d = d @ self.rotation  # R^T d
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def world_to_camera(camera: PinholeCamera, point: np.ndarray) -> np.ndarray:
    """Apply the camera's rigid world-to-camera transform."""
    return camera.world_to_camera(point)


def look_at_camera(eye, target, up=(0.0, 0.0, 1.0), *, width: int, height: int,
                   fov_deg: float = 60.0) -> PinholeCamera:
    """Build a camera at ``eye`` looking at ``target``.

    ``fov_deg`` is the horizontal field of view; fx = fy.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise InvalidParameterError("eye and target coincide")
    forward = forward / fn
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        upv = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, upv)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=0)
    # Re-orthonormalize so the validation gate (1e-9) always passes.
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    tr = -rot @ eye
    f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
    return PinholeCamera(width=width, height=height, fx=f, fy=f,
                         cx=width / 2.0, cy=height / 2.0,
                         rotation=rot, translation=tr)


# ---------------------------------------------------------------------------
# Gaussian primitives and scenes
# ---------------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One splat, stored with unconstrained opacity/scale parameterization."""

    position: np.ndarray       # (3,)
    opacity_logit: float
    sh: np.ndarray             # (3, 16)
    log_scale: np.ndarray      # (3,)
    quaternion: np.ndarray     # (4,), unit (w, x, y, z)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        sh = np.asarray(self.sh, dtype=np.float64).reshape(3, 16)
        ls = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        q = normalize_quaternion(np.asarray(self.quaternion, dtype=np.float64).reshape(4))
        for name, arr in (("position", pos), ("sh", sh), ("log_scale", ls)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"non-finite {name}")
        if not np.isfinite(self.opacity_logit):
            raise InvalidParameterError("non-finite opacity logit")
        object.__setattr__(self, "position", _frozen(pos))
        object.__setattr__(self, "sh", _frozen(sh))
        object.__setattr__(self, "log_scale", _frozen(ls))
        object.__setattr__(self, "quaternion", _frozen(q))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_scale_rot(self.scale, self.quaternion)


_generation_counter = itertools.count(1)


@dataclass(frozen=True)
class GaussianScene:
    """An ordered set of Gaussian primitives as struct-of-arrays.

    ``generation`` tags the scene revision so per-Gaussian tables (importance,
    visibility) can detect staleness.
    """

    positions: np.ndarray       # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray              # (N, 3, 16)
    log_scales: np.ndarray      # (N, 3)
    quaternions: np.ndarray     # (N, 4)
    active_sh_degree: int = 0
    metadata: dict = field(default_factory=dict)
    generation: int = field(default_factory=lambda: next(_generation_counter))

    def __post_init__(self):
        n = np.asarray(self.positions).shape[0]
        pos = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        op = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64).reshape(n, 3, 16)
        ls = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        q = np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        if n > 0:
            q = normalize_quaternion(q)
        if not 0 <= self.active_sh_degree <= 3:
            raise InvalidParameterError("active SH degree must be in 0..3")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "opacity_logits", _frozen(op))
        object.__setattr__(self, "sh", _frozen(sh))
        object.__setattr__(self, "log_scales", _frozen(ls))
        object.__setattr__(self, "quaternions", _frozen(q))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.positions, self.opacity_logits, self.sh,
                    self.log_scales, self.quaternions))

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i],
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i],
            log_scale=self.log_scales[i],
            quaternion=self.quaternions[i],
        )

    def subset(self, mask_or_indices) -> "GaussianScene":
        """New scene keeping the selected primitives, order preserved."""
        idx = np.asarray(mask_or_indices)
        return GaussianScene(
            positions=self.positions[idx],
            opacity_logits=self.opacity_logits[idx],
            sh=self.sh[idx],
            log_scales=self.log_scales[idx],
            quaternions=self.quaternions[idx],
            active_sh_degree=self.active_sh_degree,
            metadata=dict(self.metadata),
        )

    @staticmethod
    def from_primitives(primitives, active_sh_degree: int = 0,
                        metadata: dict | None = None) -> "GaussianScene":
        prims = list(primitives)
        n = len(prims)
        return GaussianScene(
            positions=np.array([p.position for p in prims]).reshape(n, 3),
            opacity_logits=np.array([p.opacity_logit for p in prims]).reshape(n),
            sh=np.array([p.sh for p in prims]).reshape(n, 3, 16),
            log_scales=np.array([p.log_scale for p in prims]).reshape(n, 3),
            quaternions=np.array([p.quaternion for p in prims]).reshape(n, 4),
            active_sh_degree=active_sh_degree,
            metadata=metadata or {},
        )
