"""Dense-grid radiance field: the trainable volumetric prior.

A voxel grid of density and color with trilinear interpolation stands in
for a heavyweight field backbone. It is rendered by quadrature along rays,
trained by gradient descent on a photometric loss with per-image GLO color
embeddings, and queried for median depth during splat initialization.

The field is deliberately view-independent: view-dependent effects at test
time come from the splat scene's SH coefficients, not from the prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import ImageBuffer, InvalidParameterError, PinholeCamera, sigmoid


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    # inverse of log(1 + e^x); written as y + log(1 - e^-y) to stay
    # finite for large y where expm1 would overflow
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):  # y == 0 maps to -inf, as it should
        return y + np.log(-np.expm1(-y))


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class RadianceFieldGrid:
    """Axis-aligned node grid of raw density/color parameters.

    Exposed density is softplus(raw); exposed color is sigmoid(raw).
    Queries outside the bounding box return zero density.
    """

    bbox_min: np.ndarray      # (3,)
    bbox_max: np.ndarray      # (3,)
    density_raw: np.ndarray   # (nx, ny, nz)
    color_raw: np.ndarray     # (nx, ny, nz, 3)

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        if np.any(self.bbox_max <= self.bbox_min):
            raise InvalidParameterError("bounding box must have positive extent")
        self.density_raw = np.asarray(self.density_raw, dtype=np.float64)
        self.color_raw = np.asarray(self.color_raw, dtype=np.float64)
        if self.density_raw.ndim != 3 or any(r < 2 for r in self.density_raw.shape):
            raise InvalidParameterError("grid resolution must be >= 2 per axis")
        if self.color_raw.shape != self.density_raw.shape + (3,):
            raise InvalidParameterError("color grid must match density grid shape")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.density_raw.shape

    @staticmethod
    def create(bbox_min, bbox_max, resolution, init_density: float = 0.01,
               init_color: float = 0.5) -> "RadianceFieldGrid":
        """Uniform grid with small positive density and flat gray color."""
        if np.isscalar(resolution):
            resolution = (resolution, resolution, resolution)
        res = tuple(int(r) for r in resolution)
        d0 = softplus_inv(init_density)
        c0 = float(np.log(init_color) - np.log1p(-init_color))
        return RadianceFieldGrid(
            bbox_min=bbox_min, bbox_max=bbox_max,
            density_raw=np.full(res, d0, dtype=np.float64),
            color_raw=np.full(res + (3,), c0, dtype=np.float64),
        )

    def copy(self) -> "RadianceFieldGrid":
        return RadianceFieldGrid(self.bbox_min.copy(), self.bbox_max.copy(),
                                 self.density_raw.copy(), self.color_raw.copy())

    # -- trilinear sampling ------------------------------------------------

    def _locate(self, points: np.ndarray):
        """Corner indices, fractional weights, and inside-box mask."""
        pts = np.asarray(points, dtype=np.float64)
        res = np.array(self.resolution, dtype=np.float64)
        u = (pts - self.bbox_min) / (self.bbox_max - self.bbox_min) * (res - 1)
        inside = np.all((pts >= self.bbox_min) & (pts <= self.bbox_max), axis=-1)
        u = np.clip(u, 0.0, res - 1)
        i0 = np.minimum(u.astype(np.int64), (res - 2).astype(np.int64))
        frac = u - i0
        return i0, frac, inside

    def _gather(self, values: np.ndarray, i0: np.ndarray, frac: np.ndarray) -> np.ndarray:
        ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
        fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
        extra = (None,) * (values.ndim - 3)
        out = 0.0
        for dx in (0, 1):
            wx = fx if dx else (1.0 - fx)
            for dy in (0, 1):
                wy = fy if dy else (1.0 - fy)
                for dz in (0, 1):
                    wz = fz if dz else (1.0 - fz)
                    w = (wx * wy * wz)[(...,) + extra]
                    out = out + w * values[ix + dx, iy + dy, iz + dz]
        return out

    def _scatter(self, grad_values: np.ndarray, i0: np.ndarray, frac: np.ndarray,
                 upstream: np.ndarray) -> None:
        ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
        fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
        extra = (None,) * (grad_values.ndim - 3)
        for dx in (0, 1):
            wx = fx if dx else (1.0 - fx)
            for dy in (0, 1):
                wy = fy if dy else (1.0 - fy)
                for dz in (0, 1):
                    wz = fz if dz else (1.0 - fz)
                    w = (wx * wy * wz)[(...,) + extra]
                    np.add.at(grad_values, (ix + dx, iy + dy, iz + dz), w * upstream)

    def query(self, points: np.ndarray):
        """Exposed (density, color) at world points; zero density outside."""
        i0, frac, inside = self._locate(points)
        sigma = softplus(self._gather(self.density_raw, i0, frac))
        color = sigmoid(self._gather(self.color_raw, i0, frac))
        sigma = np.where(inside, sigma, 0.0)
        return sigma, color


@dataclass(frozen=True)
class GloEmbedding:
    """Per-image affine color transform on the composited ray color.

    Stored as (log-gain, bias) so the zero embedding is exactly the
    identity: c' = clamp(exp(log_gain) * c + bias, 0, 1).
    """

    log_gain: np.ndarray  # (3,)
    bias: np.ndarray      # (3,)

    def __post_init__(self):
        object.__setattr__(self, "log_gain",
                           np.asarray(self.log_gain, dtype=np.float64).reshape(3))
        object.__setattr__(self, "bias",
                           np.asarray(self.bias, dtype=np.float64).reshape(3))

    @property
    def gain(self) -> np.ndarray:
        return np.exp(self.log_gain)

    def apply(self, colors: np.ndarray) -> np.ndarray:
        return np.clip(self.gain * colors + self.bias, 0.0, 1.0)

    @staticmethod
    def zero() -> "GloEmbedding":
        return GloEmbedding(np.zeros(3), np.zeros(3))


@dataclass
class RaySample:
    """A ray with its quadrature samples; sigma/alpha/tau filled on evaluation."""

    origin: np.ndarray      # (3,)
    direction: np.ndarray   # (3,), unit
    t: np.ndarray           # (S,) distances along the ray
    deltas: np.ndarray      # (S,) quadrature bin widths
    near: float
    far: float
    sigma: np.ndarray | None = None
    alpha: np.ndarray | None = None
    tau: np.ndarray | None = None  # (S+1,), tau[0] = 1, tau[S] = final

    @property
    def positions(self) -> np.ndarray:
        return self.origin[None, :] + self.direction[None, :] * self.t[:, None]


@dataclass(frozen=True)
class SupervisionSet:
    """Zero-GLO field renders of the training cameras: the splat targets."""

    cameras: tuple
    images: tuple

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise InvalidParameterError("one image per camera required")
        for cam, img in zip(self.cameras, self.images):
            if (img.height, img.width) != (cam.height, cam.width):
                raise InvalidParameterError("image resolution must match its camera")

    def __len__(self) -> int:
        return len(self.cameras)


# ---------------------------------------------------------------------------
# Ray setup and rendering
# ---------------------------------------------------------------------------

def make_ray(camera: PinholeCamera, pixel_x: int, pixel_y: int, n_samples: int,
             near: float, far: float, rng: np.random.Generator | None = None) -> RaySample:
    """Ray through a pixel center with stratified samples in [near, far].

    Deterministic bin midpoints unless ``rng`` is given, in which case
    samples are jittered uniformly within their bins.
    """
    if not (0 <= pixel_x < camera.width and 0 <= pixel_y < camera.height):
        raise InvalidParameterError("pixel out of bounds")
    if not 0 < near < far:
        raise InvalidParameterError("need 0 < near < far")
    if n_samples < 2:
        raise InvalidParameterError("need at least 2 samples")
    edges = np.linspace(near, far, n_samples + 1)
    widths = np.diff(edges)
    if rng is None:
        t = edges[:-1] + 0.5 * widths
    else:
        t = edges[:-1] + rng.uniform(size=n_samples) * widths
    direction = camera.pixel_directions(np.float64(pixel_x), np.float64(pixel_y))
    return RaySample(origin=camera.center, direction=direction,
                     t=t, deltas=widths, near=near, far=far)


def _composite(sigma: np.ndarray, deltas: np.ndarray):
    """Front-to-back quadrature weights. Shapes (..., S)."""
    alpha = -np.expm1(-sigma * deltas)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    tau_before = np.concatenate(
        [np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    weights = tau_before * alpha
    final_tau = trans[..., -1]
    return alpha, tau_before, weights, final_tau


def render_rays(grid: RadianceFieldGrid, origins: np.ndarray, dirs: np.ndarray,
                t: np.ndarray, deltas: np.ndarray, glo: GloEmbedding,
                want_cache: bool = False):
    """Volume-render a batch of rays.

    origins/dirs are (R, 3); t/deltas are (R, S). Returns (colors (R, 3),
    final_tau (R,)) and, with ``want_cache``, the intermediates needed by
    ``render_rays_backward``.
    """
    positions = origins[:, None, :] + dirs[:, None, :] * t[..., None]
    i0, frac, inside = grid._locate(positions)
    sigma_raw = grid._gather(grid.density_raw, i0, frac)
    color_raw = grid._gather(grid.color_raw, i0, frac)
    sigma = np.where(inside, softplus(sigma_raw), 0.0)
    color = sigmoid(color_raw)
    alpha, tau_before, weights, final_tau = _composite(sigma, deltas)
    composited = np.einsum("rs,rsc->rc", weights, color)
    out = glo.apply(composited)
    if not want_cache:
        return out, final_tau
    cache = dict(positions=positions, i0=i0, frac=frac, inside=inside,
                 sigma_raw=sigma_raw, sigma=sigma, color=color, alpha=alpha,
                 tau_before=tau_before, weights=weights, composited=composited,
                 deltas=deltas, out=out)
    return out, final_tau, cache


def render_rays_backward(grid: RadianceFieldGrid, cache: dict, glo: GloEmbedding,
                         grad_out: np.ndarray):
    """Analytic gradients of the rendered colors.

    ``grad_out`` is dL/d(output color), (R, 3). Returns a dict with
    ``density_raw`` and ``color_raw`` grids plus ``log_gain``/``bias``
    vectors for the GLO embedding. Accumulation order is fixed, so results
    are reproducible.
    """
    gain = glo.gain
    pre_clip = gain * cache["composited"] + glo.bias
    in_clip = ((pre_clip > 0.0) & (pre_clip < 1.0)).astype(np.float64)
    g_pre = grad_out * in_clip
    grad_log_gain = np.sum(g_pre * cache["composited"] * gain, axis=0)
    grad_bias = np.sum(g_pre, axis=0)
    g_comp = g_pre * gain  # (R, 3)

    weights = cache["weights"]
    color = cache["color"]
    alpha = cache["alpha"]
    tau_before = cache["tau_before"]

    # color path
    g_color = weights[..., None] * g_comp[:, None, :]            # (R, S, 3)
    g_color_raw = g_color * color * (1.0 - color)

    # alpha path: d(composited)/d(alpha_j) through its own weight and the
    # transmittance of every later sample.
    e = np.einsum("rsc,rc->rs", color, g_comp)                   # (R, S)
    we = weights * e
    total = np.sum(we, axis=-1, keepdims=True)
    suffix = total - np.cumsum(we, axis=-1)                      # sum over k > j
    one_minus = 1.0 - alpha
    g_alpha = tau_before * e - np.divide(
        suffix, one_minus, out=np.zeros_like(suffix), where=one_minus > 0)
    g_sigma = g_alpha * cache["deltas"] * one_minus
    g_sigma_raw = np.where(cache["inside"],
                           g_sigma * sigmoid(cache["sigma_raw"]), 0.0)

    grad_density = np.zeros_like(grid.density_raw)
    grad_color = np.zeros_like(grid.color_raw)
    grid._scatter(grad_density, cache["i0"], cache["frac"], g_sigma_raw)
    grid._scatter(grad_color, cache["i0"], cache["frac"], g_color_raw)
    return dict(density_raw=grad_density, color_raw=grad_color,
                log_gain=grad_log_gain, bias=grad_bias)


def volume_render(grid: RadianceFieldGrid, ray: RaySample,
                  glo: GloEmbedding | None = None):
    """Render one sampled ray; fills the ray's sigma/alpha/tau fields.

    Returns (color, final transmittance). Empty space composites to black
    with tau = 1; no background term is added.
    """
    glo = glo or GloEmbedding.zero()
    out, final_tau = render_rays(grid, ray.origin[None], ray.direction[None],
                                 ray.t[None], ray.deltas[None], glo)
    sigma, _ = grid.query(ray.positions)
    alpha, tau_before, _, _ = _composite(sigma[None], ray.deltas[None])
    ray.sigma = sigma
    ray.alpha = alpha[0]
    ray.tau = np.concatenate([tau_before[0], [float(final_tau[0])]])
    return out[0], float(final_tau[0])


def render_median_depth(grid: RadianceFieldGrid, ray: RaySample) -> float | None:
    """Distance to the sample where transmittance first crosses 0.5.

    Returns None ("no surface") when the ray's final transmittance is
    still >= 0.5.
    """
    sigma, _ = grid.query(ray.positions)
    alpha, tau_before, _, final_tau = _composite(sigma[None], ray.deltas[None])
    if final_tau[0] >= 0.5:
        return None
    tau_after = tau_before[0] * (1.0 - alpha[0])
    idx = int(np.argmax(tau_after < 0.5))
    return float(ray.t[idx])


def median_depths(grid: RadianceFieldGrid, origins: np.ndarray, dirs: np.ndarray,
                  t: np.ndarray, deltas: np.ndarray):
    """Batched median depth; returns (depths (R,), has_surface (R,) bool)."""
    positions = origins[:, None, :] + dirs[:, None, :] * t[..., None]
    sigma, _ = grid.query(positions)
    alpha, tau_before, _, final_tau = _composite(sigma, deltas)
    tau_after = tau_before * (1.0 - alpha)
    has_surface = final_tau < 0.5
    idx = np.argmax(tau_after < 0.5, axis=-1)
    depths = np.take_along_axis(t, idx[:, None], axis=-1)[:, 0]
    return depths, has_surface


# ---------------------------------------------------------------------------
# Image rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldRenderConfig:
    n_samples: int = 96
    near: float | None = None  # None: derived from the grid bounding box
    far: float | None = None
    chunk: int = 8192


def camera_near_far(grid: RadianceFieldGrid, camera: PinholeCamera):
    """Conservative near/far from the camera to the grid's bounding box."""
    lo, hi = grid.bbox_min, grid.bbox_max
    center = camera.center
    corners = np.array(np.meshgrid([lo[0], hi[0]], [lo[1], hi[1]],
                                   [lo[2], hi[2]], indexing="ij")).reshape(3, -1).T
    dmax = np.max(np.linalg.norm(corners - center, axis=1))
    nearest = np.linalg.norm(np.maximum(lo - center, 0) + np.maximum(center - hi, 0))
    near = max(0.05, 0.8 * nearest) if nearest > 0 else 0.05
    return near, 1.05 * dmax


def camera_rays(camera: PinholeCamera):
    """Origins/directions for every pixel, row-major. Returns (origins, dirs)."""
    ys, xs = np.meshgrid(np.arange(camera.height), np.arange(camera.width),
                         indexing="ij")
    dirs = camera.pixel_directions(xs.ravel().astype(np.float64),
                                   ys.ravel().astype(np.float64))
    origins = np.broadcast_to(camera.center, dirs.shape)
    return origins, dirs


def render_image(grid: RadianceFieldGrid, camera: PinholeCamera,
                 glo: GloEmbedding | None = None,
                 config: FieldRenderConfig = FieldRenderConfig()) -> ImageBuffer:
    """Per-pixel volume render with deterministic midpoint samples."""
    glo = glo or GloEmbedding.zero()
    near, far = config.near, config.far
    if near is None or far is None:
        auto_near, auto_far = camera_near_far(grid, camera)
        near = near if near is not None else auto_near
        far = far if far is not None else auto_far
    edges = np.linspace(near, far, config.n_samples + 1)
    widths = np.diff(edges)
    t = edges[:-1] + 0.5 * widths
    origins, dirs = camera_rays(camera)
    n = origins.shape[0]
    out = np.empty((n, 3), dtype=np.float64)
    for start in range(0, n, config.chunk):
        sl = slice(start, min(start + config.chunk, n))
        r = sl.stop - sl.start
        colors, _ = render_rays(grid, origins[sl], dirs[sl],
                                np.broadcast_to(t, (r, t.size)),
                                np.broadcast_to(widths, (r, t.size)), glo)
        out[sl] = colors
    return ImageBuffer(out.reshape(camera.height, camera.width, 3))


def render_supervision_set(grid: RadianceFieldGrid, cameras,
                           config: FieldRenderConfig = FieldRenderConfig()) -> SupervisionSet:
    """One zero-GLO render per camera; the splat optimizer's target set."""
    zero = GloEmbedding.zero()
    images = tuple(render_image(grid, cam, zero, config) for cam in cameras)
    return SupervisionSet(cameras=tuple(cameras), images=images)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class FieldTrainConfig:
    resolution: int | tuple = 32
    iterations: int = 2000
    batch_rays: int = 4096
    n_samples: int = 64
    learning_rate: float = 0.05
    glo_learning_rate: float = 0.01
    glo_weight_decay: float = 1e-4
    optimizer: str = "adam"  # "adam" | "sgd"
    init_density: float = 0.01
    near: float | None = None
    far: float | None = None
    seed: int = 0
    eval_interval: int = 200
    bbox_min: np.ndarray | None = None
    bbox_max: np.ndarray | None = None


class _Adam:
    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _scene_bbox_from_cameras(cameras, margin: float = 1.0):
    centers = np.array([c.center for c in cameras])
    lo = centers.min(axis=0) - margin
    hi = centers.max(axis=0) + margin
    return lo, hi


def train_field(images, cameras, config: FieldTrainConfig):
    """Fit the grid and per-image GLO embeddings to posed images.

    Returns (grid, list of GloEmbedding, loss trace rows). Each trace row
    is a dict with step, loss (nan for the pre-training row) and val_loss.
    """
    images = list(images)
    cameras = list(cameras)
    if len(images) == 0:
        raise InvalidParameterError("empty image set")
    if len(images) != len(cameras):
        raise InvalidParameterError("camera/image count mismatch")
    if len(images) < 2:
        raise InvalidParameterError("need at least 2 posed images")
    for img, cam in zip(images, cameras):
        if (img.height, img.width) != (cam.height, cam.width):
            raise InvalidParameterError("image resolution must match its camera")

    if config.bbox_min is not None and config.bbox_max is not None:
        lo, hi = np.asarray(config.bbox_min, float), np.asarray(config.bbox_max, float)
    else:
        lo, hi = _scene_bbox_from_cameras(cameras)
    grid = RadianceFieldGrid.create(lo, hi, config.resolution,
                                    init_density=config.init_density)
    glo_params = np.zeros((len(images), 6), dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    per_image = []
    for img, cam in zip(images, cameras):
        origins, dirs = camera_rays(cam)
        near, far = config.near, config.far
        if near is None or far is None:
            a_near, a_far = camera_near_far(grid, cam)
            near = near if near is not None else a_near
            far = far if far is not None else a_far
        per_image.append((origins, dirs, img.data.reshape(-1, 3), near, far))

    # fixed validation rays: a deterministic pixel stride over every image
    val = []
    for origins, dirs, targets, near, far in per_image:
        stride = max(1, origins.shape[0] // 256)
        idx = np.arange(0, origins.shape[0], stride)
        val.append((origins[idx], dirs[idx], targets[idx], near, far))

    def sample_t(near, far, n_rays, jitter):
        edges = np.linspace(near, far, config.n_samples + 1)
        widths = np.diff(edges)
        if jitter is None:
            t = edges[:-1] + 0.5 * widths
            t = np.broadcast_to(t, (n_rays, t.size)).copy()
        else:
            u = jitter.uniform(size=(n_rays, config.n_samples))
            t = edges[:-1][None] + u * widths[None]
        d = np.broadcast_to(widths, (n_rays, widths.size)).copy()
        return t, d

    def validation_loss():
        total, count = 0.0, 0
        for origins, dirs, targets, near, far in val:
            t, d = sample_t(near, far, origins.shape[0], None)
            colors, _ = render_rays(grid, origins, dirs, t, d, GloEmbedding.zero())
            total += float(np.sum((colors - targets) ** 2))
            count += targets.size
        return total / count

    if config.optimizer == "adam":
        opt_d = _Adam(grid.density_raw.shape, config.learning_rate)
        opt_c = _Adam(grid.color_raw.shape, config.learning_rate)
        opt_g = _Adam(glo_params.shape, config.glo_learning_rate)
    elif config.optimizer != "sgd":
        raise InvalidParameterError(f"unknown optimizer {config.optimizer!r}")

    trace = [dict(step=0, loss=float("nan"), val_loss=validation_loss())]
    for it in range(1, config.iterations + 1):
        img_idx = int(rng.integers(len(images)))
        origins, dirs, targets, near, far = per_image[img_idx]
        ray_idx = rng.integers(origins.shape[0], size=config.batch_rays)
        t, d = sample_t(near, far, config.batch_rays, rng)
        glo = GloEmbedding(glo_params[img_idx, :3], glo_params[img_idx, 3:])
        colors, _, cache = render_rays(grid, origins[ray_idx], dirs[ray_idx],
                                       t, d, glo, want_cache=True)
        diff = colors - targets[ray_idx]
        loss = float(np.mean(diff ** 2))
        grad_out = 2.0 * diff / diff.size
        grads = render_rays_backward(grid, cache, glo, grad_out)
        glo_grad = np.concatenate([grads["log_gain"], grads["bias"]])
        glo_grad += config.glo_weight_decay * glo_params[img_idx]

        if config.optimizer == "adam":
            opt_d.step(grid.density_raw, grads["density_raw"])
            opt_c.step(grid.color_raw, grads["color_raw"])
            # per-image Adam state, indexed by the sampled image
            opt_g.t += 1
            opt_g.m[img_idx] = opt_g.b1 * opt_g.m[img_idx] + (1 - opt_g.b1) * glo_grad
            opt_g.v[img_idx] = opt_g.b2 * opt_g.v[img_idx] + (1 - opt_g.b2) * glo_grad ** 2
            mhat = opt_g.m[img_idx] / (1 - opt_g.b1 ** opt_g.t)
            vhat = opt_g.v[img_idx] / (1 - opt_g.b2 ** opt_g.t)
            glo_params[img_idx] -= opt_g.lr * mhat / (np.sqrt(vhat) + opt_g.eps)
        else:
            grid.density_raw -= config.learning_rate * grads["density_raw"]
            grid.color_raw -= config.learning_rate * grads["color_raw"]
            glo_params[img_idx] -= config.glo_learning_rate * glo_grad

        # pin the embeddings to zero mean across images: the shared exposure
        # component must live in the grid, not the embeddings, so that
        # identity-embedding renders reproduce the average exposure instead
        # of an arbitrary gauge
        glo_params -= glo_params.mean(axis=0, keepdims=True)

        if it % config.eval_interval == 0 or it == config.iterations:
            trace.append(dict(step=it, loss=loss, val_loss=validation_loss()))
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at iteration {it}")

    glos = [GloEmbedding(glo_params[i, :3], glo_params[i, 3:])
            for i in range(len(images))]
    return grid, glos, trace
