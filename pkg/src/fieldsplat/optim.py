"""Field-informed splat initialization and optimization.

Initialization lifts randomly sampled training rays to 3D via the field's
median depth and colors them with the field's zero-GLO ray colors. The
scene is then optimized against the supervision renders with an
MSE + (1 - SSIM) loss, analytic gradients from the reference rasterizer,
a first-order adaptive-moment update, and simplified densification
(clone/split by positional gradient, removal by opacity). Importance
pruning is injected through a hook at scheduled steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    EmptyInitializationError,
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    SH_C0,
    SH_COLOR_OFFSET,
    logit,
    normalize_quaternion,
)
from .field import (
    FieldRenderConfig,
    GloEmbedding,
    RadianceFieldGrid,
    SupervisionSet,
    camera_near_far,
    camera_rays,
    median_depths,
    render_rays,
)
from .metrics import mse as mse_metric, ssim_with_grad
from .render import RasterizeOptions, rasterize_backward, rasterize_cached


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class InitConfig:
    """Point-set initialization parameters."""

    n_points: int = 100_000
    initial_opacity: float = 0.1
    seed: int = 0
    retry_rounds: int = 10
    min_scale: float = 1e-6  # clamp for duplicate points

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidParameterError("n_points must be >= 1")
        if not 0.0 < self.initial_opacity < 1.0:
            raise InvalidParameterError("initial opacity must be in (0, 1)")


@dataclass
class OptimizationConfig:
    """Splat optimization schedule and learning rates.

    ``schedule_scale`` maps the reference 30k-step timeline down to desk
    scale while preserving relative event timing; derived step lists
    (pruning, SH promotion) are already scaled by the caller.
    """

    lambda_ssim: float = 0.2
    iterations: int = 2000
    lr_position: float = 1.6e-4     # multiplied by scene extent, decayed
    lr_position_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 2.5e-3 / 20.0
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    densify_interval: int = 100
    densify_start: int = 50
    densify_end: int = 0            # 0: iterations // 2
    densify_grad_threshold: float = 8.6e-5
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    opacity_reset_interval: int = 0  # 0: disabled
    prune_steps: tuple = ()          # steps at which the pruning hook runs
    sh_promote_steps: tuple = ()     # steps at which the SH degree increments
    ssim_win: int | None = None      # None: min(11, image size), odd
    seed: int = 0
    scene_extent: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise InvalidParameterError("lambda must be in [0, 1]")
        if self.densify_grad_threshold < 0 or self.min_opacity < 0:
            raise InvalidParameterError("thresholds must be >= 0")
        if list(self.prune_steps) != sorted(self.prune_steps) or \
                list(self.sh_promote_steps) != sorted(self.sh_promote_steps):
            raise InvalidParameterError("schedule steps must be sorted")


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_point_set(grid: RadianceFieldGrid, cameras, config: InitConfig,
                   render_config: FieldRenderConfig = FieldRenderConfig()):
    """Sample rays, lift to 3D at the median depth, keep the field color.

    Returns (positions (M, 3), colors (M, 3)). Rays that report no surface
    are resampled from the unused ray pool for up to ``retry_rounds``
    rounds; if nothing ever hits a surface an EmptyInitializationError is
    raised.
    """
    cameras = list(cameras)
    if not cameras:
        raise InvalidParameterError("need at least one camera")
    rng = np.random.default_rng(config.seed)

    per_cam = []
    offsets = [0]
    for cam in cameras:
        origins, dirs = camera_rays(cam)
        near, far = render_config.near, render_config.far
        if near is None or far is None:
            a_near, a_far = camera_near_far(grid, cam)
            near = near if near is not None else a_near
            far = far if far is not None else a_far
        edges = np.linspace(near, far, render_config.n_samples + 1)
        widths = np.diff(edges)
        t = edges[:-1] + 0.5 * widths
        per_cam.append((origins, dirs, t, widths))
        offsets.append(offsets[-1] + origins.shape[0])
    total = offsets[-1]

    n_target = min(config.n_points, total)
    pool = rng.permutation(total)
    cursor = 0
    points, colors = [], []
    needed = n_target
    for _ in range(config.retry_rounds + 1):
        if needed <= 0 or cursor >= total:
            break
        take = pool[cursor:cursor + needed]
        cursor += needed
        cam_of = np.searchsorted(offsets, take, side="right") - 1
        for ci in np.unique(cam_of):
            origins, dirs, t, widths = per_cam[ci]
            local = take[cam_of == ci] - offsets[ci]
            o = origins[local]
            d = dirs[local]
            tt = np.broadcast_to(t, (local.size, t.size))
            dd = np.broadcast_to(widths, (local.size, widths.size))
            depths, hit = median_depths(grid, o, d, tt, dd)
            if not hit.any():
                continue
            ray_colors, _ = render_rays(grid, o[hit], d[hit], tt[hit], dd[hit],
                                        GloEmbedding.zero())
            points.append(o[hit] + d[hit] * depths[hit][:, None])
            colors.append(ray_colors)
        needed = n_target - sum(p.shape[0] for p in points)
    if not points:
        raise EmptyInitializationError("no ray reported a surface")
    return np.concatenate(points, axis=0), np.concatenate(colors, axis=0)


def init_attributes(points: np.ndarray, colors: np.ndarray,
                    config: InitConfig = InitConfig()) -> GaussianScene:
    """Build the initial scene: isotropic scales from the exact nearest
    neighbor, SH DC inverted from the field color, higher bands zero,
    identity rotation, active SH degree 0."""
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise InvalidParameterError("need at least 2 points")
    tree = cKDTree(points)
    dists, _ = tree.query(points, k=2)
    nn = dists[:, 1]
    clamped = int(np.sum(nn < config.min_scale))
    nn = np.maximum(nn, config.min_scale)

    sh = np.zeros((n, 3, 16), dtype=np.float64)
    sh[:, :, 0] = (colors - SH_COLOR_OFFSET) / SH_C0
    quats = np.zeros((n, 4), dtype=np.float64)
    quats[:, 0] = 1.0
    return GaussianScene(
        positions=points,
        opacity_logits=np.full(n, float(logit(config.initial_opacity))),
        sh=sh,
        log_scales=np.log(nn)[:, None].repeat(3, axis=1),
        quaternions=quats,
        active_sh_degree=0,
        metadata={"source": "field_init", "clamped_scales": clamped},
    )


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _auto_win(h: int, w: int, requested: int | None) -> int:
    if requested is not None:
        return requested
    win = min(11, h, w)
    return win if win % 2 == 1 else win - 1


def compute_loss(rendered, target, lambda_ssim: float = 0.2,
                 win_size: int | None = None) -> float:
    """(1 - lambda) * MSE + lambda * (1 - SSIM); zero for identical images."""
    r = rendered.data if isinstance(rendered, ImageBuffer) else np.asarray(rendered)
    t = target.data if isinstance(target, ImageBuffer) else np.asarray(target)
    if r.shape != t.shape:
        raise InvalidParameterError("image dimensions must match")
    err = float(np.mean((r - t) ** 2))
    if lambda_ssim == 0.0:
        return err
    win = _auto_win(r.shape[0], r.shape[1], win_size)
    s, _ = ssim_with_grad(r, t, win_size=win)
    return (1.0 - lambda_ssim) * err + lambda_ssim * (1.0 - s)


def compute_loss_with_grad(rendered: np.ndarray, target: np.ndarray,
                           lambda_ssim: float, win_size: int | None = None):
    """Loss, dLoss/drendered, and the MSE/SSIM components."""
    err = float(np.mean((rendered - target) ** 2))
    grad = (1.0 - lambda_ssim) * 2.0 * (rendered - target) / rendered.size
    if lambda_ssim == 0.0:
        return err, grad, err, float("nan")
    win = _auto_win(rendered.shape[0], rendered.shape[1], win_size)
    s, ds = ssim_with_grad(rendered, target, win_size=win)
    loss = (1.0 - lambda_ssim) * err + lambda_ssim * (1.0 - s)
    grad = grad - lambda_ssim * ds
    return loss, grad, err, s


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

_PARAM_KEYS = ("positions", "sh", "log_scales", "quaternions", "opacity_logits")


class _AdamState:
    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lrs: dict,
             beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        c1 = 1 - beta1 ** self.t
        c2 = 1 - beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = beta1 * self.m[k] + (1 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1 - beta2) * g * g
            params[k] -= lrs[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + eps)

    def remap(self, keep: np.ndarray, n_new: int):
        """Keep moments for surviving primitives, zeros for appended ones."""
        for store in (self.m, self.v):
            for k, arr in store.items():
                kept = arr[keep]
                fresh = np.zeros((n_new,) + arr.shape[1:], dtype=arr.dtype)
                store[k] = np.concatenate([kept, fresh], axis=0)


def _scene_from_params(params: dict, degree: int, metadata: dict) -> GaussianScene:
    return GaussianScene(
        positions=params["positions"],
        opacity_logits=params["opacity_logits"],
        sh=params["sh"],
        log_scales=params["log_scales"],
        quaternions=params["quaternions"],
        active_sh_degree=degree,
        metadata=metadata,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def optimize(scene: GaussianScene, supervision: SupervisionSet,
             config: OptimizationConfig, prune_hook=None,
             raster_options: RasterizeOptions = RasterizeOptions()):
    """Optimize the scene against the supervision set.

    Per step: sample one supervision image uniformly, render, apply analytic
    gradients with an adaptive-moment update, and run the densification /
    pruning / SH-promotion schedule. Returns (scene, trace) where trace rows
    are dicts with step, loss, mse, ssim and primitive_count.

    ``prune_hook(scene, step) -> keep_mask`` is invoked at the configured
    pruning steps.
    """
    if len(scene) == 0:
        raise InvalidParameterError("scene must be non-empty")
    if len(supervision) == 0:
        raise InvalidParameterError("supervision set must be non-empty")

    rng = np.random.default_rng(config.seed)
    params = {
        "positions": scene.positions.copy(),
        "sh": scene.sh.copy(),
        "log_scales": scene.log_scales.copy(),
        "quaternions": scene.quaternions.copy(),
        "opacity_logits": scene.opacity_logits.copy(),
    }
    degree = scene.active_sh_degree
    metadata = dict(scene.metadata)

    if config.scene_extent is not None:
        extent = config.scene_extent
    else:
        lo, hi = scene.bounding_box
        extent = float(np.linalg.norm(hi - lo))
        if extent == 0.0:
            extent = 1.0

    adam = _AdamState(params)
    grad_accum = np.zeros(len(scene))
    grad_count = np.zeros(len(scene))
    densify_end = config.densify_end or config.iterations // 2
    half_size = max(supervision.cameras[0].width,
                    supervision.cameras[0].height) / 2.0

    trace = []
    running_best = float("inf")
    for step in range(1, config.iterations + 1):
        img_idx = int(rng.integers(len(supervision)))
        camera = supervision.cameras[img_idx]
        target = supervision.images[img_idx].data
        current = _scene_from_params(params, degree, metadata)
        out, cache = rasterize_cached(current, camera, raster_options)
        loss, grad_img, err, s = compute_loss_with_grad(
            out.color.data, target, config.lambda_ssim, config.ssim_win)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss at step {step}")
        grads = rasterize_backward(current, camera, cache, grad_img)

        frac = step / config.iterations
        lr_pos = extent * config.lr_position * \
            (config.lr_position_final / config.lr_position) ** frac
        lrs = {
            "positions": lr_pos,
            "sh": config.lr_sh_dc,  # DC rate; rest handled below
            "log_scales": config.lr_scale,
            "quaternions": config.lr_rotation,
            "opacity_logits": config.lr_opacity,
        }
        # scale down the non-DC SH gradient so one shared lr applies
        rest_ratio = config.lr_sh_rest / config.lr_sh_dc
        grads["sh"][:, :, 1:] *= rest_ratio
        adam.step(params, {k: grads[k] for k in _PARAM_KEYS}, lrs)
        params["quaternions"] = normalize_quaternion(params["quaternions"])

        grad_accum += grads["mean2d_grad_norm"] * half_size
        grad_count += grads["touched"]

        trace.append(dict(step=step, loss=loss, mse=err, ssim=s,
                          primitive_count=params["positions"].shape[0]))
        running_best = min(running_best, loss)

        in_window = config.densify_start <= step <= densify_end
        if in_window and config.densify_interval > 0 and \
                step % config.densify_interval == 0:
            params, keep, n_new = _densify_and_cull(params, grad_accum,
                                                    grad_count, config,
                                                    extent, rng)
            adam.remap(keep, n_new)
            n_total = params["positions"].shape[0]
            grad_accum = np.zeros(n_total)
            grad_count = np.zeros(n_total)

        if config.opacity_reset_interval and \
                step % config.opacity_reset_interval == 0:
            cap = float(logit(0.01))
            params["opacity_logits"] = np.minimum(params["opacity_logits"], cap)

        if prune_hook is not None and step in config.prune_steps:
            current = _scene_from_params(params, degree, metadata)
            keep_mask = np.asarray(prune_hook(current, step), dtype=bool)
            if keep_mask.shape != (len(current),):
                raise InvalidParameterError("prune hook mask length mismatch")
            for k in _PARAM_KEYS:
                params[k] = params[k][keep_mask]
            adam.remap(keep_mask, 0)
            grad_accum = grad_accum[keep_mask]
            grad_count = grad_count[keep_mask]

        if step in config.sh_promote_steps and degree < 3:
            degree += 1

    metadata["optimized_steps"] = metadata.get("optimized_steps", 0) + \
        config.iterations
    return _scene_from_params(params, degree, metadata), trace


def _densify_and_cull(params: dict, grad_accum, grad_count, config,
                      extent: float, rng: np.random.Generator):
    """Clone small / split large high-gradient primitives, drop transparent
    ones. Returns (params, keep mask over the old array, appended count)."""
    n = params["positions"].shape[0]
    avg = np.divide(grad_accum, grad_count,
                    out=np.zeros(n), where=grad_count > 0)
    hot = avg > config.densify_grad_threshold
    big = np.exp(params["log_scales"]).max(axis=1) > config.percent_dense * extent
    split_mask = hot & big
    clone_mask = hot & ~big

    appended = {k: [] for k in _PARAM_KEYS}

    def append_rows(mask, positions, log_scales):
        appended["positions"].append(positions)
        appended["log_scales"].append(log_scales)
        appended["sh"].append(params["sh"][mask])
        appended["quaternions"].append(params["quaternions"][mask])
        appended["opacity_logits"].append(params["opacity_logits"][mask])

    if clone_mask.any():
        append_rows(clone_mask, params["positions"][clone_mask],
                    params["log_scales"][clone_mask])

    if split_mask.any():
        from .core import quat_to_rotmat
        k = int(split_mask.sum())
        scales = np.exp(params["log_scales"][split_mask])
        rots = quat_to_rotmat(params["quaternions"][split_mask])
        for _ in range(2):
            offsets = rng.standard_normal((k, 3)) * scales
            child_pos = params["positions"][split_mask] + \
                np.einsum("kij,kj->ki", rots, offsets)
            child_ls = np.log(scales / 1.6)
            append_rows(split_mask, child_pos, child_ls)

    keep = ~split_mask  # split parents removed, clones keep their parent
    keep &= _sigmoid(params["opacity_logits"]) >= config.min_opacity

    out = {}
    for k in _PARAM_KEYS:
        parts = [params[k][keep]] + appended[k]
        out[k] = np.concatenate(parts, axis=0) if parts else params[k][keep]
    n_new = out["positions"].shape[0] - int(keep.sum())
    return out, keep, n_new
