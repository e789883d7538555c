"""Deterministic reference rasterizer for Gaussian scenes.

Projects 3D Gaussians to screen-space 2D Gaussians, alpha-composites them
front to back in a global depth sort (ties broken by primitive index), and
optionally records each primitive's maximum ray contribution alpha*tau for
pruning and visibility baking.

The backward pass (`rasterize_backward`) produces analytic gradients with
respect to every primitive parameter; correctness is pinned against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    InvalidSceneError,
    PinholeCamera,
    SH_BANDS_FOR_DEGREE,
    SH_COLOR_OFFSET,
    covariance_from_scale_rot,
    eval_sh,
    normalize_quaternion_backward,
    quat_to_rotmat,
    quat_to_rotmat_backward,
    sh_basis,
    sh_basis_grad,
)


@dataclass(frozen=True)
class RasterizeOptions:
    """Standard splatting constants; the defaults are the usual 3DGS ones."""

    alpha_max: float = 0.99
    alpha_cut: float = 1.0 / 255.0
    tau_stop: float = 1e-4
    near_limit: float = 0.01
    lowpass: float = 0.3       # px^2 added to the 2D covariance diagonal
    sigma_bound: float = 3.0   # screen-bounds cull radius in sigmas


@dataclass(frozen=True)
class ProjectedGaussian:
    """A primitive after projection to one camera's image plane."""

    index: int
    mean2d: np.ndarray    # (2,) pixels
    cov2d: np.ndarray     # (2, 2) pixels^2, low-pass floor applied
    depth: float          # camera-space z
    color: np.ndarray     # (3,) view-evaluated
    opacity: float
    bbox: tuple[int, int, int, int]  # x0, x1, y0, y1 (half-open pixel range)


@dataclass
class RenderOutput:
    """Rendered color plus per-pixel accumulated alpha and composite count."""

    color: ImageBuffer
    alpha: np.ndarray  # (H, W)
    count: np.ndarray  # (H, W) int, primitives composited per pixel


class ContributionAccumulator:
    """Per-Gaussian running max of alpha*tau over all processed rays.

    max-merge is commutative and associative, so accumulation order (and
    any parallel merge) cannot change the result.
    """

    def __init__(self, n: int):
        self.values = np.zeros(n, dtype=np.float64)

    def __len__(self) -> int:
        return self.values.shape[0]

    def update(self, other: np.ndarray) -> None:
        np.maximum(self.values, other, out=self.values)

    def merge(self, other: "ContributionAccumulator") -> None:
        self.update(other.values)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def _project_arrays(scene: GaussianScene, camera: PinholeCamera,
                    options: RasterizeOptions):
    """Vectorized projection of the whole scene. Returns a dict of arrays."""
    n = len(scene)
    rot = camera.rotation
    t = scene.positions @ rot.T + camera.translation        # (N, 3)
    valid = t[:, 2] > options.near_limit

    tz = np.where(valid, t[:, 2], 1.0)
    mx = camera.fx * t[:, 0] / tz + camera.cx
    my = camera.fy * t[:, 1] / tz + camera.cy

    # 3D covariance
    rotmats = quat_to_rotmat(scene.quaternions) if n else np.zeros((0, 3, 3))
    scales = scene.scales
    lmat = rotmats * scales[:, None, :]
    cov3d = lmat @ np.swapaxes(lmat, 1, 2)                  # (N, 3, 3)

    # Jacobian of the pinhole projection at t, rows (d u/d t, d v/d t)
    jac = np.zeros((n, 2, 3), dtype=np.float64)
    jac[:, 0, 0] = camera.fx / tz
    jac[:, 0, 2] = -camera.fx * t[:, 0] / tz ** 2
    jac[:, 1, 1] = camera.fy / tz
    jac[:, 1, 2] = -camera.fy * t[:, 1] / tz ** 2
    amat = jac @ rot                                        # (N, 2, 3)
    cov2d = amat @ cov3d @ np.swapaxes(amat, 1, 2)
    a = cov2d[:, 0, 0] + options.lowpass
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + options.lowpass

    det = a * c - b * b
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det

    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = options.sigma_bound * np.sqrt(np.maximum(lam_max, 0.0))

    x0 = np.clip(np.floor(mx - radius).astype(np.int64), 0, camera.width)
    x1 = np.clip(np.ceil(mx + radius).astype(np.int64) + 1, 0, camera.width)
    y0 = np.clip(np.floor(my - radius).astype(np.int64), 0, camera.height)
    y1 = np.clip(np.ceil(my + radius).astype(np.int64) + 1, 0, camera.height)
    valid = valid & (x1 > x0) & (y1 > y0)

    # view-direction color
    center = camera.center
    vvec = scene.positions - center
    vnorm = np.linalg.norm(vvec, axis=1)
    vnorm_safe = np.where(vnorm > 0, vnorm, 1.0)
    dirs = vvec / vnorm_safe[:, None]
    nb = SH_BANDS_FOR_DEGREE[scene.active_sh_degree]
    basis = sh_basis(dirs, scene.active_sh_degree) if n else np.zeros((0, nb))
    sh_val = np.einsum("ncb,nb->nc", scene.sh[:, :, :nb], basis)
    pre_color = SH_COLOR_OFFSET + sh_val
    color = np.clip(pre_color, 0.0, 1.0)

    return dict(
        t=t, valid=valid, mx=mx, my=my, depth=t[:, 2],
        cov3d=cov3d, rotmats=rotmats, scales=scales, amat=amat,
        a=a, b=b, c=c, inv_a=inv_a, inv_b=inv_b, inv_c=inv_c,
        radius=radius, x0=x0, x1=x1, y0=y0, y1=y1,
        dirs=dirs, vnorm=vnorm_safe, basis=basis, pre_color=pre_color,
        color=color, opacity=scene.opacities,
    )


def project_gaussian(primitive, camera: PinholeCamera,
                     options: RasterizeOptions = RasterizeOptions(),
                     active_sh_degree: int = 3) -> ProjectedGaussian | None:
    """Project a single primitive; returns None when culled.

    Culling happens behind the near limit or when the 3-sigma screen bounds
    miss the image entirely.
    """
    scene = GaussianScene(
        positions=primitive.position[None],
        opacity_logits=np.array([primitive.opacity_logit]),
        sh=primitive.sh[None],
        log_scales=primitive.log_scale[None],
        quaternions=primitive.quaternion[None],
        active_sh_degree=active_sh_degree,
    )
    proj = _project_arrays(scene, camera, options)
    if not proj["valid"][0]:
        return None
    cov2d = np.array([[proj["a"][0], proj["b"][0]],
                      [proj["b"][0], proj["c"][0]]])
    return ProjectedGaussian(
        index=0,
        mean2d=np.array([proj["mx"][0], proj["my"][0]]),
        cov2d=cov2d,
        depth=float(proj["depth"][0]),
        color=proj["color"][0],
        opacity=float(proj["opacity"][0]),
        bbox=(int(proj["x0"][0]), int(proj["x1"][0]),
              int(proj["y0"][0]), int(proj["y1"][0])),
    )


def project_scene(scene: GaussianScene, camera: PinholeCamera,
                  options: RasterizeOptions = RasterizeOptions()):
    """List of ProjectedGaussian (culled ones omitted), plus the raw arrays."""
    proj = _project_arrays(scene, camera, options)
    out = []
    for i in np.nonzero(proj["valid"])[0]:
        out.append(ProjectedGaussian(
            index=int(i),
            mean2d=np.array([proj["mx"][i], proj["my"][i]]),
            cov2d=np.array([[proj["a"][i], proj["b"][i]],
                            [proj["b"][i], proj["c"][i]]]),
            depth=float(proj["depth"][i]),
            color=proj["color"][i],
            opacity=float(proj["opacity"][i]),
            bbox=(int(proj["x0"][i]), int(proj["x1"][i]),
                  int(proj["y0"][i]), int(proj["y1"][i])),
        ))
    return out, proj


# ---------------------------------------------------------------------------
# Forward rasterization
# ---------------------------------------------------------------------------

def _composite_order(proj) -> np.ndarray:
    """Front-to-back order over valid primitives: depth, then index."""
    idx = np.nonzero(proj["valid"])[0]
    order = np.lexsort((idx, proj["depth"][idx]))
    return idx[order]


def _forward(scene: GaussianScene, camera: PinholeCamera,
             options: RasterizeOptions, active: np.ndarray | None,
             accumulator: ContributionAccumulator | None,
             want_cache: bool):
    if not scene.is_finite():
        raise InvalidSceneError("scene contains non-finite parameters")
    if active is not None:
        active = np.asarray(active, dtype=bool)
        if active.shape != (len(scene),):
            raise InvalidParameterError("indicator list length must equal scene size")

    h, w = camera.height, camera.width
    img = np.zeros((h, w, 3), dtype=np.float64)
    tau = np.ones((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)

    proj = _project_arrays(scene, camera, options)
    order = _composite_order(proj)
    if active is not None:
        order = order[active[order]]

    xs = np.arange(w, dtype=np.float64) + 0.5
    ys = np.arange(h, dtype=np.float64) + 0.5

    saved = []
    for gi in order:
        x0, x1, y0, y1 = proj["x0"][gi], proj["x1"][gi], proj["y0"][gi], proj["y1"][gi]
        dx = xs[x0:x1] - proj["mx"][gi]                  # (bw,)
        dy = ys[y0:y1] - proj["my"][gi]                  # (bh,)
        ia, ib, ic = proj["inv_a"][gi], proj["inv_b"][gi], proj["inv_c"][gi]
        q = (ia * dx * dx)[None, :] + (2.0 * ib) * dy[:, None] * dx[None, :] \
            + (ic * dy * dy)[:, None]
        o = proj["opacity"][gi]
        raw_alpha = o * np.exp(-0.5 * q)
        alpha = np.minimum(raw_alpha, options.alpha_max)
        tau_region = tau[y0:y1, x0:x1]
        m = (alpha >= options.alpha_cut) & (tau_region >= options.tau_stop)
        if not m.any():
            # fully skipped: contribution stays 0, nothing to composite
            if want_cache:
                saved.append((int(gi), y0, y1, x0, x1, None))
            continue
        weight = np.where(m, alpha * tau_region, 0.0)
        col = proj["color"][gi]
        region = img[y0:y1, x0:x1]
        region[..., 0] += col[0] * weight
        region[..., 1] += col[1] * weight
        region[..., 2] += col[2] * weight
        if accumulator is not None:
            accumulator.values[gi] = max(accumulator.values[gi],
                                         float(weight.max()))
        if want_cache:
            saved.append((int(gi), y0, y1, x0, x1,
                          dict(alpha=alpha, m=m, tau_before=tau_region.copy(),
                               clamped=raw_alpha > options.alpha_max)))
        count[y0:y1, x0:x1] += m
        tau[y0:y1, x0:x1] = np.where(m, tau_region * (1.0 - alpha), tau_region)

    output = RenderOutput(color=ImageBuffer(img), alpha=1.0 - tau, count=count)
    if want_cache:
        cache = dict(proj=proj, saved=saved, options=options)
        return output, cache
    return output


def rasterize(scene: GaussianScene, camera: PinholeCamera,
              options: RasterizeOptions = RasterizeOptions()) -> RenderOutput:
    """Render the scene over a black background, front to back."""
    return _forward(scene, camera, options, None, None, False)


def rasterize_with_contributions(scene: GaussianScene, camera: PinholeCamera,
                                 accumulator: ContributionAccumulator,
                                 options: RasterizeOptions = RasterizeOptions()
                                 ) -> RenderOutput:
    """Identical image to ``rasterize``; additionally max-merges each
    composited primitive's alpha*tau into the accumulator.

    Primitives skipped by the alpha cut or transmittance stop contribute 0,
    consistent with what the renderer actually composites.
    """
    if len(accumulator) != len(scene):
        raise InvalidParameterError("accumulator length must equal scene size")
    return _forward(scene, camera, options, None, accumulator, False)


def rasterize_filtered(scene: GaussianScene, camera: PinholeCamera,
                       active: np.ndarray,
                       options: RasterizeOptions = RasterizeOptions()) -> RenderOutput:
    """Render only the primitives marked active (indicator over scene order)."""
    return _forward(scene, camera, options, active, None, False)


def rasterize_cached(scene: GaussianScene, camera: PinholeCamera,
                     options: RasterizeOptions = RasterizeOptions()):
    """Forward render keeping the intermediates needed for the backward pass."""
    return _forward(scene, camera, options, None, None, True)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def rasterize_backward(scene: GaussianScene, camera: PinholeCamera,
                       cache: dict, grad_image: np.ndarray):
    """Analytic gradients of a scalar loss through the rendered image.

    ``grad_image`` is dL/d(color image), (H, W, 3). Returns a dict with
    gradients w.r.t. positions, sh, log_scales, quaternions (through the
    unit normalization) and opacity_logits, plus the per-primitive screen
    gradient norm ``mean2d_grad_norm`` and ``touched`` flags used by
    densification.
    """
    proj = cache["proj"]
    options = cache["options"]
    n = len(scene)
    h, w = camera.height, camera.width
    xs = np.arange(w, dtype=np.float64) + 0.5
    ys = np.arange(h, dtype=np.float64) + 0.5

    g_color = np.zeros((n, 3))
    g_mean = np.zeros((n, 2))
    g_inv = np.zeros((n, 3))        # d/d(ia, ib, ic) with the b-slot doubled
    g_opacity = np.zeros(n)
    touched = np.zeros(n, dtype=bool)

    suffix = np.zeros((h, w), dtype=np.float64)
    for gi, y0, y1, x0, x1, data in reversed(cache["saved"]):
        if data is None:
            continue
        alpha = data["alpha"]
        m = data["m"]
        tau_b = data["tau_before"]
        live = m & ~data["clamped"]

        dx = xs[x0:x1] - proj["mx"][gi]
        dy = ys[y0:y1] - proj["my"][gi]
        gpix = grad_image[y0:y1, x0:x1]                     # (bh, bw, 3)
        col = proj["color"][gi]
        cdot = col[0] * gpix[..., 0] + col[1] * gpix[..., 1] + col[2] * gpix[..., 2]
        weight = np.where(m, alpha * tau_b, 0.0)

        g_color[gi] = np.einsum("yx,yxc->c", weight, gpix)
        one_minus = 1.0 - alpha
        d_alpha = np.where(m, tau_b * cdot - np.divide(
            suffix[y0:y1, x0:x1], one_minus,
            out=np.zeros_like(alpha), where=one_minus > 0), 0.0)
        d_alpha = np.where(live, d_alpha, 0.0)

        o = proj["opacity"][gi]
        g_opacity[gi] = np.sum(d_alpha * alpha) / o
        dq = -0.5 * alpha * d_alpha
        ia, ib, ic = proj["inv_a"][gi], proj["inv_b"][gi], proj["inv_c"][gi]
        ddx = dq * (2.0 * ia * dx[None, :] + 2.0 * ib * dy[:, None])
        ddy = dq * (2.0 * ib * dx[None, :] + 2.0 * ic * dy[:, None])
        g_mean[gi, 0] = -np.sum(ddx)
        g_mean[gi, 1] = -np.sum(ddy)
        g_inv[gi, 0] = np.sum(dq * (dx * dx)[None, :])
        g_inv[gi, 1] = np.sum(dq * 2.0 * dy[:, None] * dx[None, :])
        g_inv[gi, 2] = np.sum(dq * (dy * dy)[:, None])
        touched[gi] = True

        suffix[y0:y1, x0:x1] += weight * cdot

    grads = _chain_to_parameters(scene, camera, proj, touched,
                                 g_color, g_mean, g_inv, g_opacity)
    grads["mean2d_grad_norm"] = np.where(
        touched, np.linalg.norm(g_mean, axis=1), 0.0)
    grads["touched"] = touched
    return grads


def _chain_to_parameters(scene, camera, proj, touched,
                         g_color, g_mean, g_inv, g_opacity):
    """Chain screen-space gradients back to primitive parameters."""
    n = len(scene)
    g_pos = np.zeros((n, 3))
    g_sh = np.zeros((n, 3, 16))
    g_logscale = np.zeros((n, 3))
    g_quat = np.zeros((n, 4))
    g_logit = np.zeros(n)
    idx = np.nonzero(touched)[0]
    if idx.size == 0:
        return dict(positions=g_pos, sh=g_sh, log_scales=g_logscale,
                    quaternions=g_quat, opacity_logits=g_logit)

    rot = camera.rotation
    fx, fy = camera.fx, camera.fy
    t = proj["t"][idx]
    tz = t[:, 2]

    # opacity logit
    o = proj["opacity"][idx]
    g_logit[idx] = g_opacity[idx] * o * (1.0 - o)

    # inverse-covariance -> 2D covariance
    inv = np.zeros((idx.size, 2, 2))
    inv[:, 0, 0] = proj["inv_a"][idx]
    inv[:, 0, 1] = inv[:, 1, 0] = proj["inv_b"][idx]
    inv[:, 1, 1] = proj["inv_c"][idx]
    gi_mat = np.zeros((idx.size, 2, 2))
    gi_mat[:, 0, 0] = g_inv[idx, 0]
    gi_mat[:, 0, 1] = gi_mat[:, 1, 0] = 0.5 * g_inv[idx, 1]
    gi_mat[:, 1, 1] = g_inv[idx, 2]
    g_cov2d = -inv @ gi_mat @ inv                        # (k, 2, 2) symmetric

    # 2D covariance -> 3D covariance and projection matrix A = J R
    amat = proj["amat"][idx]                             # (k, 2, 3)
    cov3d = proj["cov3d"][idx]
    g_amat = 2.0 * g_cov2d @ amat @ cov3d                # (k, 2, 3)
    g_cov3d = np.swapaxes(amat, 1, 2) @ g_cov2d @ amat   # (k, 3, 3)

    # A = J R: gradient to the Jacobian, then to camera-space position
    g_jac = g_amat @ rot.T                               # (k, 2, 3)
    g_t = np.zeros((idx.size, 3))
    g_t[:, 0] += g_jac[:, 0, 2] * (-fx / tz ** 2)
    g_t[:, 1] += g_jac[:, 1, 2] * (-fy / tz ** 2)
    g_t[:, 2] += (g_jac[:, 0, 0] * (-fx / tz ** 2)
                  + g_jac[:, 1, 1] * (-fy / tz ** 2)
                  + g_jac[:, 0, 2] * (2.0 * fx * t[:, 0] / tz ** 3)
                  + g_jac[:, 1, 2] * (2.0 * fy * t[:, 1] / tz ** 3))

    # screen mean -> camera-space position
    gm = g_mean[idx]
    g_t[:, 0] += gm[:, 0] * fx / tz
    g_t[:, 1] += gm[:, 1] * fy / tz
    g_t[:, 2] += -(gm[:, 0] * fx * t[:, 0] + gm[:, 1] * fy * t[:, 1]) / tz ** 2

    g_pos_cam = g_t @ rot                                # dL/dp from t = R p + tr

    # 3D covariance -> log-scale and quaternion
    rotmats = proj["rotmats"][idx]
    scales = proj["scales"][idx]
    inner = np.swapaxes(rotmats, 1, 2) @ g_cov3d @ rotmats
    diag = np.einsum("kii->ki", inner)
    g_logscale[idx] = 2.0 * scales ** 2 * diag
    g_rotm = 2.0 * g_cov3d @ rotmats * (scales ** 2)[:, None, :]
    g_qunit = quat_to_rotmat_backward(scene.quaternions[idx], g_rotm)
    g_quat[idx] = normalize_quaternion_backward(scene.quaternions[idx], g_qunit)

    # color -> SH coefficients and view direction
    pre = proj["pre_color"][idx]
    in_clip = ((pre > 0.0) & (pre < 1.0)).astype(np.float64)
    g_val = g_color[idx] * in_clip                       # (k, 3)
    nb = proj["basis"].shape[-1]
    basis = proj["basis"][idx]
    g_sh[idx, :, :nb] += g_val[:, :, None] * basis[:, None, :]
    degree = scene.active_sh_degree
    g_dir = np.zeros((idx.size, 3))
    if degree > 0:
        dbasis = sh_basis_grad(proj["dirs"][idx], degree)   # (k, nb, 3)
        coeff = np.einsum("kc,kcb->kb", g_val, scene.sh[idx][:, :, :nb])
        g_dir = np.einsum("kb,kbd->kd", coeff, dbasis)
        dirs = proj["dirs"][idx]
        vnorm = proj["vnorm"][idx]
        g_pos_dir = (g_dir - dirs * np.sum(dirs * g_dir, axis=1, keepdims=True)) \
            / vnorm[:, None]
    else:
        g_pos_dir = 0.0

    g_pos[idx] = g_pos_cam + g_pos_dir
    return dict(positions=g_pos, sh=g_sh, log_scales=g_logscale,
                quaternions=g_quat, opacity_logits=g_logit)
