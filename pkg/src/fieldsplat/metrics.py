"""Reference view-synthesis metrics and the benchmark harness.

PSNR uses peak 1.0 on linear float images and reports +inf for identical
inputs. SSIM follows the original formulation: Gaussian window (default
11x11, sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, computed per channel over
valid windows and averaged. ``ssim_with_grad`` additionally returns the
analytic gradient with respect to the first image, used by the splat
optimizer's loss.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .core import ImageBuffer, InvalidParameterError


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.data
    return np.asarray(img, dtype=np.float64)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    _check_dims(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB; +inf when the images are identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def ssim(a, b, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over valid windows, averaged across channels."""
    value, _ = _ssim_impl(_as_array(a), _as_array(b), win_size, sigma,
                          want_grad=False)
    return value


def ssim_with_grad(a, b, win_size: int = 11, sigma: float = 1.5):
    """(SSIM, dSSIM/da) for gradient-based optimization against target b."""
    return _ssim_impl(_as_array(a), _as_array(b), win_size, sigma,
                      want_grad=True)


def _ssim_impl(x: np.ndarray, y: np.ndarray, win_size: int, sigma: float,
               want_grad: bool):
    _check_dims(x, y)
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    h, w, channels = x.shape
    if h < win_size or w < win_size:
        raise InvalidParameterError(
            f"images must be at least {win_size}x{win_size} for SSIM")
    kernel = gaussian_window(win_size, sigma)

    total = 0.0
    grad = np.zeros_like(x) if want_grad else None
    n_windows = (h - win_size + 1) * (w - win_size + 1) * channels
    for ch in range(channels):
        xc, yc = x[..., ch], y[..., ch]
        mu_x = correlate2d(xc, kernel, mode="valid")
        mu_y = correlate2d(yc, kernel, mode="valid")
        vx = correlate2d(xc * xc, kernel, mode="valid") - mu_x ** 2
        vy = correlate2d(yc * yc, kernel, mode="valid") - mu_y ** 2
        vxy = correlate2d(xc * yc, kernel, mode="valid") - mu_x * mu_y
        a1 = 2 * mu_x * mu_y + SSIM_C1
        a2 = 2 * vxy + SSIM_C2
        b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
        b2 = vx + vy + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += float(np.sum(s))
        if want_grad:
            d = b1 * b2
            ds_da1 = a2 / d
            ds_da2 = a1 / d
            ds_db1 = -s / b1
            ds_db2 = -s / b2
            # mu_x enters a1, b1 directly and vx, vxy through the -mu terms
            g_mu = ds_da1 * 2 * mu_y + ds_db1 * 2 * mu_x \
                + ds_db2 * (-2 * mu_x) + ds_da2 * 2 * (-mu_y)
            g_vx = ds_db2          # via correlate(x^2)
            g_vxy = ds_da2 * 2     # via correlate(x*y)
            grad[..., ch] = (convolve2d(g_mu, kernel, mode="full")
                             + 2 * xc * convolve2d(g_vx, kernel, mode="full")
                             + yc * convolve2d(g_vxy, kernel, mode="full"))
    value = total / n_windows
    if want_grad:
        return value, grad.reshape(x.shape) / n_windows
    return value, None


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------

PSNR_SENTINEL = "inf"


@dataclass
class MetricReport:
    """Per-view and aggregate quality metrics plus the speed proxy."""

    per_view_psnr: list[float]
    per_view_ssim: list[float]
    primitive_count: int
    active_counts: list[int] | None
    render_seconds: list[float]
    config_fingerprint: str = ""
    labels: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.per_view_psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.per_view_ssim))

    @property
    def mean_active_count(self) -> float | None:
        if self.active_counts is None:
            return None
        return float(np.mean(self.active_counts))

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.per_view_psnr)):
            p = self.per_view_psnr[i]
            out.append(dict(
                view=self.labels[i] if self.labels else str(i),
                psnr=PSNR_SENTINEL if math.isinf(p) else f"{p:.6f}",
                ssim=f"{self.per_view_ssim[i]:.6f}",
                active=self.active_counts[i] if self.active_counts else
                self.primitive_count,
                seconds=f"{self.render_seconds[i]:.4f}",
            ))
        return out

    def to_text(self) -> str:
        lines = [f"{'view':>8} {'psnr_db':>10} {'ssim':>8} {'active':>8} {'sec':>8}"]
        for r in self.rows():
            lines.append(f"{r['view']:>8} {r['psnr']:>10} {r['ssim']:>8} "
                         f"{r['active']:>8} {r['seconds']:>8}")
        p = self.mean_psnr
        mean_p = PSNR_SENTINEL if math.isinf(p) else f"{p:.4f}"
        lines.append(f"mean psnr={mean_p} dB  ssim={self.mean_ssim:.4f}  "
                     f"primitives={self.primitive_count}")
        return "\n".join(lines)


def benchmark(scene, cameras, targets, visibility=None,
              config_fingerprint: str = "", options=None) -> MetricReport:
    """Render each camera (visibility-filtered when given) and score it.

    Wall-clock seconds are informational only; the deterministic speed
    proxy is the active primitive count per view.
    """
    from .render import rasterize, RasterizeOptions
    from .visibility import render_from_viewpoint

    options = options or RasterizeOptions()
    targets = [t if isinstance(t, ImageBuffer) else ImageBuffer(t) for t in targets]
    if len(cameras) != len(targets):
        raise InvalidParameterError("one target per camera required")
    psnrs, ssims, seconds = [], [], []
    active = [] if visibility is not None else None
    for cam, target in zip(cameras, targets):
        if (target.height, target.width) != (cam.height, cam.width):
            raise InvalidParameterError("target resolution must match camera")
        start = time.perf_counter()
        if visibility is not None:
            out, n_active, _ = render_from_viewpoint(scene, visibility, cam,
                                                     options=options)
            active.append(n_active)
        else:
            out = rasterize(scene, cam, options)
        seconds.append(time.perf_counter() - start)
        psnrs.append(psnr(out.color, target))
        win = min(11, cam.height, cam.width)
        win = win if win % 2 == 1 else win - 1
        ssims.append(ssim(out.color, target, win_size=win))
    return MetricReport(per_view_psnr=psnrs, per_view_ssim=ssims,
                        primitive_count=len(scene), active_counts=active,
                        render_seconds=seconds,
                        config_fingerprint=config_fingerprint)
