"""Independent reference implementations used to pin the library's output.

The compositing oracle walks every pixel with plain per-pixel scalar
arithmetic in the exact evaluation order the renderer documents, so the
vectorized implementation must agree bit for bit. Projection parameters
are taken from the public per-primitive projection API; the independence
under test is the compositing walk itself.
"""

import numpy as np

from fieldsplat.render import RasterizeOptions, project_scene


def composite_oracle(scene, camera, options=RasterizeOptions(),
                     active=None):
    """Per-pixel front-to-back compositing loop.

    Returns (image (H, W, 3), alpha (H, W), count (H, W), contributions (N,)).
    """
    projected, _ = project_scene(scene, camera, options)
    order = sorted(projected, key=lambda g: (g.depth, g.index))
    if active is not None:
        order = [g for g in order if active[g.index]]

    h, w = camera.height, camera.width
    img = np.zeros((h, w, 3))
    tau_img = np.ones((h, w))
    count = np.zeros((h, w), dtype=np.int64)
    contrib = np.zeros(len(scene))

    for y in range(h):
        for x in range(w):
            tau = 1.0
            for g in order:
                x0, x1, y0, y1 = g.bbox
                if not (x0 <= x < x1 and y0 <= y < y1):
                    continue
                # same scalar expressions, same order, as the renderer
                a = g.cov2d[0, 0]
                b = g.cov2d[0, 1]
                c = g.cov2d[1, 1]
                det = a * c - b * b
                ia = c / det
                ib = -b / det
                ic = a / det
                dx = (x + 0.5) - g.mean2d[0]
                dy = (y + 0.5) - g.mean2d[1]
                q = (ia * dx * dx) + (2.0 * ib) * dy * dx + (ic * dy * dy)
                raw = g.opacity * np.exp(-0.5 * q)
                alpha = np.minimum(raw, options.alpha_max)
                if alpha >= options.alpha_cut and tau >= options.tau_stop:
                    weight = alpha * tau
                    for ch in range(3):
                        img[y, x, ch] += g.color[ch] * weight
                    contrib[g.index] = max(contrib[g.index], weight)
                    count[y, x] += 1
                    tau = tau * (1.0 - alpha)
            tau_img[y, x] = tau

    return img, 1.0 - tau_img, count, contrib


def nearest_neighbor_oracle(points):
    """O(n^2) exact nearest-neighbor distances."""
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        d = np.linalg.norm(points - points[i], axis=1)
        d[i] = np.inf
        out[i] = d.min()
    return out


def ssim_sliding_window_oracle(x, y, win_size=11, sigma=1.5):
    """Direct sliding-window SSIM with explicit loops."""
    from fieldsplat.metrics import SSIM_C1, SSIM_C2, gaussian_window

    kernel = gaussian_window(win_size, sigma)
    h, w, channels = x.shape
    total = 0.0
    n = 0
    for ch in range(channels):
        for i in range(h - win_size + 1):
            for j in range(w - win_size + 1):
                px = x[i:i + win_size, j:j + win_size, ch]
                py = y[i:i + win_size, j:j + win_size, ch]
                mx = np.sum(px * kernel)
                my = np.sum(py * kernel)
                vx = np.sum(px * px * kernel) - mx ** 2
                vy = np.sum(py * py * kernel) - my ** 2
                vxy = np.sum(px * py * kernel) - mx * my
                s = ((2 * mx * my + SSIM_C1) * (2 * vxy + SSIM_C2)) / \
                    ((mx ** 2 + my ** 2 + SSIM_C1) * (vx + vy + SSIM_C2))
                total += s
                n += 1
    return total / n
