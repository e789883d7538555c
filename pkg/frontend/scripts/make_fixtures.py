"""Regenerate the viewer test fixtures from the Python package.

Writes an exported bundle plus reference frames rendered by the reference
rasterizer, so the TypeScript tests can check parity without running any
Python. Run from the repository root:

    python3 frontend/scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from fieldsplat.core import GaussianScene, logit, look_at_camera, SH_C0, SH_COLOR_OFFSET
from fieldsplat.io import encode_camera_state, export_viewer
from fieldsplat.render import rasterize
from fieldsplat.visibility import bake_visibility, cluster_cameras, render_from_viewpoint

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
SIZE = 32


def make_scene(rng: np.random.Generator) -> GaussianScene:
    """Two groups of splats far apart on the x axis (forces two clusters)."""
    parts = []
    for cx in (-3.0, 3.0):
        n = 30
        pos = rng.normal(scale=0.6, size=(n, 3)) + np.array([cx, 0.0, 0.0])
        sh = np.zeros((n, 3, 16))
        base = rng.uniform(0.15, 0.85, size=(n, 3))
        sh[:, :, 0] = (base - SH_COLOR_OFFSET) / SH_C0
        sh[:, :, 1:4] = rng.normal(scale=0.08, size=(n, 3, 3))
        q = rng.standard_normal((n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        parts.append(dict(
            positions=pos, sh=sh,
            opacity_logits=logit(rng.uniform(0.3, 0.9, size=n)),
            log_scales=np.log(rng.uniform(0.08, 0.25, size=(n, 3))),
            quaternions=q))
    return GaussianScene(
        positions=np.concatenate([p["positions"] for p in parts]),
        opacity_logits=np.concatenate([p["opacity_logits"] for p in parts]),
        sh=np.concatenate([p["sh"] for p in parts]),
        log_scales=np.concatenate([p["log_scales"] for p in parts]),
        quaternions=np.concatenate([p["quaternions"] for p in parts]),
        active_sh_degree=1,
    )


def make_cameras():
    cams = []
    for cx in (-3.0, 3.0):
        outward = -1.0 if cx < 0 else 1.0
        for ang in np.linspace(-0.7, 0.7, 4):
            eye = np.array([cx + outward * 2.5 * np.cos(ang),
                            2.5 * np.sin(ang), 1.0])
            cams.append(look_at_camera(eye, (cx, 0.0, 0.0), width=SIZE,
                                       height=SIZE, fov_deg=55.0))
    return cams


def dump_frame(path: Path, image: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(image, dtype="<f4").tobytes())


def main() -> None:
    rng = np.random.default_rng(42)
    scene = make_scene(rng)
    cams = make_cameras()
    centers = np.array([c.center for c in cams])
    clustering = cluster_cameras(centers, k=2, seed=0)
    vis = bake_visibility(scene, clustering, cams, t_cluster=0.001,
                          aux_per_camera=1, seed=0)

    bundle_dir = OUT / "bundle"
    export_viewer(scene, vis, cams, bundle_dir)

    parity_dir = OUT / "parity"
    parity_dir.mkdir(parents=True, exist_ok=True)
    # five shared poses: three training cameras plus two free viewpoints
    shared = [cams[0], cams[2], cams[5],
              look_at_camera((-6.0, 1.0, 2.0), (-3.0, 0.0, 0.0),
                             width=SIZE, height=SIZE, fov_deg=55.0),
              look_at_camera((6.2, -0.8, 1.5), (3.0, 0.2, 0.0),
                             width=SIZE, height=SIZE, fov_deg=55.0)]
    records = []
    for i, cam in enumerate(shared):
        out = rasterize(scene, cam)
        dump_frame(parity_dir / f"frame_{i}.bin", out.color.data)
        filtered, n_active, cluster = render_from_viewpoint(scene, vis, cam)
        dump_frame(parity_dir / f"frame_{i}_filtered.bin", filtered.color.data)
        records.append(dict(
            state=encode_camera_state(cam), width=cam.width, height=cam.height,
            frame=f"frame_{i}.bin", filtered_frame=f"frame_{i}_filtered.bin",
            active_count=int(n_active), cluster_index=int(cluster)))
    (parity_dir / "cases.json").write_text(json.dumps(dict(
        cases=records,
        active_counts=[int(v) for v in vis.active_counts()],
    ), indent=1))
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
