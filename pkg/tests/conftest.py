import numpy as np
import pytest

from fieldsplat.core import (
    GaussianScene,
    PinholeCamera,
    SH_C0,
    SH_COLOR_OFFSET,
    logit,
    look_at_camera,
)


def random_unit_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(rng, n, *, spread=1.0, sh_degree=0, opacity_range=(0.2, 0.9),
                 scale_range=(0.05, 0.3)) -> GaussianScene:
    """A random but well-conditioned scene in front of the default camera."""
    sh = np.zeros((n, 3, 16))
    sh[:, :, 0] = (rng.uniform(0.1, 0.9, size=(n, 3)) - SH_COLOR_OFFSET) / SH_C0
    if sh_degree > 0:
        nb = (1, 4, 9, 16)[sh_degree]
        sh[:, :, 1:nb] = rng.normal(scale=0.05, size=(n, 3, nb - 1))
    ops = rng.uniform(*opacity_range, size=n)
    return GaussianScene(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        opacity_logits=logit(ops),
        sh=sh,
        log_scales=np.log(rng.uniform(*scale_range, size=(n, 3))),
        quaternions=random_unit_quaternions(rng, n),
        active_sh_degree=sh_degree,
    )


def facing_camera(width=16, height=16, distance=4.0, fov_deg=45.0,
                  eye=None) -> PinholeCamera:
    """Camera on the -z side looking at the origin (scene at z ~ +distance)."""
    eye = (0.0, 0.0, -distance) if eye is None else eye
    return look_at_camera(eye, (0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                          width=width, height=height, fov_deg=fov_deg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera16():
    return facing_camera(16, 16)
