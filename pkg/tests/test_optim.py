"""Splat initialization, the combined loss, and the optimization loop."""

import numpy as np
import pytest

from fieldsplat.core import (
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    SH_C0,
    SH_COLOR_OFFSET,
    logit,
)
from fieldsplat.field import SupervisionSet
from fieldsplat.optim import (
    EmptyInitializationError,
    InitConfig,
    OptimizationConfig,
    compute_loss,
    compute_loss_with_grad,
    init_attributes,
    init_point_set,
    optimize,
)
from fieldsplat.render import rasterize
from fieldsplat.synthetic import make_opaque_box_grid, orbit_cameras
from conftest import facing_camera, random_scene
from oracles import nearest_neighbor_oracle


class TestInitPointSet:
    def test_points_land_on_box_surface(self):
        # an opaque unit box: lifted points should sit on its boundary
        grid = make_opaque_box_grid(resolution=48, density=2000.0)
        cams = orbit_cameras((0, 0, 0), 3.0, 4, image_size=24, fov_deg=50)
        pts, colors = init_point_set(grid, cams, InitConfig(n_points=400,
                                                            seed=5))
        assert pts.shape[0] >= 100
        assert colors.shape == (pts.shape[0], 3)
        # distance from each point to the box surface |max|coord| - 0.5|
        face = np.abs(np.max(np.abs(pts), axis=1) - 0.5)
        voxel = 2.0 / 48
        on_surface = np.mean(face < 3 * voxel)
        assert on_surface >= 0.99, f"only {on_surface:.2%} on the surface"

    def test_empty_field_raises(self):
        from fieldsplat.field import RadianceFieldGrid
        grid = RadianceFieldGrid.create((-1, -1, -1), (1, 1, 1),
                                        resolution=8, init_density=1e-9)
        cams = orbit_cameras((0, 0, 0), 3.0, 2, image_size=8, fov_deg=50)
        with pytest.raises(EmptyInitializationError):
            init_point_set(grid, cams, InitConfig(n_points=16, seed=0))

    def test_no_cameras_rejected(self):
        grid = make_opaque_box_grid(resolution=16)
        with pytest.raises(InvalidParameterError):
            init_point_set(grid, [], InitConfig(n_points=16))

    def test_deterministic(self):
        grid = make_opaque_box_grid(resolution=24, density=2000.0)
        cams = orbit_cameras((0, 0, 0), 3.0, 3, image_size=12, fov_deg=50)
        cfg = InitConfig(n_points=64, seed=11)
        p1, c1 = init_point_set(grid, cams, cfg)
        p2, c2 = init_point_set(grid, cams, cfg)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(c1, c2)


class TestInitAttributes:
    def test_scales_match_exact_nn(self, rng):
        pts = rng.uniform(-1, 1, size=(100, 3))
        colors = rng.uniform(0.1, 0.9, size=(100, 3))
        scene = init_attributes(pts, colors, InitConfig())
        nn = nearest_neighbor_oracle(pts)
        np.testing.assert_allclose(np.exp(scene.log_scales),
                                   np.repeat(nn[:, None], 3, axis=1),
                                   rtol=1e-12)

    def test_duplicate_points_clamped(self, rng):
        pts = rng.uniform(-1, 1, size=(10, 3))
        pts[3] = pts[7]  # exact duplicate -> zero NN distance
        scene = init_attributes(pts, np.full((10, 3), 0.5),
                                InitConfig(min_scale=1e-6))
        assert scene.metadata["clamped_scales"] == 2
        assert np.exp(scene.log_scales).min() == pytest.approx(1e-6)

    def test_sh_dc_inverts_color(self, rng):
        pts = rng.uniform(-1, 1, size=(20, 3))
        colors = rng.uniform(0.1, 0.9, size=(20, 3))
        scene = init_attributes(pts, colors)
        recon = scene.sh[:, :, 0] * SH_C0 + SH_COLOR_OFFSET
        np.testing.assert_allclose(recon, colors, atol=1e-12)
        assert np.all(scene.sh[:, :, 1:] == 0.0)
        assert scene.active_sh_degree == 0

    def test_opacity_and_rotation_defaults(self, rng):
        pts = rng.uniform(-1, 1, size=(5, 3))
        scene = init_attributes(pts, np.full((5, 3), 0.5),
                                InitConfig(initial_opacity=0.1))
        np.testing.assert_allclose(scene.opacities, 0.1, atol=1e-12)
        np.testing.assert_array_equal(scene.quaternions,
                                      np.tile([1.0, 0, 0, 0], (5, 1)))


class TestLoss:
    def test_identical_images_zero(self, rng):
        img = rng.uniform(size=(16, 16, 3))
        assert compute_loss(img, img) == pytest.approx(0.0, abs=1e-12)

    def test_mse_only_hand_value(self):
        a = np.zeros((16, 16, 3))
        b = np.full((16, 16, 3), 0.1)
        assert compute_loss(a, b, lambda_ssim=0.0) == pytest.approx(0.01)

    def test_components_recombine(self, rng):
        from fieldsplat.metrics import mse, ssim
        a = rng.uniform(size=(16, 16, 3))
        b = rng.uniform(size=(16, 16, 3))
        lam = 0.2
        loss, _, err, s = compute_loss_with_grad(a, b, lam)
        assert err == pytest.approx(mse(a, b), rel=1e-12)
        assert s == pytest.approx(ssim(a, b), rel=1e-12)
        assert loss == pytest.approx((1 - lam) * err + lam * (1 - s),
                                     rel=1e-12)
        assert loss == pytest.approx(compute_loss(a, b, lam), rel=1e-12)

    def test_grad_matches_fd(self, rng):
        a = rng.uniform(0.2, 0.8, size=(12, 12, 3))
        b = rng.uniform(0.2, 0.8, size=(12, 12, 3))
        _, grad, _, _ = compute_loss_with_grad(a, b, 0.2)
        eps = 1e-6
        for idx in rng.choice(a.size, size=10, replace=False):
            up, dn = a.ravel().copy(), a.ravel().copy()
            up[idx] += eps
            dn[idx] -= eps
            fd = (compute_loss(up.reshape(a.shape), b, 0.2)
                  - compute_loss(dn.reshape(a.shape), b, 0.2)) / (2 * eps)
            assert grad.ravel()[idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_small_image_auto_window(self):
        # 8x8 images force a 7-pixel window instead of failing
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.3)
        assert np.isfinite(compute_loss(a, b))


def _supervision_for(scene, n_cams=3, size=12):
    cams = [facing_camera(size, size, distance=d, eye=e)
            for d, e in [(4.0, None), (4.0, (1.0, 0.5, -3.8)),
                         (4.0, (-1.2, -0.4, -3.7))]][:n_cams]
    images = tuple(rasterize(scene, c).color for c in cams)
    return SupervisionSet(cameras=tuple(cams), images=images)


class TestOptimize:
    def test_zero_iterations_identity(self, rng):
        scene = random_scene(rng, 6)
        sup = _supervision_for(scene)
        cfg = OptimizationConfig(iterations=0)
        out, trace = optimize(scene, sup, cfg)
        assert trace == []
        np.testing.assert_array_equal(out.positions, scene.positions)
        np.testing.assert_array_equal(out.sh, scene.sh)
        np.testing.assert_array_equal(out.opacity_logits, scene.opacity_logits)

    def test_deterministic(self, rng):
        target = random_scene(rng, 5)
        start = random_scene(np.random.default_rng(7), 5)
        sup = _supervision_for(target)
        cfg = OptimizationConfig(iterations=12, seed=3, densify_interval=0)
        out1, t1 = optimize(start, sup, cfg)
        out2, t2 = optimize(start, sup, cfg)
        np.testing.assert_array_equal(out1.positions, out2.positions)
        np.testing.assert_array_equal(out1.sh, out2.sh)
        assert t1 == t2

    def test_count_constant_without_densify(self, rng):
        scene = random_scene(rng, 6)
        sup = _supervision_for(scene)
        cfg = OptimizationConfig(iterations=10, densify_interval=0)
        out, trace = optimize(scene, sup, cfg)
        assert len(out) == 6
        assert all(r["primitive_count"] == 6 for r in trace)

    def test_single_gaussian_recovery(self):
        # start from a perturbed copy of a one-splat scene and recover it
        target = GaussianScene(
            positions=np.array([[0.0, 0.0, 0.0]]),
            opacity_logits=np.array([float(logit(0.8))]),
            sh=np.concatenate([(np.array([[0.7, 0.2, 0.3]]).T
                                - SH_COLOR_OFFSET)[None] / SH_C0,
                               np.zeros((1, 3, 15))], axis=2),
            log_scales=np.log(np.full((1, 3), 0.4)),
            quaternions=np.array([[1.0, 0, 0, 0]]),
        )
        sup = _supervision_for(target, size=16)
        start = GaussianScene(
            positions=np.array([[0.15, -0.1, 0.1]]),
            opacity_logits=np.array([float(logit(0.5))]),
            sh=target.sh.copy(),
            log_scales=np.log(np.full((1, 3), 0.3)),
            quaternions=np.array([[1.0, 0, 0, 0]]),
        )
        cfg = OptimizationConfig(iterations=400, densify_interval=0,
                                 lr_position=4e-3, scene_extent=1.0, seed=0)
        out, trace = optimize(start, sup, cfg)
        first = compute_loss(rasterize(start, sup.cameras[0]).color.data,
                             sup.images[0].data)
        last = compute_loss(rasterize(out, sup.cameras[0]).color.data,
                            sup.images[0].data)
        assert last < first * 0.2, f"loss {first} -> {last}"
        np.testing.assert_allclose(out.positions[0], target.positions[0],
                                   atol=0.05)

    def test_loss_improves(self, rng):
        target = random_scene(rng, 4, scale_range=(0.2, 0.4))
        start = random_scene(np.random.default_rng(42), 8)
        sup = _supervision_for(target, size=16)
        cfg = OptimizationConfig(iterations=150, densify_interval=0, seed=1)
        out, trace = optimize(start, sup, cfg)
        early = np.mean([r["loss"] for r in trace[:10]])
        late = np.mean([r["loss"] for r in trace[-10:]])
        assert late < early

    def test_running_best_non_increasing(self, rng):
        target = random_scene(rng, 4)
        start = random_scene(np.random.default_rng(8), 4)
        sup = _supervision_for(target)
        _, trace = optimize(start, sup,
                            OptimizationConfig(iterations=30,
                                               densify_interval=0, seed=2))
        losses = [r["loss"] for r in trace]
        best = np.minimum.accumulate(losses)
        assert np.all(np.diff(best) <= 0)

    def test_densification_grows_scene(self, rng):
        target = random_scene(rng, 10, scale_range=(0.2, 0.5))
        start = random_scene(np.random.default_rng(3), 4,
                             scale_range=(0.3, 0.5))
        sup = _supervision_for(target, size=16)
        cfg = OptimizationConfig(iterations=60, densify_interval=10,
                                 densify_start=10, densify_end=60,
                                 densify_grad_threshold=1e-7,
                                 min_opacity=0.001, seed=0)
        out, _ = optimize(start, sup, cfg)
        assert len(out) > 4

    def test_prune_hook_applied(self, rng):
        scene = random_scene(rng, 8)
        sup = _supervision_for(scene)
        seen = []

        def hook(s, step):
            seen.append((step, len(s)))
            mask = np.ones(len(s), dtype=bool)
            mask[0] = False
            return mask

        cfg = OptimizationConfig(iterations=10, densify_interval=0,
                                 prune_steps=(4, 8), seed=0)
        out, _ = optimize(scene, sup, cfg, prune_hook=hook)
        assert [s for s, _ in seen] == [4, 8]
        assert len(out) == 6

    def test_sh_promotion_schedule(self, rng):
        scene = random_scene(rng, 4)  # degree 0
        sup = _supervision_for(scene)
        cfg = OptimizationConfig(iterations=10, densify_interval=0,
                                 sh_promote_steps=(3, 6), seed=0)
        out, _ = optimize(scene, sup, cfg)
        assert out.active_sh_degree == 2

    def test_rejects_unsorted_schedules(self):
        with pytest.raises(InvalidParameterError):
            OptimizationConfig(prune_steps=(10, 5))
        with pytest.raises(InvalidParameterError):
            OptimizationConfig(sh_promote_steps=(10, 5))

    def test_empty_scene_rejected(self, rng):
        scene = random_scene(rng, 3)
        sup = _supervision_for(scene)
        with pytest.raises(InvalidParameterError):
            optimize(scene.subset(np.zeros(3, dtype=bool)), sup,
                     OptimizationConfig(iterations=1))
