"""Core math: covariance construction, SH evaluation, camera transforms."""

import numpy as np
import pytest

from fieldsplat.core import (
    GaussianPrimitive,
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    PinholeCamera,
    SH_C0,
    SH_C1,
    SH_COLOR_OFFSET,
    covariance_from_scale_rot,
    eval_sh,
    logit,
    look_at_camera,
    normalize_quaternion,
    quat_to_rotmat,
    sh_basis,
    sigmoid,
    srgb_decode,
    srgb_encode,
    world_to_camera,
)
from conftest import facing_camera, random_unit_quaternions


def quat_to_rotmat_oracle(q):
    """Textbook quaternion-to-matrix formula, written out longhand."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class TestCovariance:
    def test_isotropic_unit(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        cov = covariance_from_scale_rot(np.ones(3), q)
        np.testing.assert_allclose(cov, np.eye(3))

    def test_rotation_permutes_axes(self):
        # 90 degrees about z maps the x-axis scale onto y
        angle = np.pi / 2
        q = np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])
        cov = covariance_from_scale_rot(np.array([2.0, 1.0, 1.0]), q)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_matches_matrix_product_oracle(self, rng):
        for _ in range(50):
            s = rng.uniform(0.1, 3.0, size=3)
            q = random_unit_quaternions(rng, 1)[0]
            r = quat_to_rotmat_oracle(q)
            expected = r @ np.diag(s ** 2) @ r.T
            got = covariance_from_scale_rot(s, q)
            np.testing.assert_allclose(got, expected, atol=1e-12)
            # symmetric PSD
            np.testing.assert_allclose(got, got.T, atol=1e-12)
            assert np.linalg.eigvalsh(got).min() >= -1e-12

    def test_rejects_bad_inputs(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(InvalidParameterError):
            covariance_from_scale_rot(np.array([0.0, 1.0, 1.0]), q)
        with pytest.raises(InvalidParameterError):
            covariance_from_scale_rot(np.ones(3), np.zeros(4))
        with pytest.raises(InvalidParameterError):
            covariance_from_scale_rot(np.ones(3), 2.0 * q)


class TestQuaternions:
    def test_normalize_idempotent(self, rng):
        q = rng.standard_normal((20, 4))
        once = normalize_quaternion(q)
        twice = normalize_quaternion(once)
        # up to one ulp of drift from dividing by a norm of 1 +/- eps
        np.testing.assert_allclose(twice, once, rtol=0, atol=5e-16)

    def test_normalize_rejects_zero(self):
        with pytest.raises(InvalidParameterError):
            normalize_quaternion(np.zeros(4))

    def test_rotmat_batch_matches_oracle(self, rng):
        qs = random_unit_quaternions(rng, 10)
        mats = quat_to_rotmat(qs)
        for q, m in zip(qs, mats):
            np.testing.assert_allclose(m, quat_to_rotmat_oracle(q), atol=1e-12)


class TestSphericalHarmonics:
    def test_dc_only_reproduces_color(self, rng):
        color = np.array([0.3, 0.6, 0.9])
        sh = np.zeros((3, 16))
        sh[:, 0] = (color - SH_COLOR_OFFSET) / SH_C0
        for d in rng.standard_normal((5, 3)):
            d = d / np.linalg.norm(d)
            np.testing.assert_allclose(eval_sh(sh, d, 0), color, atol=1e-12)

    def test_all_zero_gives_offset(self):
        sh = np.zeros((3, 16))
        out = eval_sh(sh, np.array([0.0, 0.0, 1.0]), 3)
        np.testing.assert_allclose(out, np.full(3, SH_COLOR_OFFSET))

    def test_degree1_z_flip(self):
        # band 2 of degree 1 carries -C1*... actually the z-linear band;
        # flipping the direction flips its sign, so the difference is
        # exactly 2 * coefficient * basis(z).
        sh = np.zeros((3, 16))
        coeff = 0.11
        sh[:, 2] = coeff  # the band whose basis is linear in z
        up = eval_sh(sh, np.array([0.0, 0.0, 1.0]), 1, raw=True)
        down = eval_sh(sh, np.array([0.0, 0.0, -1.0]), 1, raw=True)
        np.testing.assert_allclose(up - down, 2 * coeff * SH_C1
                                   * np.ones(3), atol=1e-12)

    def test_linear_in_coefficients(self, rng):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        k1 = rng.standard_normal((3, 16))
        k2 = rng.standard_normal((3, 16))
        a, b = 0.7, -1.3
        lhs = eval_sh(a * k1 + b * k2, d, 3, raw=True)
        rhs = a * eval_sh(k1, d, 3, raw=True) + b * eval_sh(k2, d, 3, raw=True)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_basis_dc_constant(self, rng):
        dirs = rng.standard_normal((7, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        basis = sh_basis(dirs, 3)
        assert basis.shape == (7, 16)
        np.testing.assert_allclose(basis[:, 0], SH_C0)


class TestCamera:
    def test_identity_pose(self):
        cam = PinholeCamera(width=8, height=8, fx=4, fy=4, cx=4, cy=4,
                            rotation=np.eye(3), translation=np.zeros(3))
        np.testing.assert_allclose(world_to_camera(cam, [1.0, 2.0, 3.0]),
                                   [1.0, 2.0, 3.0])

    def test_translation_only(self):
        cam = PinholeCamera(width=8, height=8, fx=4, fy=4, cx=4, cy=4,
                            rotation=np.eye(3),
                            translation=np.array([0.0, 0.0, -5.0]))
        np.testing.assert_allclose(world_to_camera(cam, [0.0, 0.0, 5.0]),
                                   np.zeros(3), atol=1e-15)

    def test_matches_homogeneous_matrix_oracle(self, rng):
        cam = facing_camera(12, 10, distance=3.0)
        mat = np.eye(4)
        mat[:3, :3] = cam.rotation
        mat[:3, 3] = cam.translation
        for p in rng.uniform(-2, 2, size=(20, 3)):
            hom = mat @ np.append(p, 1.0)
            np.testing.assert_allclose(world_to_camera(cam, p), hom[:3],
                                       atol=1e-12)

    def test_round_trip(self, rng):
        cam = facing_camera(12, 10, distance=3.0)
        pts = rng.uniform(-2, 2, size=(20, 3))
        back = cam.camera_to_world(cam.world_to_camera(pts))
        np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_principal_point_direction_is_forward(self):
        cam = facing_camera(16, 16, distance=4.0)
        # pixel center at the principal point: px + 0.5 == cx
        d = cam.pixel_directions(np.array([cam.cx - 0.5]),
                                 np.array([cam.cy - 0.5]))[0]
        forward = cam.rotation[2]  # third row: camera +z in world coords
        np.testing.assert_allclose(d, forward, atol=1e-12)

    def test_look_at_sees_target_at_center(self):
        cam = look_at_camera((1.0, -2.0, 0.5), (0.0, 0.0, 0.0),
                             width=20, height=20, fov_deg=60)
        t = cam.world_to_camera(np.zeros(3))
        assert t[2] > 0
        np.testing.assert_allclose(t[:2], 0.0, atol=1e-9)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            PinholeCamera(width=8, height=8, fx=-1, fy=4, cx=4, cy=4,
                          rotation=np.eye(3), translation=np.zeros(3))
        with pytest.raises(InvalidParameterError):
            PinholeCamera(width=8, height=8, fx=4, fy=4, cx=9, cy=4,
                          rotation=np.eye(3), translation=np.zeros(3))
        skew = np.eye(3)
        skew[0, 1] = 1e-3
        with pytest.raises(InvalidParameterError):
            PinholeCamera(width=8, height=8, fx=4, fy=4, cx=4, cy=4,
                          rotation=skew, translation=np.zeros(3))


class TestImageBuffer:
    def test_srgb_round_trip_u8(self):
        # u8 -> linear -> u8 must be exact for every code value
        u8 = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img = np.stack([u8, u8, u8], axis=-1)
        back = ImageBuffer.from_srgb_u8(img).to_srgb_u8()
        np.testing.assert_array_equal(back, img)

    def test_transfer_function_inverts(self, rng):
        x = rng.uniform(0, 1, size=1000)
        np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)

    def test_rejects_bad_values(self):
        with pytest.raises(InvalidParameterError):
            ImageBuffer(np.full((4, 4, 3), np.nan))
        with pytest.raises(InvalidParameterError):
            ImageBuffer(np.zeros((4, 4)))


class TestSceneContainer:
    def test_scene_accessors(self, rng):
        from conftest import random_scene
        scene = random_scene(rng, 9)
        assert len(scene) == 9
        lo, hi = scene.bounding_box
        assert np.all(scene.positions >= lo) and np.all(scene.positions <= hi)
        assert np.all(scene.opacities > 0) and np.all(scene.opacities < 1)
        np.testing.assert_allclose(scene.scales,
                                   np.exp(scene.log_scales))

    def test_subset_new_generation(self, rng):
        from conftest import random_scene
        scene = random_scene(rng, 6)
        sub = scene.subset(np.array([True, False, True, True, False, False]))
        assert len(sub) == 3
        assert sub.generation != scene.generation
        np.testing.assert_array_equal(sub.positions, scene.positions[[0, 2, 3]])

    def test_primitive_round_trip(self, rng):
        from conftest import random_scene
        scene = random_scene(rng, 4, sh_degree=2)
        rebuilt = GaussianScene.from_primitives(
            [scene.primitive(i) for i in range(4)],
            active_sh_degree=scene.active_sh_degree)
        np.testing.assert_array_equal(rebuilt.positions, scene.positions)
        np.testing.assert_array_equal(rebuilt.sh, scene.sh)

    def test_opacity_parameterization(self):
        assert sigmoid(logit(0.1)) == pytest.approx(0.1, abs=1e-12)
        p = GaussianPrimitive(position=np.zeros(3),
                              opacity_logit=float(logit(0.25)),
                              sh=np.zeros((3, 16)),
                              log_scale=np.log(np.full(3, 0.5)),
                              quaternion=np.array([1.0, 0, 0, 0]))
        assert p.opacity == pytest.approx(0.25)
        np.testing.assert_allclose(p.scale, 0.5)
