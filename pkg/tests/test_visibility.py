"""Camera clustering and per-cluster visibility baking."""

import numpy as np
import pytest

from fieldsplat.core import InvalidParameterError, StaleTableError
from fieldsplat.synthetic import (
    SyntheticSpec,
    make_two_room_scene,
    two_room_cameras,
)
from fieldsplat.visibility import (
    CameraClustering,
    ClusterVisibility,
    bake_visibility,
    cluster_cameras,
    render_from_viewpoint,
)
from fieldsplat.render import rasterize
from conftest import facing_camera, random_scene


class TestClusterCameras:
    def test_k_equals_n_is_exact(self, rng):
        pts = rng.uniform(-5, 5, size=(6, 3))
        clustering = cluster_cameras(pts, k=6, seed=0)
        assert clustering.inertia == pytest.approx(0.0, abs=1e-20)
        # every point is its own cluster
        assert len(set(clustering.assignment.tolist())) == 6

    def test_two_obvious_groups(self, rng):
        left = rng.normal(size=(10, 3)) + np.array([-20.0, 0, 0])
        right = rng.normal(size=(10, 3)) + np.array([20.0, 0, 0])
        pts = np.concatenate([left, right])
        clustering = cluster_cameras(pts, k=2, seed=1)
        a = clustering.assignment
        assert len(set(a[:10].tolist())) == 1
        assert len(set(a[10:].tolist())) == 1
        assert a[0] != a[10]
        # centers land on the group means
        means = sorted([left.mean(axis=0)[0], right.mean(axis=0)[0]])
        got = sorted(clustering.centers[:, 0].tolist())
        np.testing.assert_allclose(got, means, atol=1e-9)

    def test_deterministic(self, rng):
        pts = rng.uniform(-3, 3, size=(20, 3))
        c1 = cluster_cameras(pts, k=4, seed=7)
        c2 = cluster_cameras(pts, k=4, seed=7)
        np.testing.assert_array_equal(c1.centers, c2.centers)
        np.testing.assert_array_equal(c1.assignment, c2.assignment)

    def test_coincident_points_ok(self):
        pts = np.zeros((5, 3))
        clustering = cluster_cameras(pts, k=3, seed=0)
        assert clustering.inertia == 0.0
        assert clustering.assignment.shape == (5,)

    def test_rejects_bad_k(self, rng):
        pts = rng.uniform(size=(4, 3))
        with pytest.raises(InvalidParameterError):
            cluster_cameras(pts, k=0)
        with pytest.raises(InvalidParameterError):
            cluster_cameras(pts, k=5)

    def test_every_cluster_nonempty(self, rng):
        pts = rng.uniform(-2, 2, size=(30, 3))
        clustering = cluster_cameras(pts, k=8, seed=3)
        for j in range(8):
            assert clustering.cluster_members(j).size > 0


def _two_room_setup(seed=0):
    spec = SyntheticSpec(kind="two_room", image_size=24, n_per_room=48)
    rng = np.random.default_rng(seed)
    scene = make_two_room_scene(spec, rng)
    cams = two_room_cameras(spec, 6)
    return scene, cams


class TestBakeVisibility:
    def test_two_rooms_mutually_invisible(self):
        # cameras orbiting one room cannot see splats in the other room
        scene, cams = _two_room_setup()
        positions = np.array([c.center for c in cams])
        clustering = cluster_cameras(positions, k=2, seed=0)
        vis = bake_visibility(scene, clustering, cams, t_cluster=0.001,
                              aux_per_camera=2, seed=0)
        n_room = scene.metadata["n_per_room"]
        for j in range(2):
            ind = vis.indicators[j]
            in_left = ind[:n_room].sum()
            in_right = ind[n_room:2 * n_room].sum()
            # each cluster sees exactly one room: the wall hides the other
            assert min(in_left, in_right) == 0
            assert max(in_left, in_right) >= 0.5 * n_room
            # the unseen room makes this cluster's indicator sparse
            assert ind.sum() <= 0.7 * len(scene)
        # and the two clusters see different rooms
        assert vis.indicators[0][:n_room].sum() != \
            vis.indicators[1][:n_room].sum()

    def test_threshold_monotonicity(self, rng):
        scene = random_scene(rng, 30)
        cams = [facing_camera(12, 12, distance=d) for d in (3.5, 4.0, 4.5)]
        positions = np.array([c.center for c in cams])
        clustering = cluster_cameras(positions, k=1, seed=0)
        counts = []
        for t in (0.0, 0.001, 0.01, 0.1):
            vis = bake_visibility(scene, clustering, cams, t_cluster=t,
                                  aux_per_camera=0)
            counts.append(int(vis.active_counts()[0]))
        assert counts == sorted(counts, reverse=True)

    def test_strictly_greater_semantics(self, rng):
        # with t_cluster = 0, a primitive with exactly zero contribution
        # stays inactive
        scene, cams = _two_room_setup()
        positions = np.array([c.center for c in cams])
        clustering = cluster_cameras(positions, k=2, seed=0)
        vis = bake_visibility(scene, clustering, cams, t_cluster=0.0,
                              aux_per_camera=0)
        assert vis.active_counts().max() < len(scene)

    def test_deterministic(self, rng):
        scene = random_scene(rng, 12)
        cams = [facing_camera(10, 10, distance=d) for d in (3.5, 4.0, 4.5, 5.0)]
        positions = np.array([c.center for c in cams])
        clustering = cluster_cameras(positions, k=2, seed=5)
        v1 = bake_visibility(scene, clustering, cams, seed=9)
        v2 = bake_visibility(scene, clustering, cams, seed=9)
        np.testing.assert_array_equal(v1.indicators, v2.indicators)
        np.testing.assert_array_equal(v1.centers, v2.centers)

    def test_clustering_camera_count_mismatch(self, rng):
        scene = random_scene(rng, 4)
        cams = [facing_camera(8, 8, distance=d) for d in (3.5, 4.5)]
        clustering = cluster_cameras(np.array([c.center for c in cams]),
                                     k=1, seed=0)
        with pytest.raises(InvalidParameterError):
            bake_visibility(scene, clustering, cams[:1])


class TestRenderFromViewpoint:
    def test_nearest_cluster_lookup(self):
        vis = ClusterVisibility(
            centers=np.array([[0.0, 0, 0], [10.0, 0, 0]]),
            indicators=np.ones((2, 3), dtype=bool),
            t_cluster=0.001, scene_generation=0)
        assert vis.nearest_cluster(np.array([1.0, 0, 0])) == 0
        assert vis.nearest_cluster(np.array([9.0, 0, 0])) == 1
        # exact tie at the midpoint goes to the lowest index
        assert vis.nearest_cluster(np.array([5.0, 0, 0])) == 0

    def test_filtered_render_drops_far_room(self):
        scene, cams = _two_room_setup()
        positions = np.array([c.center for c in cams])
        clustering = cluster_cameras(positions, k=2, seed=0)
        vis = bake_visibility(scene, clustering, cams, t_cluster=0.001,
                              aux_per_camera=2, seed=0)
        out, n_active, j = render_from_viewpoint(scene, vis, cams[0])
        assert n_active < len(scene) * 0.7
        assert j == vis.nearest_cluster(cams[0].center)
        # filtering cannot visibly change the view it was baked for
        full = rasterize(scene, cams[0])
        np.testing.assert_allclose(out.color.data, full.color.data, atol=0.02)

    def test_all_active_matches_unfiltered(self, rng):
        scene = random_scene(rng, 10)
        cam = facing_camera(12, 12)
        vis = ClusterVisibility(
            centers=np.zeros((1, 3)),
            indicators=np.ones((1, 10), dtype=bool),
            t_cluster=0.0, scene_generation=scene.generation)
        out, n_active, j = render_from_viewpoint(scene, vis, cam)
        assert (n_active, j) == (10, 0)
        np.testing.assert_array_equal(out.color.data,
                                      rasterize(scene, cam).color.data)

    def test_stale_visibility_rejected(self, rng):
        scene = random_scene(rng, 6)
        vis = ClusterVisibility(
            centers=np.zeros((1, 3)),
            indicators=np.ones((1, 6), dtype=bool),
            t_cluster=0.0, scene_generation=scene.generation)
        sub = scene.subset(np.array([True] * 5 + [False]))
        with pytest.raises(StaleTableError):
            render_from_viewpoint(sub, vis, facing_camera(8, 8))
