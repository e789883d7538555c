"""Viewpoint-based visibility filtering.

Training cameras are clustered by position (seeded k-means++ plus Lloyd
iterations). For each cluster, the scene is rendered from every assigned
camera plus randomly jittered auxiliary cameras; a primitive is marked
active for the cluster when its maximum recorded contribution alpha * tau
exceeds the baking threshold. At render time the nearest cluster center is
looked up by camera position and rasterization is gated by that cluster's
indicator list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GaussianScene,
    InvalidParameterError,
    PinholeCamera,
    StaleTableError,
)
from .render import (
    ContributionAccumulator,
    RasterizeOptions,
    rasterize_filtered,
    rasterize_with_contributions,
)

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class CameraClustering:
    """k cluster centers over camera positions plus the assignment."""

    centers: np.ndarray       # (k, 3)
    assignment: np.ndarray    # (n_cameras,) int, cluster index per camera
    inertia: float            # sum of squared point-to-center distances

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def cluster_members(self, j: int) -> np.ndarray:
        return np.nonzero(self.assignment == j)[0]


@dataclass(frozen=True)
class ClusterVisibility:
    """Per-cluster active-primitive indicators baked from cluster cameras."""

    centers: np.ndarray       # (k, 3)
    indicators: np.ndarray    # (k, N) bool
    t_cluster: float
    scene_generation: int
    aux_per_camera: int = 3
    metadata: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def scene_size(self) -> int:
        return self.indicators.shape[1]

    def active_counts(self) -> np.ndarray:
        return self.indicators.sum(axis=1)

    def check(self, scene: GaussianScene) -> None:
        if scene.generation != self.scene_generation:
            raise StaleTableError(
                f"visibility was baked for scene generation "
                f"{self.scene_generation}, got {scene.generation}")
        if self.scene_size != len(scene):
            raise StaleTableError("visibility indicator length mismatch")

    def nearest_cluster(self, position: np.ndarray) -> int:
        """Nearest center by Euclidean distance; ties go to the lowest index."""
        d = np.linalg.norm(self.centers - np.asarray(position)[None, :], axis=1)
        return int(np.argmin(d))


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin over squared distances; argmin takes the lowest index on ties
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def cluster_cameras(positions: np.ndarray, k: int,
                    seed: int = 0) -> CameraClustering:
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Converges when the assignment stabilizes or after 100 iterations. An
    empty cluster is re-seeded to the point farthest from its assigned
    center. Deterministic for a fixed seed.
    """
    points = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if k < 1:
        raise InvalidParameterError("k must be >= 1")
    if k > n:
        raise InvalidParameterError(f"k={k} exceeds camera count {n}")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, 3))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            # all remaining points coincide with chosen centers
            centers[j] = points[rng.integers(n)]
        else:
            probs = d2 / total
            centers[j] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    assignment = _assign(points, centers)
    for _ in range(KMEANS_MAX_ITER):
        for j in range(k):
            members = points[assignment == j]
            if members.shape[0] == 0:
                # re-seed to the point farthest from its assigned center
                far = np.sum((points - centers[assignment]) ** 2, axis=1)
                centers[j] = points[np.argmax(far)]
            else:
                centers[j] = members.mean(axis=0)
        new_assignment = _assign(points, centers)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    inertia = float(np.sum((points - centers[assignment]) ** 2))
    return CameraClustering(centers=centers, assignment=assignment,
                            inertia=inertia)


# ---------------------------------------------------------------------------
# Baking
# ---------------------------------------------------------------------------

def _aux_cameras(cluster_cams: list[PinholeCamera], aux_per_camera: int,
                 rng: np.random.Generator) -> list[PinholeCamera]:
    """Jittered copies of the cluster's cameras.

    Positions receive Gaussian noise with sigma equal to 10% of the spread
    of the cluster's camera positions; orientations and intrinsics are
    copied from the source camera.
    """
    if aux_per_camera <= 0:
        return []
    centers = np.array([c.center for c in cluster_cams])
    spread = float(np.linalg.norm(centers.std(axis=0)))
    sigma = 0.1 * spread
    out = []
    for cam in cluster_cams:
        for _ in range(aux_per_camera):
            new_center = cam.center + rng.standard_normal(3) * sigma
            translation = -cam.rotation @ new_center
            out.append(PinholeCamera(
                rotation=cam.rotation, translation=translation,
                fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                width=cam.width, height=cam.height))
    return out


def bake_visibility(scene: GaussianScene, clustering: CameraClustering,
                    cameras, t_cluster: float = 0.001,
                    aux_per_camera: int = 3, seed: int = 0,
                    options: RasterizeOptions = RasterizeOptions()
                    ) -> ClusterVisibility:
    """Bake the per-cluster active-primitive indicators.

    A primitive is active for a cluster when its maximum alpha * tau over
    the cluster's assigned cameras and their jittered auxiliary cameras is
    strictly greater than t_cluster.
    """
    cameras = list(cameras)
    if clustering.assignment.shape[0] != len(cameras):
        raise InvalidParameterError("clustering does not cover the camera list")
    if t_cluster < 0.0:
        raise InvalidParameterError("t_cluster must be >= 0")
    rng = np.random.default_rng(seed)

    k = clustering.k
    indicators = np.zeros((k, len(scene)), dtype=bool)
    for j in range(k):
        member_idx = clustering.cluster_members(j)
        if member_idx.size == 0:
            raise RuntimeError(f"cluster {j} has no cameras")  # pragma: no cover
        cluster_cams = [cameras[i] for i in member_idx]
        bake_cams = cluster_cams + _aux_cameras(cluster_cams, aux_per_camera, rng)
        acc = ContributionAccumulator(len(scene))
        for cam in bake_cams:
            rasterize_with_contributions(scene, cam, acc, options)
        indicators[j] = acc.values > t_cluster

    return ClusterVisibility(
        centers=clustering.centers.copy(), indicators=indicators,
        t_cluster=t_cluster, scene_generation=scene.generation,
        aux_per_camera=aux_per_camera,
        metadata={"n_cameras": len(cameras), "seed": seed})


def render_from_viewpoint(scene: GaussianScene, visibility: ClusterVisibility,
                          camera: PinholeCamera,
                          options: RasterizeOptions = RasterizeOptions()):
    """Filtered render gated by the nearest cluster's indicator list.

    Returns (RenderOutput, active primitive count, cluster index). Raises
    StaleTableError when the visibility was baked for another scene.
    """
    visibility.check(scene)
    j = visibility.nearest_cluster(camera.center)
    active = visibility.indicators[j]
    out = rasterize_filtered(scene, camera, active, options)
    return out, int(active.sum()), j
