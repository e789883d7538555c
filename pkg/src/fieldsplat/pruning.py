"""Ray-contribution importance scoring and pruning.

Each primitive's importance is the maximum, over every supervision ray
(every pixel of every supervision camera), of the alpha * transmittance it
actually contributes during compositing. Primitives strictly below a
threshold are removed; by construction a primitive with importance zero
never touched any supervision pixel, so removing it cannot change the
supervision renders.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

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
    rasterize_with_contributions,
)


@dataclass(frozen=True)
class ImportanceTable:
    """Max ray contribution per primitive, tagged with the scene it scored.

    The generation tag guards against applying a table to a scene whose
    primitive set has changed (densification, earlier pruning): any such
    change produces a new generation and the stale table is rejected.
    """

    values: np.ndarray          # (N,) float64 in [0, 1]
    scene_generation: int
    n_cameras: int

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise InvalidParameterError("importance values must be 1-D")

    def __len__(self) -> int:
        return self.values.shape[0]

    def check(self, scene: GaussianScene) -> None:
        if scene.generation != self.scene_generation:
            raise StaleTableError(
                f"importance table was computed for scene generation "
                f"{self.scene_generation}, got {scene.generation}")
        if len(self) != len(scene):
            raise StaleTableError("importance table length mismatch")

    def keep_mask(self, threshold: float) -> np.ndarray:
        """Keep everything with importance >= threshold (strict removal)."""
        if threshold < 0.0:
            raise InvalidParameterError("threshold must be >= 0")
        return ~(self.values < threshold)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["primitive", "importance"])
            for i, v in enumerate(self.values):
                writer.writerow([i, f"{v:.9g}"])


def compute_importance(scene: GaussianScene, cameras,
                       options: RasterizeOptions = RasterizeOptions()
                       ) -> ImportanceTable:
    """Score the scene against every pixel of every camera.

    The per-camera accumulators max-merge, so camera order (and duplicated
    cameras) cannot change the result.
    """
    cameras = list(cameras)
    if not cameras:
        raise InvalidParameterError("need at least one camera")
    total = ContributionAccumulator(len(scene))
    for camera in cameras:
        if not isinstance(camera, PinholeCamera):
            raise InvalidParameterError("cameras must be PinholeCamera")
        acc = ContributionAccumulator(len(scene))
        rasterize_with_contributions(scene, camera, acc, options)
        total.merge(acc)
    return ImportanceTable(values=total.values,
                           scene_generation=scene.generation,
                           n_cameras=len(cameras))


def prune(scene: GaussianScene, table: ImportanceTable,
          threshold: float) -> tuple[GaussianScene, int]:
    """Remove primitives with importance strictly below the threshold.

    Returns (pruned scene, removed count); survivor order is preserved.
    Raises StaleTableError when the table was computed for a different
    scene generation.
    """
    table.check(scene)
    keep = table.keep_mask(threshold)
    if not keep.any():
        raise InvalidParameterError(
            f"threshold {threshold} would remove every primitive")
    pruned = scene.subset(keep)
    removed = int((~keep).sum())
    pruned.metadata["prune_threshold"] = threshold
    pruned.metadata["prune_removed"] = removed
    return pruned, removed


def prune_sweep(scene: GaussianScene, table: ImportanceTable,
                thresholds) -> list[dict]:
    """Primitive counts surviving each threshold (no scenes materialized)."""
    table.check(scene)
    rows = []
    for t in thresholds:
        keep = table.keep_mask(float(t))
        rows.append(dict(threshold=float(t), kept=int(keep.sum()),
                         removed=int((~keep).sum())))
    return rows
