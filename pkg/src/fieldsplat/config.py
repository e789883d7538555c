"""Pipeline configuration: defaults, file/flag parsing, fingerprinting.

The config file is a flat list of dotted ``section.key = value`` lines
(``#`` comments allowed). CLI overrides use the same syntax. Unknown keys
are rejected up front. The schedule scale maps the full-scale step schedule
(30k-step training, pruning at 16k/24k) down to desk scale; events that
would land past the end of training are clamped to the final step.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os

import numpy as np
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import InvalidParameterError
from .field import FieldTrainConfig
from .optim import InitConfig, OptimizationConfig
from .synthetic import SyntheticSpec

WORKERS_ENV = "FIELDSPLAT_WORKERS"


def worker_count() -> int:
    """Worker count from the environment; rendering stays deterministic
    regardless because all reductions are order-independent max-merges."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParameterError(f"{WORKERS_ENV} must be an integer, "
                                    f"got {raw!r}")
    if n < 1:
        raise InvalidParameterError(f"{WORKERS_ENV} must be >= 1")
    return n


@dataclass
class DatasetSection:
    kind: str = "blobs"
    image_size: int = 48
    n_train: int = 12
    n_test: int = 4
    n_blobs: int = 4
    grid_resolution: int = 40
    density_scale: float = 1.0
    n_per_room: int = 48
    exposure_lo: float = 1.0
    exposure_hi: float = 1.0


@dataclass
class FieldSection:
    resolution: int = 40
    iterations: int = 1500
    batch_rays: int = 4096
    n_samples: int = 64
    lr: float = 0.05
    glo_lr: float = 0.01
    bbox: float = 0.0             # half-extent of a centered cube; 0: auto


@dataclass
class SupervisionSection:
    n_samples: int = 96


@dataclass
class InitSection:
    n_points: int = 100_000
    opacity: float = 0.1


@dataclass
class OptimizeSection:
    iterations: int = 2000
    lambda_ssim: float = 0.2
    densify_interval: int = 100
    densify_start: int = 50
    densify_end: int = 0          # 0: half the iterations
    grad_threshold: float = 8.6e-5
    min_opacity: float = 0.005
    lr_opacity: float = 0.05
    opacity_reset_interval: int = 0   # 0: disabled
    ssim_win: int = 0             # 0: auto from image size


@dataclass
class PruneSection:
    threshold: float = 0.01
    step_a: int = 16_000          # pre-scale; multiplied by schedule_scale
    step_b: int = 24_000


@dataclass
class VisibilitySection:
    k: int = 8
    t_cluster: float = 0.001
    aux_per_camera: int = 3


@dataclass
class PathsSection:
    dataset_dir: str = "dataset"
    out_dir: str = "out"


_SECTIONS = {
    "dataset": DatasetSection,
    "field": FieldSection,
    "supervision": SupervisionSection,
    "init": InitSection,
    "optimize": OptimizeSection,
    "prune": PruneSection,
    "visibility": VisibilitySection,
    "paths": PathsSection,
}

_TOP_LEVEL = {"seed": int, "schedule_scale": float}


@dataclass
class PipelineConfig:
    seed: int = 0
    schedule_scale: float = 0.1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    field_: FieldSection = field(default_factory=FieldSection)
    supervision: SupervisionSection = field(default_factory=SupervisionSection)
    init: InitSection = field(default_factory=InitSection)
    optimize: OptimizeSection = field(default_factory=OptimizeSection)
    prune: PruneSection = field(default_factory=PruneSection)
    visibility: VisibilitySection = field(default_factory=VisibilitySection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- derived schedules ---------------------------------------------------

    def prune_steps(self) -> tuple:
        """Scaled pruning steps, clamped into the training window."""
        steps = []
        for raw in (self.prune.step_a, self.prune.step_b):
            s = min(max(1, round(raw * self.schedule_scale)),
                    self.optimize.iterations)
            steps.append(s)
        return tuple(sorted(set(steps)))

    def sh_promote_steps(self) -> tuple:
        """Degree 0 -> 3 at scaled 5k/10k/15k of the full-scale timeline."""
        steps = []
        for raw in (5000, 10000, 15000):
            s = round(raw * self.schedule_scale)
            if 1 <= s <= self.optimize.iterations:
                steps.append(s)
        return tuple(steps)

    # -- stage config builders ------------------------------------------------

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.dataset
        exposure = None
        if (d.exposure_lo, d.exposure_hi) != (1.0, 1.0):
            exposure = (d.exposure_lo, d.exposure_hi)
        return SyntheticSpec(kind=d.kind, image_size=d.image_size,
                             n_train=d.n_train, n_test=d.n_test,
                             n_blobs=d.n_blobs,
                             grid_resolution=d.grid_resolution,
                             density_scale=d.density_scale,
                             n_per_room=d.n_per_room,
                             exposure_range=exposure)

    def field_train_config(self) -> FieldTrainConfig:
        f = self.field_
        bbox_min = bbox_max = None
        if f.bbox > 0:
            bbox_min = np.full(3, -f.bbox)
            bbox_max = np.full(3, f.bbox)
        return FieldTrainConfig(resolution=f.resolution,
                                iterations=f.iterations,
                                batch_rays=f.batch_rays,
                                n_samples=f.n_samples,
                                learning_rate=f.lr,
                                glo_learning_rate=f.glo_lr,
                                bbox_min=bbox_min, bbox_max=bbox_max,
                                seed=self.seed)

    def init_config(self) -> InitConfig:
        return InitConfig(n_points=self.init.n_points,
                          initial_opacity=self.init.opacity, seed=self.seed)

    def optimization_config(self) -> OptimizationConfig:
        o = self.optimize
        return OptimizationConfig(
            lambda_ssim=o.lambda_ssim, iterations=o.iterations,
            densify_interval=o.densify_interval,
            densify_start=o.densify_start, densify_end=o.densify_end,
            densify_grad_threshold=o.grad_threshold,
            min_opacity=o.min_opacity, lr_opacity=o.lr_opacity,
            opacity_reset_interval=o.opacity_reset_interval,
            prune_steps=self.prune_steps(),
            sh_promote_steps=self.sh_promote_steps(),
            ssim_win=o.ssim_win or None, seed=self.seed)

    # -- flat dotted view ------------------------------------------------------

    def to_items(self) -> dict:
        out = {"seed": self.seed, "schedule_scale": self.schedule_scale}
        for name, cls in _SECTIONS.items():
            section = getattr(self, "field_" if name == "field" else name)
            for f in fields(cls):
                out[f"{name}.{f.name}"] = getattr(section, f.name)
        return out

    def set_item(self, key: str, raw) -> None:
        if key in _TOP_LEVEL:
            setattr(self, key, _coerce(raw, _TOP_LEVEL[key], key))
            return
        if "." not in key:
            raise InvalidParameterError(f"unknown config key {key!r}")
        section_name, _, attr = key.partition(".")
        cls = _SECTIONS.get(section_name)
        if cls is None:
            raise InvalidParameterError(f"unknown config section "
                                        f"{section_name!r} in {key!r}")
        section = getattr(self, "field_" if section_name == "field"
                          else section_name)
        matching = [f for f in fields(cls) if f.name == attr]
        if not matching:
            raise InvalidParameterError(f"unknown config key {key!r}")
        setattr(section, attr, _coerce(raw, matching[0].type, key))

    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={v!r}" for k, v in sorted(self.to_items().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def to_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.to_items().items())


def _coerce(raw, typ, key: str):
    if not isinstance(raw, str):
        return raw
    typ = {int: int, float: float, str: str, "int": int,
           "float": float, "str": str}.get(typ, typ)
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise InvalidParameterError(f"invalid value {raw!r} for {key}")


def parse_assignments(lines) -> list[tuple[str, str]]:
    """``key = value`` pairs from config-file lines or CLI override strings."""
    out = []
    for i, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InvalidParameterError(
                f"line {i}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        out.append((key.strip(), value.strip()))
    return out


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then file values, then CLI overrides (highest priority)."""
    config = PipelineConfig()
    if path is not None:
        lines = Path(path).read_text().splitlines()
        for key, value in parse_assignments(lines):
            config.set_item(key, value)
    for key, value in parse_assignments(overrides):
        config.set_item(key, value)
    return config
