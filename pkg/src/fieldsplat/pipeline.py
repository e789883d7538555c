"""End-to-end pipeline: staged execution with content-addressed resumability.

Each stage writes its outputs under ``<out>/stages/<name>-<hash>/`` where
the hash covers the relevant config subset plus the input artifacts. A
completed stage leaves a DONE marker and is skipped on rerun, so resuming
after an interruption reproduces the uninterrupted run bit for bit: every
stage reads its inputs from the persisted artifacts of the previous one,
never from live memory.

Stage chain: dataset -> field training -> supervision renders -> splat
initialization -> optimization (with scheduled pruning) -> visibility
baking -> benchmark.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import shutil
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .core import ImageBuffer
from .field import (
    FieldRenderConfig,
    SupervisionSet,
    train_field,
)
from .io import (
    atomic_write_bytes,
    atomic_write_text,
    export_viewer,
    load_grid,
    load_scene,
    load_visibility,
    save_grid,
    save_scene,
    save_visibility,
)
from .metrics import benchmark
from .optim import init_attributes, init_point_set, optimize
from .pruning import compute_importance
from .synthetic import load_dataset, make_synthetic, save_dataset
from .visibility import bake_visibility, cluster_cameras
from . import plots


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_tree(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_file():
        return _hash_file(path)
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(path)).encode())
            h.update(_hash_file(f).encode())
    return h.hexdigest()


class Pipeline:
    def __init__(self, config: PipelineConfig, out_dir=None):
        self.config = config
        self.out = Path(out_dir if out_dir is not None else config.paths.out_dir)
        self.log_lines: list[str] = []

    def _log(self, msg: str) -> None:
        self.log_lines.append(msg)
        print(msg, flush=True)

    def _stage(self, name: str, config_subset: dict, inputs: list,
               builder) -> Path:
        """Run (or skip) one stage; returns its content-addressed directory."""
        h = hashlib.sha256()
        h.update(json.dumps(config_subset, sort_keys=True,
                            default=str).encode())
        for p in inputs:
            h.update(_hash_tree(Path(p)).encode())
        stage_dir = self.out / "stages" / f"{name}-{h.hexdigest()[:12]}"
        done = stage_dir / "DONE"
        if done.exists():
            self._log(f"[{name}] up to date: {stage_dir.name}")
            return stage_dir
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        try:
            builder(stage_dir)
        except Exception as exc:
            raise StageError(name, exc) from exc
        atomic_write_text(done, "ok\n")
        self._log(f"[{name}] built: {stage_dir.name}")
        return stage_dir

    # -- stages ---------------------------------------------------------------

    def stage_dataset(self) -> Path:
        cfg = self.config
        dataset_dir = Path(cfg.paths.dataset_dir)
        if (dataset_dir / "cameras.json").exists():
            return dataset_dir
        subset = dict(cfg.to_items())
        subset = {k: v for k, v in subset.items() if k.startswith("dataset.")}
        subset["seed"] = cfg.seed

        def build(stage_dir):
            dataset = make_synthetic(cfg.synthetic_spec(), seed=cfg.seed)
            save_dataset(dataset, stage_dir / "data")

        stage = self._stage("dataset", subset, [], build)
        return stage / "data"

    def stage_train_field(self, dataset_dir: Path) -> Path:
        cfg = self.config
        subset = {k: v for k, v in cfg.to_items().items()
                  if k.startswith("field.")}
        subset["seed"] = cfg.seed

        def build(stage_dir):
            dataset = load_dataset(dataset_dir)
            grid, glos, trace = train_field(dataset.train_images,
                                            dataset.train_cameras,
                                            cfg.field_train_config())
            save_grid(grid, glos, stage_dir / "field.ckpt")
            with open(stage_dir / "field_trace.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=["step", "loss", "val_loss"])
                w.writeheader()
                w.writerows(trace)
            if trace:
                val = trace[-1]["val_loss"]
                if val > 0:
                    self._log(f"[train-field] validation psnr "
                              f"{10 * math.log10(1.0 / val):.2f} dB")

        return self._stage("train-field", subset, [dataset_dir], build)

    def stage_supervision(self, dataset_dir: Path, field_dir: Path) -> Path:
        cfg = self.config
        subset = {"supervision.n_samples": cfg.supervision.n_samples}

        def build(stage_dir):
            from .field import render_supervision_set
            grid, _ = load_grid(field_dir / "field.ckpt")
            dataset = load_dataset(dataset_dir)
            sset = render_supervision_set(
                grid, dataset.train_cameras,
                FieldRenderConfig(n_samples=cfg.supervision.n_samples))
            for i, img in enumerate(sset.images):
                planar = np.ascontiguousarray(
                    img.data.transpose(2, 0, 1), dtype="<f4")
                atomic_write_bytes(stage_dir / f"{i:04d}.bin",
                                   planar.tobytes())

        return self._stage("supervision", subset,
                           [dataset_dir, field_dir / "field.ckpt"], build)

    def load_supervision(self, dataset_dir: Path,
                         supervision_dir: Path) -> SupervisionSet:
        dataset = load_dataset(dataset_dir)
        images = []
        for i, cam in enumerate(dataset.train_cameras):
            raw = np.frombuffer((supervision_dir / f"{i:04d}.bin").read_bytes(),
                                dtype="<f4")
            data = raw.reshape(3, cam.height, cam.width).transpose(1, 2, 0)
            images.append(ImageBuffer(data.astype(np.float64)))
        return SupervisionSet(cameras=tuple(dataset.train_cameras),
                              images=tuple(images))

    def stage_init(self, dataset_dir: Path, field_dir: Path) -> Path:
        cfg = self.config
        subset = {k: v for k, v in cfg.to_items().items()
                  if k.startswith("init.")}
        subset["seed"] = cfg.seed
        subset["supervision.n_samples"] = cfg.supervision.n_samples

        def build(stage_dir):
            grid, _ = load_grid(field_dir / "field.ckpt")
            dataset = load_dataset(dataset_dir)
            points, colors = init_point_set(
                grid, dataset.train_cameras, cfg.init_config(),
                FieldRenderConfig(n_samples=cfg.supervision.n_samples))
            scene = init_attributes(points, colors, cfg.init_config())
            save_scene(scene, stage_dir / "init.rspl",
                       dict(seed=cfg.seed, fingerprint=cfg.fingerprint()))
            self._log(f"[init-splats] {len(scene)} primitives")

        return self._stage("init-splats", subset,
                           [dataset_dir, field_dir / "field.ckpt"], build)

    def stage_optimize(self, dataset_dir: Path, init_dir: Path,
                       supervision_dir: Path) -> Path:
        cfg = self.config
        subset = {k: v for k, v in cfg.to_items().items()
                  if k.startswith(("optimize.", "prune."))}
        subset["seed"] = cfg.seed
        subset["schedule_scale"] = cfg.schedule_scale

        def build(stage_dir):
            scene = load_scene(init_dir / "init.rspl")
            sset = self.load_supervision(dataset_dir, supervision_dir)
            threshold = cfg.prune.threshold

            def prune_hook(current, step):
                table = compute_importance(current, sset.cameras)
                keep = table.keep_mask(threshold)
                self._log(f"[optimize] step {step}: pruned "
                          f"{int((~keep).sum())} of {len(current)}")
                return keep

            final, trace = optimize(scene, sset, cfg.optimization_config(),
                                    prune_hook=prune_hook)
            save_scene(final, stage_dir / "scene.rspl",
                       dict(seed=cfg.seed, fingerprint=cfg.fingerprint()))
            write_trace_csv(trace, stage_dir / "trace.csv")
            plots.plot_loss_trace(trace, stage_dir / "trace.png")
            self._log(f"[optimize] final primitives: {len(final)}")

        return self._stage("optimize", subset,
                           [dataset_dir, init_dir / "init.rspl",
                            supervision_dir], build)

    def stage_visibility(self, dataset_dir: Path, optimize_dir: Path) -> Path:
        cfg = self.config
        subset = {k: v for k, v in cfg.to_items().items()
                  if k.startswith("visibility.")}
        subset["seed"] = cfg.seed

        def build(stage_dir):
            scene = load_scene(optimize_dir / "scene.rspl")
            dataset = load_dataset(dataset_dir)
            centers = np.array([c.center for c in dataset.train_cameras])
            clustering = cluster_cameras(centers, cfg.visibility.k,
                                         seed=cfg.seed)
            vis = bake_visibility(scene, clustering, dataset.train_cameras,
                                  t_cluster=cfg.visibility.t_cluster,
                                  aux_per_camera=cfg.visibility.aux_per_camera,
                                  seed=cfg.seed)
            save_visibility(vis, stage_dir / "visibility.rvis")
            counts = vis.active_counts()
            self._log(f"[bake-visibility] active counts "
                      f"{counts.min()}..{counts.max()} of {len(scene)}")

        return self._stage("bake-visibility", subset,
                           [dataset_dir, optimize_dir / "scene.rspl"], build)

    def stage_benchmark(self, dataset_dir: Path, optimize_dir: Path,
                        visibility_dir: Path) -> Path:
        cfg = self.config
        subset = {"fingerprint": cfg.fingerprint()}

        def build(stage_dir):
            scene = load_scene(optimize_dir / "scene.rspl")
            dataset = load_dataset(dataset_dir)
            vis = load_visibility(visibility_dir / "visibility.rvis", scene)
            report = benchmark(scene, dataset.test_cameras,
                               dataset.test_images,
                               config_fingerprint=cfg.fingerprint())
            filtered = benchmark(scene, dataset.test_cameras,
                                 dataset.test_images, visibility=vis,
                                 config_fingerprint=cfg.fingerprint())
            write_report_csv(report, stage_dir / "report.csv")
            write_report_csv(filtered, stage_dir / "report_filtered.csv")
            atomic_write_text(stage_dir / "report.txt",
                              report.to_text() + "\n\nfiltered:\n"
                              + filtered.to_text() + "\n")
            plots.plot_benchmark(report, stage_dir / "report.png")
            self._log("[benchmark]\n" + report.to_text())

        return self._stage("benchmark", subset,
                           [dataset_dir, optimize_dir / "scene.rspl",
                            visibility_dir / "visibility.rvis"], build)

    # -- full run ---------------------------------------------------------------

    def run(self) -> dict:
        dataset_dir = self.stage_dataset()
        field_dir = self.stage_train_field(dataset_dir)
        supervision_dir = self.stage_supervision(dataset_dir, field_dir)
        init_dir = self.stage_init(dataset_dir, field_dir)
        optimize_dir = self.stage_optimize(dataset_dir, init_dir,
                                           supervision_dir)
        visibility_dir = self.stage_visibility(dataset_dir, optimize_dir)
        bench_dir = self.stage_benchmark(dataset_dir, optimize_dir,
                                         visibility_dir)

        # convenience copies of the final artifacts at the output root
        self.out.mkdir(parents=True, exist_ok=True)
        artifacts = {
            "scene": optimize_dir / "scene.rspl",
            "scene_sidecar": optimize_dir / "scene.rspl.json",
            "visibility": visibility_dir / "visibility.rvis",
            "trace_csv": optimize_dir / "trace.csv",
            "trace_png": optimize_dir / "trace.png",
            "report_csv": bench_dir / "report.csv",
            "report_filtered_csv": bench_dir / "report_filtered.csv",
            "report_txt": bench_dir / "report.txt",
            "report_png": bench_dir / "report.png",
            "field": field_dir / "field.ckpt",
        }
        for name, src in artifacts.items():
            shutil.copyfile(src, self.out / src.name)
        atomic_write_text(self.out / "run.log", "\n".join(self.log_lines) + "\n")
        out = {k: self.out / v.name for k, v in artifacts.items()}
        out["dataset"] = dataset_dir
        return out

    def export_viewer_bundle(self, out_dir=None) -> dict:
        """Export the final scene + visibility for the browser viewer."""
        results = self.run()
        scene = load_scene(results["scene"])
        vis = load_visibility(results["visibility"], scene)
        dataset = load_dataset(results["dataset"])
        target = Path(out_dir) if out_dir else self.out / "viewer"
        return export_viewer(scene, vis, dataset.train_cameras, target)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def write_trace_csv(trace: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "loss", "mse", "ssim",
                                           "primitive_count"])
        w.writeheader()
        w.writerows(trace)


def write_report_csv(report, path) -> None:
    rows = report.rows()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["view", "psnr", "ssim", "active",
                                           "seconds"])
        w.writeheader()
        w.writerows(rows)


def sweep_prune(scene, cameras, targets, thresholds, out_dir,
                fingerprint: str = "") -> list[dict]:
    """Prune a copy of the scene at each threshold and benchmark it.

    Emits sweep.csv plus a figure in ``out_dir`` and returns the rows.
    """
    from .pruning import prune

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = compute_importance(scene, cameras)
    rows = []
    for t in thresholds:
        if t <= 0:
            pruned, removed = scene, 0
        else:
            pruned, removed = prune(scene, table, float(t))
        report = benchmark(pruned, cameras, targets,
                           config_fingerprint=fingerprint)
        rows.append(dict(threshold=float(t), count=len(pruned),
                         removed=removed, psnr=report.mean_psnr,
                         ssim=report.mean_ssim))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["threshold", "count", "removed",
                                           "psnr", "ssim"])
        w.writeheader()
        w.writerows(rows)
    plots.plot_prune_sweep(rows, out / "sweep.png")
    return rows
