"""Command-line entry point.

Every subcommand takes ``--config FILE`` (dotted key=value lines) and
repeated ``--set key=value`` overrides; flags win over the file, the file
wins over defaults. ``print-config`` shows the effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import plots
from .config import PipelineConfig, load_config
from .core import ImageBuffer
from .field import (
    FieldRenderConfig,
    render_supervision_set,
    train_field,
)
from .io import (
    atomic_write_bytes,
    atomic_write_text,
    decode_camera_state,
    encode_camera_state,
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
from .pipeline import Pipeline, sweep_prune, write_report_csv, write_trace_csv
from .pruning import compute_importance, prune
from .render import rasterize
from .synthetic import load_dataset, make_synthetic, save_dataset
from .visibility import bake_visibility, cluster_cameras, render_from_viewpoint


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override a config value (repeatable)")


def _config(args) -> PipelineConfig:
    return load_config(args.config, args.overrides)


def _load_dataset_arg(args):
    return load_dataset(args.dataset)


def _cameras_of_split(dataset, split: str):
    if split == "train":
        return dataset.train_cameras, dataset.train_images
    if split == "test":
        return dataset.test_cameras, dataset.test_images
    raise SystemExit(f"unknown split {split!r}")


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_print_config(args) -> int:
    print(_config(args).to_text())
    return 0


def cmd_make_synthetic(args) -> int:
    cfg = _config(args)
    dataset = make_synthetic(cfg.synthetic_spec(), seed=cfg.seed)
    save_dataset(dataset, args.out)
    print(f"wrote dataset ({len(dataset.train_cameras)} train / "
          f"{len(dataset.test_cameras)} test views) to {args.out}")
    return 0


def cmd_train_field(args) -> int:
    cfg = _config(args)
    dataset = _load_dataset_arg(args)
    grid, glos, trace = train_field(dataset.train_images,
                                    dataset.train_cameras,
                                    cfg.field_train_config())
    save_grid(grid, glos, args.out)
    with open(str(args.out) + ".trace.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "loss", "val_loss"])
        w.writeheader()
        w.writerows(trace)
    if trace and trace[-1]["val_loss"] > 0:
        psnr_db = 10 * math.log10(1.0 / trace[-1]["val_loss"])
        print(f"validation psnr {psnr_db:.2f} dB")
    print(f"wrote field checkpoint to {args.out}")
    return 0


def cmd_render_supervision(args) -> int:
    cfg = _config(args)
    grid, _ = load_grid(args.field)
    dataset = _load_dataset_arg(args)
    sset = render_supervision_set(
        grid, dataset.train_cameras,
        FieldRenderConfig(n_samples=cfg.supervision.n_samples))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(sset.images):
        planar = np.ascontiguousarray(img.data.transpose(2, 0, 1), dtype="<f4")
        atomic_write_bytes(out / f"{i:04d}.bin", planar.tobytes())
        Image.fromarray(img.to_srgb_u8()).save(out / f"{i:04d}.png")
    print(f"wrote {len(sset)} supervision renders to {out}")
    return 0


def cmd_init_splats(args) -> int:
    cfg = _config(args)
    grid, _ = load_grid(args.field)
    dataset = _load_dataset_arg(args)
    points, colors = init_point_set(
        grid, dataset.train_cameras, cfg.init_config(),
        FieldRenderConfig(n_samples=cfg.supervision.n_samples))
    scene = init_attributes(points, colors, cfg.init_config())
    save_scene(scene, args.out, dict(seed=cfg.seed,
                                     fingerprint=cfg.fingerprint()))
    print(f"initialized {len(scene)} primitives -> {args.out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    pipeline = Pipeline(cfg, out_dir=Path(args.out).parent)
    sset = pipeline.load_supervision(Path(args.dataset),
                                     Path(args.supervision))
    threshold = cfg.prune.threshold

    def prune_hook(current, step):
        table = compute_importance(current, sset.cameras)
        keep = table.keep_mask(threshold)
        print(f"step {step}: pruned {int((~keep).sum())} of {len(current)}")
        return keep

    final, trace = optimize(scene, sset, cfg.optimization_config(),
                            prune_hook=prune_hook)
    save_scene(final, args.out, dict(seed=cfg.seed,
                                     fingerprint=cfg.fingerprint()))
    write_trace_csv(trace, str(args.out) + ".trace.csv")
    plots.plot_loss_trace(trace, str(args.out) + ".trace.png")
    print(f"optimized scene ({len(final)} primitives) -> {args.out}")
    return 0


def cmd_prune(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    dataset = _load_dataset_arg(args)
    table = compute_importance(scene, dataset.train_cameras)
    if args.table_csv:
        table.write_csv(args.table_csv)
    pruned, removed = prune(scene, table, args.threshold)
    save_scene(pruned, args.out, dict(seed=cfg.seed,
                                      fingerprint=cfg.fingerprint()))
    print(f"removed {removed} of {len(scene)} primitives -> {args.out}")
    return 0


def cmd_bake_visibility(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    dataset = _load_dataset_arg(args)
    centers = np.array([c.center for c in dataset.train_cameras])
    clustering = cluster_cameras(centers, cfg.visibility.k, seed=cfg.seed)
    vis = bake_visibility(scene, clustering, dataset.train_cameras,
                          t_cluster=cfg.visibility.t_cluster,
                          aux_per_camera=cfg.visibility.aux_per_camera,
                          seed=cfg.seed)
    save_visibility(vis, args.out)
    counts = vis.active_counts()
    print(f"baked {vis.k} clusters, active counts "
          f"{counts.min()}..{counts.max()} of {len(scene)} -> {args.out}")
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    if args.pose:
        camera = decode_camera_state(args.pose)
    else:
        if not args.dataset:
            raise SystemExit("render needs either --pose or --dataset")
        dataset = _load_dataset_arg(args)
        cameras, _ = _cameras_of_split(dataset, args.split)
        camera = cameras[args.index]
        if args.print_pose:
            print(encode_camera_state(camera))
    if args.visibility:
        vis = load_visibility(args.visibility, scene)
        out, active, cluster = render_from_viewpoint(scene, vis, camera)
        print(f"cluster {cluster}: {active} of {len(scene)} primitives")
    else:
        out = rasterize(scene, camera)
    Image.fromarray(out.color.to_srgb_u8()).save(args.out)
    print(f"wrote render to {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    dataset = _load_dataset_arg(args)
    cameras, targets = _cameras_of_split(dataset, args.split)
    vis = load_visibility(args.visibility, scene) if args.visibility else None
    report = benchmark(scene, cameras, targets, visibility=vis,
                       config_fingerprint=cfg.fingerprint())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    atomic_write_text(out / "report.txt", report.to_text() + "\n")
    plots.plot_benchmark(report, out / "report.png")
    print(report.to_text())
    return 0


def cmd_sweep_prune(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    dataset = _load_dataset_arg(args)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    rows = sweep_prune(scene, dataset.test_cameras, dataset.test_images,
                       thresholds, args.out, fingerprint=cfg.fingerprint())
    for r in rows:
        psnr = "inf" if math.isinf(r["psnr"]) else f"{r['psnr']:.3f}"
        print(f"t={r['threshold']:<6g} kept={r['count']:<7d} "
              f"psnr={psnr} ssim={r['ssim']:.4f}")
    return 0


def cmd_export_viewer(args) -> int:
    scene = load_scene(args.scene)
    vis = load_visibility(args.visibility, scene) if args.visibility else None
    dataset = _load_dataset_arg(args)
    manifest = export_viewer(scene, vis, dataset.train_cameras, args.out)
    print(f"exported viewer bundle ({manifest['count']} primitives) "
          f"to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    pipeline = Pipeline(cfg, out_dir=args.out)
    results = pipeline.run()
    print(f"pipeline complete; artifacts in {results['scene'].parent}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldsplat",
        description="radiance-field-supervised Gaussian splatting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(fn=fn)
        return p

    add("print-config", cmd_print_config, "show the effective configuration")

    p = add("make-synthetic", cmd_make_synthetic, "generate a synthetic dataset")
    p.add_argument("--out", required=True)

    p = add("train-field", cmd_train_field, "train the radiance-field prior")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = add("render-supervision", cmd_render_supervision,
            "render the zero-embedding supervision set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)

    p = add("init-splats", cmd_init_splats, "field-informed splat initialization")
    p.add_argument("--dataset", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)

    p = add("optimize", cmd_optimize, "optimize splats against supervision")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--supervision", required=True)
    p.add_argument("--out", required=True)

    p = add("prune", cmd_prune, "prune by ray-contribution importance")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--table-csv", default=None,
                   help="also write the importance table as CSV")
    p.add_argument("--out", required=True)

    p = add("bake-visibility", cmd_bake_visibility,
            "cluster cameras and bake per-cluster indicators")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "render one view to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--pose", default=None,
                   help="base64 camera-state share string (overrides "
                        "--dataset/--split/--index)")
    p.add_argument("--print-pose", action="store_true",
                   help="print the share string of the selected camera")
    p.add_argument("--visibility", default=None)
    p.add_argument("--out", required=True)

    p = add("benchmark", cmd_benchmark, "score renders against targets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--visibility", default=None)
    p.add_argument("--out", required=True)

    p = add("sweep-prune", cmd_sweep_prune,
            "benchmark a list of pruning thresholds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--thresholds", default="0,0.01,0.05,0.1,0.25")
    p.add_argument("--out", required=True)

    p = add("export-viewer", cmd_export_viewer,
            "write the browser viewer bundle")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--visibility", default=None)
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "run the full pipeline end to end")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
