"""Report figures rendered to files next to the CSV outputs."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_trace(trace: list[dict], path) -> None:
    """Loss curve plus the primitive-count curve on a second axis."""
    steps = [r["step"] for r in trace]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r["loss"] for r in trace], lw=0.8, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(steps, [r["primitive_count"] for r in trace],
             color="tab:orange", lw=0.8, label="primitives")
    ax2.set_ylabel("primitive count")
    ax.set_title("optimization trace")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_prune_sweep(rows: list[dict], path) -> None:
    """PSNR / primitive count against pruning threshold."""
    thresholds = [r["threshold"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    psnrs = [r["psnr"] for r in rows]
    finite = [p for p in psnrs if math.isfinite(p)]
    cap = max(finite) + 5 if finite else 1.0
    ax1.plot(thresholds, [min(p, cap) for p in psnrs], "o-")
    ax1.set_xlabel("prune threshold")
    ax1.set_ylabel("test PSNR (dB)")
    ax2.plot(thresholds, [r["count"] for r in rows], "o-", color="tab:orange")
    ax2.set_xlabel("prune threshold")
    ax2.set_ylabel("surviving primitives")
    fig.suptitle("pruning threshold sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_benchmark(report, path) -> None:
    """Per-view PSNR bars with the mean marked."""
    psnrs = report.per_view_psnr
    finite = [p for p in psnrs if math.isfinite(p)]
    cap = (max(finite) + 5) if finite else 100.0
    shown = [min(p, cap) for p in psnrs]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(shown)), shown)
    if finite:
        ax.axhline(sum(finite) / len(finite), color="tab:red", lw=1,
                   label="mean")
        ax.legend()
    ax.set_xlabel("view")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"benchmark ({report.primitive_count} primitives)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
