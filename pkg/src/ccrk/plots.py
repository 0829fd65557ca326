"""Figure rendering for the CLI report paths.

Every plotting function takes already-computed data and writes a PNG next
to the delimited artifact it illustrates. Import stays lazy so headless
library use never touches matplotlib.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_sweep(points, path, label: str) -> None:
    """Controlled angle vs measured angle, log-log, with a p5-p95 band."""
    plt = _plt()
    xs = [p.controlled_angle for p in points]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.fill_between(xs, [max(p.p5, 1e-12) for p in points],
                    [max(p.p95, 1e-12) for p in points], alpha=0.25, label="p5-p95")
    ax.plot(xs, [max(p.mean, 1e-12) for p in points], "o-", label="mean")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("controlled angle (rad)")
    ax.set_ylabel(f"{label} (rad)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trace(trace, path) -> None:
    """Per-step loss components for one training run."""
    plt = _plt()
    steps = [s.step for s in trace.steps]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [s.total for s in trace.steps], label="total", lw=1.5)
    ax.plot(steps, [s.kcl_i2t for s in trace.steps], label="contrastive i2t", lw=0.8)
    ax.plot(steps, [s.kcl_t2i for s in trace.steps], label="contrastive t2i", lw=0.8)
    if any(s.mitm for s in trace.steps):
        ax.plot(steps, [s.mitm for s in trace.steps], label="match", lw=0.8)
    if any(s.cmlm for s in trace.steps):
        ax.plot(steps, [s.cmlm for s in trace.steps], label="masked-token", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_checkpoints(trace, path) -> None:
    """Recall@1 and rank variance against training epoch."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for direction in ("TR", "IR"):
        pts = [c for c in trace.checkpoints if c.direction == direction]
        ax1.plot([c.epoch for c in pts], [c.mean_r1 for c in pts], "o-", label=direction)
        if all(c.mrv is not None for c in pts):
            ax2.plot([c.epoch for c in pts], [c.mrv for c in pts], "o-", label=direction)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean Recall@1")
    ax1.legend()
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean rank variance")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_comparison(report, path) -> None:
    """Checkpoint Recall@1 and rank variance for both contrastive modes."""
    plt = _plt()
    rows = report.checkpoint_rows()
    modes = sorted({r["mode"] for r in rows})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for mode in modes:
        mode_rows = [r for r in rows if r["mode"] == mode]
        epochs = sorted({r["epoch"] for r in mode_rows})
        r1 = [np.mean([r["mean_r1"] for r in mode_rows if r["epoch"] == e]) for e in epochs]
        mv = [np.mean([r["mrv"] for r in mode_rows if r["epoch"] == e]) for e in epochs]
        ax1.plot(epochs, r1, "o-", label=mode)
        ax2.plot(epochs, mv, "o-", label=mode)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean Recall@1")
    ax1.legend()
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean rank variance")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
