"""Figure rendering for the report path: each subcommand drops a PNG
next to its CSV so a results directory reads at a glance.

Uses the Agg backend; nothing here opens a window. Figures are a
convenience layer only: the CSVs remain the contract, and no statistic
is computed here that is not already in the rows being plotted.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def training_curves(rows_per_seed: dict, path) -> None:
    """Eval coverage vs environment steps, one line per seed."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for seed, rows in sorted(rows_per_seed.items()):
        steps = [row["step"] for row in rows]
        cov = [row["mean_eval_coverage"] for row in rows]
        ax.plot(steps, cov, marker="o", markersize=3, label=f"seed {seed}")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean eval coverage")
    ax.set_title("training progress")
    ax.grid(True, alpha=0.3)
    if rows_per_seed:
        ax.legend()
    _save(fig, path)


def eval_summary(stats_per_seed: dict, is_combat: bool, path) -> None:
    """Per-seed bars: coverage ratio for relay runs, win rate for
    engagements."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    seeds = sorted(stats_per_seed)
    if is_combat:
        vals = [
            float(np.mean([1.0 if s.win else 0.0 for s in stats_per_seed[k]]))
            if stats_per_seed[k] else 0.0
            for k in seeds
        ]
        ax.set_ylabel("win rate")
    else:
        vals = [
            float(np.mean([s.mean_coverage_ratio for s in stats_per_seed[k]]))
            if stats_per_seed[k] else 0.0
            for k in seeds
        ]
        ax.set_ylabel("mean coverage ratio")
    ax.bar([str(k) for k in seeds], vals, color="tab:blue")
    ax.set_xlabel("seed")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("evaluation")
    _save(fig, path)


def baseline_bounds(rows: list, path) -> None:
    """Distribution of per-snapshot coverage bounds, split by solver."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for solver, color in (("exact", "tab:green"), ("greedy", "tab:orange")):
        vals = [row["coverage_bound"] for row in rows if row["solver"] == solver]
        if vals:
            ax.hist(vals, bins=np.linspace(0.0, 1.0, 21), alpha=0.6,
                    color=color, label=f"{solver} ({len(vals)})")
    ax.set_xlabel("coverage bound")
    ax.set_ylabel("snapshots")
    ax.set_title("placement upper bounds")
    if rows:
        ax.legend()
    _save(fig, path)


def zero_shot_curve(rows: list, path) -> None:
    """Coverage across team sizes for one checkpoint."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    sizes = [row["num_uavs"] for row in rows]
    cov = [row["coverage_ratio"] for row in rows]
    ax.plot(sizes, cov, marker="s", color="tab:blue")
    for row in rows:
        ax.annotate(str(row["num_nodes"]), (row["num_uavs"], row["coverage_ratio"]),
                    textcoords="offset points", xytext=(0, 8), fontsize=8)
    ax.set_xlabel("team size (annotations: node count)")
    ax.set_ylabel("coverage ratio")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("zero-shot transfer")
    ax.grid(True, alpha=0.3)
    _save(fig, path)
