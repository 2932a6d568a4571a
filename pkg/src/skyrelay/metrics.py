"""Evaluation statistics recomputable from trajectory logs: coverage
ratio, coverage overlap, comm-graph component counts, win rates, seed
aggregation, and the table-shaped CSV files the harness emits.

Every statistic here is a pure function of persisted logs so that
numbers in a results table can always be regenerated bit-for-bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import graph, learner
from .errors import ConfigError, DomainError

RESULTS_COLUMNS = (
    "method", "num_uavs", "num_nodes", "comm", "obs", "coverage_mean", "coverage_std"
)
ZERO_SHOT_COLUMNS = ("num_uavs", "num_nodes", "comm", "obs", "coverage_ratio")
COMBAT_COLUMNS = ("method", "win_rate", "win_rate_std", "avg_episode_steps", "steps_std")


@dataclass
class EpisodeStats:
    mean_coverage_ratio: float
    overlap_rate: float
    mean_reward: float
    episode_length: int
    comm_component_count_mean: float
    win: bool | None = None  # engagement episodes only
    episode_steps: int | None = None


# ---------------------------------------------------------------------------
# relay-task statistics


def coverage_ratio(trajectory: list) -> float:
    """Mean over steps of (covered nodes) / (total nodes)."""
    if not trajectory:
        raise DomainError("coverage_ratio needs a nonempty trajectory")
    per_step = [float(np.mean(rec["coverage_mask"])) for rec in trajectory]
    return float(np.mean(per_step))


def _cover_counts(rec: dict, r_cov: float) -> np.ndarray:
    """How many drones cover each node at this step."""
    nodes = np.asarray(rec["node_pos"], dtype=np.float64)
    uavs = np.asarray(rec["uav_pos"], dtype=np.float64)
    d = np.linalg.norm(nodes[:, None, :] - uavs[None, :, :], axis=2)
    return (d <= r_cov).sum(axis=1)


def overlap_rate(trajectory: list, r_cov: float) -> float:
    """Fraction of covered nodes simultaneously covered by 2+ drones,
    averaged over steps that cover at least one node (the ratio is
    undefined on the others, so they are skipped)."""
    if not trajectory:
        raise DomainError("overlap_rate needs a nonempty trajectory")
    per_step = []
    for rec in trajectory:
        counts = _cover_counts(rec, r_cov)
        covered = int((counts >= 1).sum())
        if covered == 0:
            continue
        per_step.append(float((counts >= 2).sum()) / covered)
    return float(np.mean(per_step)) if per_step else 0.0


@dataclass
class _Positions:
    uav_pos: np.ndarray


def comm_component_count_mean(trajectory: list, config) -> float:
    """Mean number of connected components of the drone comm graph."""
    if not trajectory:
        raise DomainError("comm_component_count_mean needs a nonempty trajectory")
    counts = []
    for rec in trajectory:
        shim = _Positions(uav_pos=np.asarray(rec["uav_pos"], dtype=np.float64))
        counts.append(len(graph.connected_components(graph.comm_adjacency(shim, config))))
    return float(np.mean(counts))


def episode_stats(trajectory: list, config) -> EpisodeStats:
    return EpisodeStats(
        mean_coverage_ratio=coverage_ratio(trajectory),
        overlap_rate=overlap_rate(trajectory, config.r_cov),
        mean_reward=float(np.mean([rec["reward"] for rec in trajectory])),
        episode_length=len(trajectory),
        comm_component_count_mean=comm_component_count_mean(trajectory, config),
    )


def combat_episode_stats(header: dict, events: list, team_name: str = "attacker") -> EpisodeStats:
    """Win flag and episode length for one engagement event log."""
    if not events:
        raise DomainError("combat_episode_stats needs at least one event")
    return EpisodeStats(
        mean_coverage_ratio=0.0,
        overlap_rate=0.0,
        mean_reward=0.0,
        episode_length=len(events),
        comm_component_count_mean=0.0,
        win=events[-1]["winner"] == team_name,
        episode_steps=len(events),
    )


# ---------------------------------------------------------------------------
# aggregation across seeds


_SCALAR_FIELDS = (
    "mean_coverage_ratio",
    "overlap_rate",
    "mean_reward",
    "episode_length",
    "comm_component_count_mean",
)


def _mean_std(per_seed: list) -> tuple:
    # identical per-seed means report exactly zero spread
    if all(v == per_seed[0] for v in per_seed):
        return (per_seed[0], 0.0)
    return (float(np.mean(per_seed)), float(np.std(per_seed)))


def aggregate_seeds(seed_groups: list) -> dict:
    """Per-metric (mean, std) across seeds.

    `seed_groups` is one list of EpisodeStats per seed. Episodes are
    averaged within each seed first; the reported std is the population
    std of the per-seed means (matching "mean +/- std over k seeds").
    A draw counts as a loss in the win rate.
    """
    if not seed_groups or any(not g for g in seed_groups):
        raise DomainError("aggregate_seeds needs at least one episode per seed")
    out = {}
    for name in _SCALAR_FIELDS:
        out[name] = _mean_std(
            [float(np.mean([getattr(e, name) for e in g])) for g in seed_groups])
    if all(e.win is not None for g in seed_groups for e in g):
        out["win_rate"] = _mean_std(
            [float(np.mean([1.0 if e.win else 0.0 for e in g])) for g in seed_groups])
        out["episode_steps"] = _mean_std(
            [float(np.mean([e.episode_steps for e in g])) for g in seed_groups])
    return out


# ---------------------------------------------------------------------------
# zero-shot transfer sweep


def zero_shot_sweep(view, env_for_size, team_sizes, episodes=10, seed_key=(0, 2)) -> list:
    """Evaluate one trained policy across team sizes without fine-tuning.

    `env_for_size(m)` returns (env_factory, info) where info carries the
    row fields (num_nodes, comm, obs). The encoder tolerates any agent
    count, so each size reuses the same parameters unchanged. Every row
    draws the same episode seed stream; the row at the training size is
    therefore the standard evaluation number, identically. Returns rows
    shaped like the zero-shot results table.
    """
    rows = []
    for m in team_sizes:
        factory, info = env_for_size(int(m))
        score, _ = learner.evaluate_policy(factory, view, episodes, seed_key)
        row = {"num_uavs": int(m)}
        row.update(info)
        row["coverage_ratio"] = score
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# CSV files


def format_value(v) -> str:
    """Deterministic cell text: repr for floats (exact round trip),
    plain str otherwise."""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows, comments=()) -> None:
    """Write '#' comment lines, a header, then one line per row dict.

    Output is byte-deterministic for identical inputs: fixed column
    order, repr-formatted floats, '\\n' line endings.
    """
    for row in rows:
        missing = [c for c in columns if c not in row]
        if missing:
            raise ConfigError(f"row missing columns {missing}: {sorted(row)}")
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in columns])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Returns (comment_lines, columns, rows-as-dicts of strings)."""
    comments, header, rows = [], None, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = tuple(cells)
            else:
                rows.append(dict(zip(header, cells)))
    if header is None:
        raise DomainError(f"no header row in {path}")
    return comments, header, rows
