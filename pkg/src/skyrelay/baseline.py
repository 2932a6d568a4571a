"""Static maximum-coverage placement over a candidate grid.

Given a frozen snapshot of ground nodes, pick M grid points for the
relay drones to maximize covered node weight minus a relocation
penalty. The exact solver is a depth-first branch and bound; the greedy
solver takes marginal-gain assignments and inherits the usual (1 - 1/e)
guarantee in the pure-coverage regime. Both are deterministic: ties go
to the lowest grid index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, ConfigError

EXACT = "exact"
GREEDY = "greedy"


@dataclass
class CoverageInstance:
    node_positions: np.ndarray  # (N, 2)
    node_weights: np.ndarray  # (N,) nonnegative
    uav_origins: np.ndarray  # (M, 2)
    candidate_grid: np.ndarray  # (G, 2)
    r_cov: float
    relocation_weight: float = 0.0

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=np.float64).reshape(-1, 2)
        self.node_weights = np.asarray(self.node_weights, dtype=np.float64).reshape(-1)
        self.uav_origins = np.asarray(self.uav_origins, dtype=np.float64).reshape(-1, 2)
        self.candidate_grid = np.asarray(self.candidate_grid, dtype=np.float64).reshape(-1, 2)
        if self.candidate_grid.shape[0] == 0:
            raise ConfigError("candidate_grid must be nonempty")
        if self.node_weights.shape[0] != self.node_positions.shape[0]:
            raise ConfigError(
                f"{self.node_weights.shape[0]} weights for {self.node_positions.shape[0]} nodes"
            )
        if np.any(self.node_weights < 0):
            raise ConfigError("node weights must be nonnegative")
        if self.r_cov <= 0:
            raise ConfigError(f"r_cov must be positive, got {self.r_cov}")
        if self.relocation_weight < 0:
            raise ConfigError(f"relocation_weight must be >= 0, got {self.relocation_weight}")


@dataclass
class PlacementSolution:
    placements: np.ndarray  # (M, 2), rows drawn from candidate_grid
    objective: float
    covered_mask: np.ndarray  # (N,) bool
    optimality_flag: str  # EXACT or GREEDY
    grid_indices: tuple  # chosen grid index per drone


def objective_value(instance: CoverageInstance, placements) -> tuple:
    """(objective, covered_mask) for explicit placements.

    Covered weight counts nodes within r_cov of any placement; the
    relocation penalty pairs placement i with origin i.
    """
    placements = np.asarray(placements, dtype=np.float64).reshape(-1, 2)
    d = np.linalg.norm(
        instance.node_positions[:, None, :] - placements[None, :, :], axis=2
    )
    covered = d.min(axis=1) <= instance.r_cov if placements.size else np.zeros(
        instance.node_positions.shape[0], dtype=bool
    )
    obj = float(instance.node_weights[covered].sum())
    if instance.relocation_weight > 0.0:
        moved = np.linalg.norm(placements - instance.uav_origins[: len(placements)], axis=1)
        obj -= instance.relocation_weight * float(moved.sum())
    return obj, covered


def _cover_bitmasks(instance: CoverageInstance) -> list:
    """Per grid point, an integer bitmask of the nodes it covers."""
    d = np.linalg.norm(
        instance.node_positions[None, :, :] - instance.candidate_grid[:, None, :], axis=2
    )
    within = d <= instance.r_cov
    masks = []
    for g in range(instance.candidate_grid.shape[0]):
        m = 0
        for j in np.flatnonzero(within[g]):
            m |= 1 << int(j)
        masks.append(m)
    return masks


def _mask_weight(mask: int, weights: np.ndarray) -> float:
    total = 0.0
    j = 0
    while mask:
        if mask & 1:
            total += weights[j]
        mask >>= 1
        j += 1
    return float(total)


def _solution(instance, indices, flag) -> PlacementSolution:
    placements = instance.candidate_grid[list(indices)]
    obj, covered = objective_value(instance, placements)
    return PlacementSolution(
        placements=placements,
        objective=obj,
        covered_mask=covered,
        optimality_flag=flag,
        grid_indices=tuple(int(i) for i in indices),
    )


def solve_exact(
    instance: CoverageInstance, m: int | None = None, expansion_budget: int = 2_000_000
) -> PlacementSolution:
    """Grid-restricted optimum by branch and bound.

    The bound is optimistic remaining coverage: current objective plus
    the total weight of still-uncovered nodes, with future relocation
    taken as zero. With no relocation penalty the objective is symmetric
    in the drones, so the search is restricted to nondecreasing index
    tuples. Raises a budget error on instances too large for the
    configured node-expansion budget.
    """
    if m is None:
        m = instance.uav_origins.shape[0]
    if m < 1:
        raise ConfigError(f"need at least one drone, got {m}")
    grid = instance.candidate_grid
    g_count = grid.shape[0]
    weights = instance.node_weights
    total_weight = float(weights.sum())
    masks = _cover_bitmasks(instance)
    symmetric = instance.relocation_weight == 0.0
    reloc = None
    if not symmetric:
        reloc = instance.relocation_weight * np.linalg.norm(
            grid[None, :, :] - instance.uav_origins[:m, None, :], axis=2
        )  # (m, G) penalty of sending drone i to grid point g

    best = {"obj": -np.inf, "idx": None}
    expansions = 0

    def visit(depth, lo, covered_mask, cov_weight, reloc_cost, prefix):
        nonlocal expansions
        expansions += 1
        if expansions > expansion_budget:
            raise BudgetExceededError(
                f"exact solver exceeded {expansion_budget} node expansions "
                f"(grid {g_count}, drones {m}); use solve_greedy for instances this size"
            )
        if depth == m:
            obj = cov_weight - reloc_cost
            if obj > best["obj"] + 1e-12:
                best["obj"] = obj
                best["idx"] = tuple(prefix)
            return
        # optimistic completion: cover every remaining node for free
        bound = cov_weight - reloc_cost + (total_weight - cov_weight)
        if bound <= best["obj"] + 1e-12:
            return
        if symmetric and covered_mask_all and covered_mask == covered_mask_all:
            # nothing left to gain; repeating the last choice is the
            # lexicographically first completion
            visit(m, lo, covered_mask, cov_weight, reloc_cost, prefix + [lo] * (m - depth))
            return
        start = lo if symmetric else 0
        for g in range(start, g_count):
            new_mask = covered_mask | masks[g]
            gained = _mask_weight(new_mask & ~covered_mask, weights)
            step_reloc = 0.0 if symmetric else float(reloc[depth, g])
            prefix.append(g)
            visit(depth + 1, g, new_mask, cov_weight + gained, reloc_cost + step_reloc, prefix)
            prefix.pop()

    covered_mask_all = 0
    for mask in masks:
        covered_mask_all |= mask
    visit(0, 0, 0, 0.0, 0.0, [])
    return _solution(instance, best["idx"], EXACT)


def solve_greedy(instance: CoverageInstance, m: int | None = None) -> PlacementSolution:
    """Marginal-gain assignment: repeatedly give some unplaced drone the
    grid point with the largest objective gain (coverage gained minus
    that drone's relocation penalty). Ties go to the lowest (drone,
    grid) pair."""
    if m is None:
        m = instance.uav_origins.shape[0]
    if m < 1:
        raise ConfigError(f"need at least one drone, got {m}")
    grid = instance.candidate_grid
    masks = _cover_bitmasks(instance)
    weights = instance.node_weights
    reloc = instance.relocation_weight * np.linalg.norm(
        grid[None, :, :] - instance.uav_origins[:m, None, :], axis=2
    )
    chosen = {}
    covered = 0
    for _ in range(m):
        best_gain, best_pair = -np.inf, None
        for i in range(m):
            if i in chosen:
                continue
            for g in range(grid.shape[0]):
                gain = _mask_weight(masks[g] & ~covered, weights) - float(reloc[i, g])
                if gain > best_gain + 1e-12:
                    best_gain, best_pair = gain, (i, g)
        i, g = best_pair
        chosen[i] = g
        covered |= masks[g]
    return _solution(instance, [chosen[i] for i in sorted(chosen)], GREEDY)


def arena_grid(side: float, resolution: int = 10) -> np.ndarray:
    """Cell centers of a resolution x resolution grid over the arena."""
    ticks = (np.arange(resolution) + 0.5) * (side / resolution)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def coverage_upper_bound(snapshot, config, resolution: int = 10) -> float:
    """Best covered-node ratio over grid placements for one snapshot.

    Pure coverage (no relocation term), so the value bounds any policy
    whose drones sit on the same grid. The bound is relative to the
    grid, not to continuous space.
    """
    instance = CoverageInstance(
        node_positions=snapshot.node_pos,
        node_weights=np.ones(snapshot.node_pos.shape[0]),
        uav_origins=snapshot.uav_pos,
        candidate_grid=arena_grid(config.arena_side, resolution),
        r_cov=config.r_cov,
        relocation_weight=0.0,
    )
    sol = solve_exact(instance)
    return float(sol.covered_mask.sum()) / snapshot.node_pos.shape[0]


# ---------------------------------------------------------------------------
# serialization


def instance_to_json(instance: CoverageInstance) -> str:
    return json.dumps(
        {
            "node_positions": instance.node_positions.tolist(),
            "node_weights": instance.node_weights.tolist(),
            "uav_origins": instance.uav_origins.tolist(),
            "candidate_grid": instance.candidate_grid.tolist(),
            "r_cov": instance.r_cov,
            "relocation_weight": instance.relocation_weight,
        }
    )


def instance_from_json(text: str) -> CoverageInstance:
    return CoverageInstance(**json.loads(text))


def solution_to_json(sol: PlacementSolution) -> str:
    return json.dumps(
        {
            "placements": sol.placements.tolist(),
            "objective": sol.objective,
            "covered_mask": [bool(z) for z in sol.covered_mask],
            "optimality_flag": sol.optimality_flag,
            "grid_indices": list(sol.grid_indices),
        }
    )


def solution_from_json(text: str) -> PlacementSolution:
    raw = json.loads(text)
    return PlacementSolution(
        placements=np.asarray(raw["placements"], dtype=np.float64),
        objective=float(raw["objective"]),
        covered_mask=np.asarray(raw["covered_mask"], dtype=bool),
        optimality_flag=raw["optimality_flag"],
        grid_indices=tuple(raw["grid_indices"]),
    )
