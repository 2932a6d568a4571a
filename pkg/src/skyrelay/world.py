"""DroneConnect simulator: UAV kinematics, mobile ground nodes, coverage,
and the shared team reward.

All step logic is functional: `step` returns a fresh state and never
mutates its input, which keeps replays and multi-worker rollouts exact.
Positions are float64 arrays of shape (count, 2) in meters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import graph
from .errors import ConfigError, ContractError, DomainError

OBS_MODES = ("FO", "PO")
COMM_MODES = ("UC", "RC")
MOBILITY_MODELS = ("waypoint", "static")


@dataclass
class WorldConfig:
    num_uavs: int = 3
    num_nodes: int = 6
    arena_side: float = 100.0
    dt: float = 0.1
    horizon: int = 200
    r_s: float = 25.0
    r_c: float = 30.0
    r_cov: float = 15.0
    max_speed: float = 5.0
    max_force: float = 5.0
    lambda_cov: float = 1.0
    lambda_dist: float = 0.1
    obs_mode: str = "PO"
    comm_mode: str = "RC"
    node_weights: np.ndarray | None = None
    mobility_model: str = "waypoint"
    node_speed: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_uavs", "num_nodes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("arena_side", "dt", "r_s", "r_c", "r_cov", "max_speed", "max_force"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("lambda_cov", "lambda_dist", "node_speed"):
            if float(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.obs_mode not in OBS_MODES:
            raise ConfigError(f"obs_mode must be one of {OBS_MODES}, got {self.obs_mode!r}")
        if self.comm_mode not in COMM_MODES:
            raise ConfigError(f"comm_mode must be one of {COMM_MODES}, got {self.comm_mode!r}")
        if self.mobility_model not in MOBILITY_MODELS:
            raise ConfigError(
                f"mobility_model must be one of {MOBILITY_MODELS}, got {self.mobility_model!r}"
            )
        if self.node_weights is None:
            self.node_weights = np.ones(self.num_nodes)
        else:
            self.node_weights = np.asarray(self.node_weights, dtype=np.float64)
            if self.node_weights.shape != (self.num_nodes,):
                raise ConfigError(
                    f"node_weights must have shape ({self.num_nodes},), got {self.node_weights.shape}"
                )
            if np.any(self.node_weights < 0):
                raise ConfigError("node_weights must be nonnegative")


@dataclass
class WorldState:
    uav_pos: np.ndarray  # (M, 2)
    uav_vel: np.ndarray  # (M, 2)
    node_pos: np.ndarray  # (N, 2)
    node_vel: np.ndarray  # (N, 2)
    node_waypoint: np.ndarray  # (N, 2)
    node_weight: np.ndarray  # (N,)
    t: int
    rng_state: dict = field(repr=False, default=None)


@dataclass
class StepResult:
    observations: graph.ObservationSet
    reward: float
    coverage_mask: np.ndarray  # (N,) bool
    min_dists: np.ndarray  # (N,)
    done: bool


def _rng_from(state_dict: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state_dict
    return rng


def reset(config: WorldConfig, seed: int | None = None) -> WorldState:
    """Place UAVs and nodes uniformly at random; velocities start at zero."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    side = config.arena_side
    uav_pos = rng.uniform(0.0, side, size=(config.num_uavs, 2))
    node_pos = rng.uniform(0.0, side, size=(config.num_nodes, 2))
    waypoints = rng.uniform(0.0, side, size=(config.num_nodes, 2))
    state = WorldState(
        uav_pos=uav_pos,
        uav_vel=np.zeros_like(uav_pos),
        node_pos=node_pos,
        node_vel=np.zeros_like(node_pos),
        node_waypoint=waypoints,
        node_weight=config.node_weights.copy(),
        t=0,
        rng_state=rng.bit_generator.state,
    )
    state.node_vel = _waypoint_velocities(state, config)
    return state


def _clamp_norm(vecs: np.ndarray, limit: float) -> np.ndarray:
    """Rescale rows whose Euclidean norm exceeds the limit."""
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    scale = np.where(norms > limit, limit / np.maximum(norms, 1e-300), 1.0)
    return vecs * scale


def _waypoint_velocities(state: WorldState, config: WorldConfig) -> np.ndarray:
    if config.mobility_model == "static" or config.node_speed == 0.0:
        return np.zeros_like(state.node_pos)
    delta = state.node_waypoint - state.node_pos
    dist = np.linalg.norm(delta, axis=1, keepdims=True)
    direction = np.where(dist > 1e-12, delta / np.maximum(dist, 1e-300), 0.0)
    return direction * config.node_speed


def node_mobility_step(state: WorldState, config: WorldConfig) -> WorldState:
    """Advance nodes toward their waypoints; arrivals draw a fresh waypoint
    from the state's own RNG stream."""
    if config.mobility_model == "static" or config.node_speed == 0.0:
        return replace(state, node_vel=np.zeros_like(state.node_vel))
    rng = _rng_from(state.rng_state)
    pos = state.node_pos.copy()
    wp = state.node_waypoint.copy()
    step_len = config.node_speed * config.dt
    delta = wp - pos
    dist = np.linalg.norm(delta, axis=1)
    for j in range(pos.shape[0]):
        if dist[j] <= step_len:
            pos[j] = wp[j]
            wp[j] = rng.uniform(0.0, config.arena_side, size=2)
        else:
            pos[j] = pos[j] + delta[j] / dist[j] * step_len
    moved = replace(
        state, node_pos=pos, node_waypoint=wp, rng_state=rng.bit_generator.state
    )
    return replace(moved, node_vel=_waypoint_velocities(moved, config))


def min_distance(node: np.ndarray, uav_positions: np.ndarray) -> float:
    """Distance from one node to its nearest UAV."""
    uav_positions = np.asarray(uav_positions, dtype=np.float64)
    if uav_positions.size == 0:
        raise DomainError("min_distance needs at least one UAV")
    return float(np.min(np.linalg.norm(uav_positions - np.asarray(node), axis=1)))


def coverage_and_distances(state: WorldState, config: WorldConfig):
    """Per-node nearest-UAV distances and the inclusive coverage mask."""
    diffs = state.node_pos[:, None, :] - state.uav_pos[None, :, :]
    dists = np.linalg.norm(diffs, axis=2).min(axis=1)
    return dists <= config.r_cov, dists


def coverage_mask(state: WorldState, config: WorldConfig) -> np.ndarray:
    return coverage_and_distances(state, config)[0]


def team_reward(state: WorldState, config: WorldConfig) -> float:
    """Shared reward: coverage fraction minus the normalized-distance
    penalty, weighted by lambda_cov and lambda_dist."""
    mask, dists = coverage_and_distances(state, config)
    return reward_from_stats(mask, dists, config)


def reward_from_stats(mask: np.ndarray, dists: np.ndarray, config: WorldConfig) -> float:
    n = mask.shape[0]
    cov_term = config.lambda_cov * float(np.sum(mask)) / n
    dist_term = config.lambda_dist * float(np.sum(dists / config.r_cov)) / n
    return cov_term - dist_term


def step(state: WorldState, actions: np.ndarray, config: WorldConfig):
    """One simulator tick. Returns (next_state, StepResult).

    Forces are norm-clamped, velocities integrate semi-implicitly and are
    speed-clamped, positions clip to the arena with the clipped axis'
    velocity zeroed, then nodes move and the reward is computed on the
    post-move state.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (config.num_uavs, 2):
        raise ContractError(
            f"expected actions of shape ({config.num_uavs}, 2), got {actions.shape}"
        )
    force = _clamp_norm(actions, config.max_force)
    vel = _clamp_norm(state.uav_vel + force * config.dt, config.max_speed)
    pos = state.uav_pos + vel * config.dt

    low = pos < 0.0
    high = pos > config.arena_side
    vel = np.where(low | high, 0.0, vel)
    pos = np.clip(pos, 0.0, config.arena_side)

    nxt = replace(state, uav_pos=pos, uav_vel=vel, t=state.t + 1)
    nxt = node_mobility_step(nxt, config)

    mask, dists = coverage_and_distances(nxt, config)
    result = StepResult(
        observations=graph.build_observations(nxt, config),
        reward=reward_from_stats(mask, dists, config),
        coverage_mask=mask,
        min_dists=dists,
        done=nxt.t >= config.horizon,
    )
    return nxt, result


# ---------------------------------------------------------------------------
# trajectory logs (JSON-lines, one record per step)


def log_record(state: WorldState, actions, result: StepResult) -> dict:
    """Snapshot of one step for the trajectory log; floats round-trip
    exactly through JSON via repr."""
    return {
        "t": int(state.t),
        "uav_pos": state.uav_pos.tolist(),
        "uav_vel": state.uav_vel.tolist(),
        "node_pos": state.node_pos.tolist(),
        "actions": np.asarray(actions).tolist(),
        "reward": float(result.reward),
        "coverage_mask": [bool(b) for b in result.coverage_mask],
        "min_dists": result.min_dists.tolist(),
    }


def write_trajectory(path, records: list):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
