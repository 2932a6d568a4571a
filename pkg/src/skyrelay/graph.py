"""Agent-entity graph construction: sensed sets, communication sets, and
normalized per-UAV observation features under FO/PO x UC/RC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENTITY_KINDS = ("node", "uav", "obstacle")


@dataclass
class EntityFeature:
    relative_position: np.ndarray  # (2,), divided by arena_side
    entity_velocity: np.ndarray  # (2,), divided by max_speed
    kind: str
    weight: float

    def vector(self) -> np.ndarray:
        onehot = [1.0 if self.kind == k else 0.0 for k in ENTITY_KINDS]
        return np.concatenate(
            [self.relative_position, self.entity_velocity, onehot, [self.weight]]
        )


FEATURE_DIM = 8  # rel(2) + vel(2) + kind onehot(3) + weight(1)


@dataclass
class AgentObservation:
    self_state: np.ndarray  # (self_dim,)
    entities: list  # of EntityFeature
    entity_ids: list  # of (kind, index) tags aligned with entities
    comm_neighbors: list  # of UAV ids, sorted, self excluded


@dataclass
class ObservationSet:
    agents: list  # of AgentObservation

    def pack(self) -> "FeaturePack":
        return pack_observations(self)


@dataclass
class FeaturePack:
    """Stacked observation arrays for the batched encoder: entity rows are
    grouped contiguously by owning agent."""

    self_feats: np.ndarray  # (M, self_dim)
    ent_feats: np.ndarray  # (total_entities, FEATURE_DIM)
    ent_starts: np.ndarray  # (M + 1,) prefix offsets into ent_feats
    comm: tuple  # per agent: tuple of neighbor ids (self excluded)

    @property
    def num_agents(self) -> int:
        return self.self_feats.shape[0]


def pack_observations(obs: ObservationSet) -> FeaturePack:
    rows = []
    starts = [0]
    for agent in obs.agents:
        rows.extend(e.vector() for e in agent.entities)
        starts.append(len(rows))
    ent = np.stack(rows) if rows else np.zeros((0, FEATURE_DIM))
    return FeaturePack(
        self_feats=np.stack([a.self_state for a in obs.agents]),
        ent_feats=ent,
        ent_starts=np.asarray(starts, dtype=np.intp),
        comm=tuple(tuple(a.comm_neighbors) for a in obs.agents),
    )


def sensed_set(state, i: int, config) -> list:
    """Node indices UAV i observes: all of them under FO, those within
    r_s (inclusive) under PO. Sorted ascending."""
    if config.obs_mode == "FO":
        return list(range(state.node_pos.shape[0]))
    dists = np.linalg.norm(state.node_pos - state.uav_pos[i], axis=1)
    return [int(j) for j in np.nonzero(dists <= config.r_s)[0]]


def sensed_uavs(state, i: int, config) -> list:
    """Other UAVs visible to i as entities: all under FO, within r_s under PO."""
    m = state.uav_pos.shape[0]
    if config.obs_mode == "FO":
        return [j for j in range(m) if j != i]
    dists = np.linalg.norm(state.uav_pos - state.uav_pos[i], axis=1)
    return [int(j) for j in np.nonzero(dists <= config.r_s)[0] if j != i]


def comm_set(state, i: int, config) -> list:
    """Communication neighbors of UAV i, self excluded: everyone under UC,
    those within r_c (inclusive) under RC."""
    m = state.uav_pos.shape[0]
    if config.comm_mode == "UC":
        return [j for j in range(m) if j != i]
    dists = np.linalg.norm(state.uav_pos - state.uav_pos[i], axis=1)
    return [int(j) for j in np.nonzero(dists <= config.r_c)[0] if j != i]


def build_observations(state, config) -> ObservationSet:
    """Assemble per-UAV observations; positions scale by arena_side and
    velocities by max_speed so features live on a [-1, 1] scale."""
    side = config.arena_side
    vmax = config.max_speed
    agents = []
    for i in range(state.uav_pos.shape[0]):
        p_i = state.uav_pos[i]
        entities, ids = [], []
        for j in sensed_set(state, i, config):
            entities.append(
                EntityFeature(
                    relative_position=(state.node_pos[j] - p_i) / side,
                    entity_velocity=state.node_vel[j] / vmax,
                    kind="node",
                    weight=float(state.node_weight[j]),
                )
            )
            ids.append(("node", j))
        for j in sensed_uavs(state, i, config):
            entities.append(
                EntityFeature(
                    relative_position=(state.uav_pos[j] - p_i) / side,
                    entity_velocity=state.uav_vel[j] / vmax,
                    kind="uav",
                    weight=1.0,
                )
            )
            ids.append(("uav", j))
        agents.append(
            AgentObservation(
                self_state=np.concatenate([p_i / side, state.uav_vel[i] / vmax]),
                entities=entities,
                entity_ids=ids,
                comm_neighbors=comm_set(state, i, config),
            )
        )
    return ObservationSet(agents=agents)


class _DisjointSets:
    """Union-find with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(adjacency: list) -> list:
    """Partition vertex ids given per-vertex neighbor lists (symmetric).

    Returns components as sorted lists, ordered by smallest member.
    """
    n = len(adjacency)
    dsu = _DisjointSets(n)
    for i, nbrs in enumerate(adjacency):
        for j in nbrs:
            dsu.union(i, j)
    groups = {}
    for v in range(n):
        groups.setdefault(dsu.find(v), []).append(v)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def comm_adjacency(state, config) -> list:
    """Neighbor lists for the UAV comm graph (used by component metrics)."""
    return [comm_set(state, i, config) for i in range(state.uav_pos.shape[0])]
