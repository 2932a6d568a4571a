"""Two-team drone engagement: planar motion plus heading control and
directional laser fire.

Kinematics mirror the relay simulator (clamped forces, semi-implicit
integration, hard walls) with one extra channel rotating the heading.
Firing is a thresholded fourth action channel; a beam is a finite ray
along the heading and the nearest opponent inside its angular half
width is eliminated. Per-event rewards follow the engagement reward
table exactly; beams resolve simultaneously, so mutual elimination is
possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import graph
from .errors import ConfigError, ContractError, DomainError

ATTACKER = 0
DEFENDER = 1
TEAM_NAMES = ("attacker", "defender")

REWARD_EMIT = -0.1
REWARD_MISS = -1.0
REWARD_HIT = 3.0
REWARD_GOT_HIT = -3.0
REWARD_WIN = 20.0
TIME_PENALTY_TOTAL = 50.0  # spread over the horizon as -50/T per step


@dataclass
class CombatConfig:
    num_attackers: int = 5
    num_defenders: int = 5
    arena_side: float = 100.0
    dt: float = 0.1
    horizon: int = 200
    max_speed: float = 5.0
    max_force: float = 5.0
    max_turn_rate: float = math.pi  # rad/s cap on the rotation channel
    beam_range: float = 20.0
    beam_half_width_deg: float = 3.0
    r_s: float = 25.0
    r_c: float = 30.0
    obs_mode: str = "PO"
    comm_mode: str = "RC"

    def __post_init__(self):
        for name in ("num_attackers", "num_defenders", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in (
            "arena_side", "dt", "max_speed", "max_force", "max_turn_rate",
            "beam_range", "beam_half_width_deg", "r_s", "r_c",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.obs_mode not in ("FO", "PO"):
            raise ConfigError(f"obs_mode must be FO or PO, got {self.obs_mode!r}")
        if self.comm_mode not in ("UC", "RC"):
            raise ConfigError(f"comm_mode must be UC or RC, got {self.comm_mode!r}")

    @property
    def num_drones(self) -> int:
        return self.num_attackers + self.num_defenders

    @property
    def beam_half_width(self) -> float:
        return math.radians(self.beam_half_width_deg)

    @property
    def time_penalty(self) -> float:
        return -TIME_PENALTY_TOTAL / self.horizon


@dataclass
class CombatAction:
    f_x: float
    f_y: float
    f_rot: float
    fire: bool

    def as_row(self) -> np.ndarray:
        return np.array([self.f_x, self.f_y, self.f_rot, 1.0 if self.fire else -1.0])


@dataclass
class CombatState:
    pos: np.ndarray  # (D, 2)
    vel: np.ndarray  # (D, 2)
    heading: np.ndarray  # (D,) radians in [0, 2 pi)
    team: np.ndarray  # (D,) ATTACKER or DEFENDER
    alive: np.ndarray  # (D,) bool
    t: int

    def team_members(self, team: int, alive_only: bool = True) -> np.ndarray:
        sel = self.team == team
        if alive_only:
            sel &= self.alive
        return np.flatnonzero(sel)


def reset(config: CombatConfig, seed: int | None = None) -> CombatState:
    """Teams start in facing bands on opposite arena sides."""
    rng = np.random.default_rng(seed)
    side = config.arena_side
    a, d = config.num_attackers, config.num_defenders
    pos = np.concatenate(
        [
            np.stack(
                [rng.uniform(0.05 * side, 0.25 * side, a), rng.uniform(0.0, side, a)], axis=1
            ),
            np.stack(
                [rng.uniform(0.75 * side, 0.95 * side, d), rng.uniform(0.0, side, d)], axis=1
            ),
        ]
    )
    heading = np.concatenate([np.zeros(a), np.full(d, math.pi)])
    team = np.concatenate([np.full(a, ATTACKER), np.full(d, DEFENDER)]).astype(np.int8)
    return CombatState(
        pos=pos,
        vel=np.zeros_like(pos),
        heading=heading,
        team=team,
        alive=np.ones(a + d, dtype=bool),
        t=0,
    )


def _wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return math.pi - np.mod(math.pi - a, 2.0 * math.pi)


def _clamp_norm(vecs: np.ndarray, limit: float) -> np.ndarray:
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    scale = np.where(norms > limit, limit / np.maximum(norms, 1e-300), 1.0)
    return vecs * scale


def resolve_beam(state: CombatState, shooter: int, config: CombatConfig, targets) -> int | None:
    """Nearest target inside the shooter's beam cone, or None.

    A target qualifies when within beam_range and within the angular
    half width of the heading ray; ties go to the lowest drone index.
    Co-located targets count as hits at distance zero.
    """
    best_d, best_j = np.inf, None
    for j in targets:
        delta = state.pos[j] - state.pos[shooter]
        dist = float(np.linalg.norm(delta))
        if dist > config.beam_range:
            continue
        if dist > 0.0:
            off = abs(_wrap_angle(math.atan2(delta[1], delta[0]) - state.heading[shooter]))
            if off > config.beam_half_width:
                continue
        if dist < best_d - 1e-12:
            best_d, best_j = dist, j
    return best_j


def combat_step(state: CombatState, actions: np.ndarray, config: CombatConfig):
    """One engagement tick. Returns (next_state, rewards, done, event).

    `actions` has one row [F_x, F_y, F_rot, fire] per *living* drone in
    index order; the fire channel is thresholded at zero. Rewards come
    back per drone (zeros for the already dead). The event dict records
    the step's shots, eliminations, and winner for the episode log.
    """
    alive_idx = np.flatnonzero(state.alive)
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (alive_idx.size, 4):
        raise ContractError(
            f"expected actions of shape ({alive_idx.size}, 4) for the living drones, "
            f"got {actions.shape}"
        )
    d_count = state.pos.shape[0]
    force = np.zeros((d_count, 2))
    rot = np.zeros(d_count)
    fire = np.zeros(d_count, dtype=bool)
    force[alive_idx] = actions[:, :2]
    rot[alive_idx] = actions[:, 2]
    fire[alive_idx] = actions[:, 3] > 0.0

    force = _clamp_norm(force, config.max_force)
    vel = _clamp_norm(state.vel + force * config.dt, config.max_speed)
    pos = state.pos + vel * config.dt
    low = pos < 0.0
    high = pos > config.arena_side
    vel = np.where(low | high, 0.0, vel)
    pos = np.clip(pos, 0.0, config.arena_side)
    turn = np.clip(rot, -config.max_turn_rate, config.max_turn_rate)
    heading = np.mod(state.heading + turn * config.dt, 2.0 * math.pi)
    # the dead stay frozen
    dead = ~state.alive
    pos[dead] = state.pos[dead]
    vel[dead] = 0.0
    heading[dead] = state.heading[dead]

    moved = replace(state, pos=pos, vel=vel, heading=heading, t=state.t + 1)

    rewards = np.zeros(d_count)
    rewards[alive_idx] += config.time_penalty

    shots = []
    victims = set()
    for i in alive_idx:
        if not fire[i]:
            continue
        rewards[i] += REWARD_EMIT
        targets = [j for j in alive_idx if state.team[j] != state.team[i]]
        victim = resolve_beam(moved, int(i), config, targets)
        if victim is None:
            rewards[i] += REWARD_MISS
        else:
            rewards[i] += REWARD_HIT
            rewards[victim] += REWARD_GOT_HIT
            victims.add(int(victim))
        shots.append({"shooter": int(i), "hit": victim if victim is None else int(victim)})

    alive = state.alive.copy()
    for j in victims:
        alive[j] = False
    vel[list(victims)] = 0.0
    nxt = replace(moved, alive=alive, vel=vel)

    winner = win_state(nxt, config)
    if winner in TEAM_NAMES:
        rewards[nxt.team_members(TEAM_NAMES.index(winner))] += REWARD_WIN
    done = winner != "none"

    event = {
        "step": state.t,
        "alive": [int(i) for i in alive_idx],
        "shots": shots,
        "eliminated": sorted(victims),
        "winner": None if winner == "none" else winner,
    }
    return nxt, rewards, done, event


def win_state(state: CombatState, config: CombatConfig) -> str:
    """'attacker' | 'defender' when the other team is wiped out, 'draw' on
    mutual elimination or an expired horizon, else 'none'."""
    attackers = state.team_members(ATTACKER).size
    defenders = state.team_members(DEFENDER).size
    if attackers == 0 and defenders == 0:
        return "draw"
    if defenders == 0:
        return "attacker"
    if attackers == 0:
        return "defender"
    return "draw" if state.t >= config.horizon else "none"


# ---------------------------------------------------------------------------
# observations


def build_observations(state: CombatState, config: CombatConfig, team: int) -> graph.ObservationSet:
    """Per-drone observations for one team's living members.

    Self state is [pos/side, vel/vmax, cos h, sin h]. Entities are other
    living drones (all under FO, within r_s under PO) tagged kind 'uav'
    with weight +1 for teammates and -1 for opponents. Communication
    links stay within the team; neighbor ids index the team's own agent
    list.
    """
    side, vmax = config.arena_side, config.max_speed
    members = [int(i) for i in state.team_members(team)]
    local = {g: k for k, g in enumerate(members)}
    others = [int(j) for j in np.flatnonzero(state.alive)]
    agents = []
    for i in members:
        p_i = state.pos[i]
        entities, ids = [], []
        for j in others:
            if j == i:
                continue
            if config.obs_mode == "PO" and np.linalg.norm(state.pos[j] - p_i) > config.r_s:
                continue
            entities.append(
                graph.EntityFeature(
                    relative_position=(state.pos[j] - p_i) / side,
                    entity_velocity=state.vel[j] / vmax,
                    kind="uav",
                    weight=1.0 if state.team[j] == team else -1.0,
                )
            )
            ids.append(("uav", j))
        comm = [
            local[j]
            for j in members
            if j != i
            and (
                config.comm_mode == "UC"
                or np.linalg.norm(state.pos[j] - p_i) <= config.r_c
            )
        ]
        agents.append(
            graph.AgentObservation(
                self_state=np.concatenate(
                    [
                        p_i / side,
                        state.vel[i] / vmax,
                        [math.cos(state.heading[i]), math.sin(state.heading[i])],
                    ]
                ),
                entities=entities,
                entity_ids=ids,
                comm_neighbors=comm,
            )
        )
    return graph.ObservationSet(agents=agents)


SELF_DIM = 6  # pos(2) + vel(2) + heading cos/sin


# ---------------------------------------------------------------------------
# scripted opponent


@dataclass
class ScriptedPolicy:
    """Chase the nearest opponent and fire once lined up.

    `speed_scale` and `range_frac` weaken the opponent for curriculum
    purposes: slower pursuit and a shorter self-imposed firing range.
    """

    team: int
    speed_scale: float = 1.0
    range_frac: float = 1.0
    fire_cone_deg: float | None = None  # defaults to the beam half width

    def __call__(self, state: CombatState, config: CombatConfig) -> np.ndarray:
        members = state.team_members(self.team)
        enemies = [int(j) for j in np.flatnonzero(state.alive) if state.team[j] != self.team]
        cone = math.radians(
            self.fire_cone_deg if self.fire_cone_deg is not None else config.beam_half_width_deg
        )
        rows = []
        for i in members:
            if not enemies:
                rows.append([0.0, 0.0, 0.0, -1.0])
                continue
            dists = [np.linalg.norm(state.pos[j] - state.pos[i]) for j in enemies]
            j = enemies[int(np.argmin(dists))]
            delta = state.pos[j] - state.pos[i]
            dist = float(np.linalg.norm(delta))
            direction = delta / dist if dist > 1e-12 else np.zeros(2)
            desired = math.atan2(delta[1], delta[0])
            err = float(_wrap_angle(desired - state.heading[i]))
            turn = np.clip(err / config.dt, -config.max_turn_rate, config.max_turn_rate)
            fire = 1.0 if (
                dist <= config.beam_range * self.range_frac and abs(err) <= cone
            ) else -1.0
            f = direction * config.max_force * self.speed_scale
            rows.append([f[0], f[1], float(turn), fire])
        return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# event logs and bookkeeping


def write_event_log(path, config: CombatConfig, state: CombatState, events: list):
    """JSON-lines: a header with teams and horizon, then one line per step."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "teams": [int(t) for t in state.team],
            "horizon": config.horizon,
        }
        fh.write(json.dumps(header) + "\n")
        for e in events:
            fh.write(json.dumps(e) + "\n")


def read_event_log(path):
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise DomainError(f"empty event log: {path}")
    return lines[0], lines[1:]


def returns_from_events(header: dict, events: list) -> np.ndarray:
    """Per-drone episode returns recomputed from the event log alone.

    Independent bookkeeping route for the reward-accounting invariant:
    time penalties from the alive lists, shot outcomes from the shot
    records, win bonuses from the winner field.
    """
    teams = np.asarray(header["teams"])
    horizon = header["horizon"]
    totals = np.zeros(teams.shape[0])
    alive = np.ones(teams.shape[0], dtype=bool)
    for e in events:
        step = np.zeros(teams.shape[0])
        step[e["alive"]] += -TIME_PENALTY_TOTAL / horizon
        for shot in e["shots"]:
            step[shot["shooter"]] += REWARD_EMIT
            if shot["hit"] is None:
                step[shot["shooter"]] += REWARD_MISS
            else:
                step[shot["shooter"]] += REWARD_HIT
                step[shot["hit"]] += REWARD_GOT_HIT
        for j in e["eliminated"]:
            alive[j] = False
        if e["winner"] in TEAM_NAMES:
            idx = TEAM_NAMES.index(e["winner"])
            step[alive & (teams == idx)] += REWARD_WIN
        totals += step
    return totals
