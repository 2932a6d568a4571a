"""Experiment layer: manifests, gym-style adapters for the two
scenarios, and the train / eval / baseline / sweep entry points behind
the CLI.

A manifest plus its seed list fully determines every artifact. Each CSV
embeds the manifest's hash in a header comment so results stay traceable
to their configuration, and single-worker re-runs reproduce output files
byte for byte.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import baseline, combat, encoder, graph, learner, metrics, world
from .errors import ConfigError
from .world import WorldConfig

log = logging.getLogger(__name__)

SCENARIOS = ("connect", "combat")

EPISODE_COLUMNS = (
    "seed", "episode", "coverage_ratio", "overlap_rate", "mean_reward",
    "episode_length", "comm_components",
)
COMBAT_EPISODE_COLUMNS = ("seed", "episode", "win", "episode_steps", "team_return")
BASELINE_COLUMNS = ("snapshot", "solver", "coverage_bound")


# ---------------------------------------------------------------------------
# manifest sections


@dataclass
class ModelSettings:
    """Encoder and head sizing plus the two ablation switches."""

    embed_dim: int = 64
    key_dim: int = 32
    hidden: int = 64
    rounds: int = 2
    no_comm: bool = False
    mean_pool: bool = False
    per_round_comm: bool = False
    actor_hidden: int = 64
    critic_hidden: int = 64
    init_log_std: float = 0.0


@dataclass
class OpponentSettings:
    """Scripted defender knobs for the engagement scenario."""

    speed_scale: float = 1.0
    range_frac: float = 1.0
    fire_cone_deg: float | None = None


@dataclass
class BaselineSettings:
    snapshots: int = 50
    resolution: int = 10
    budget: int = 2_000_000
    relocation_weight: float = 0.0


@dataclass
class SweepSettings:
    """Zero-shot transfer grid; sizes default to M-2..M+2 and node
    counts to twice the team size (the training density)."""

    sizes: tuple | None = None
    nodes: tuple | None = None
    episodes: int | None = None

    def __post_init__(self):
        # single-entry grids parse as bare ints
        if self.sizes is not None and not isinstance(self.sizes, tuple):
            self.sizes = (int(self.sizes),)
        if self.nodes is not None and not isinstance(self.nodes, tuple):
            self.nodes = (int(self.nodes),)


@dataclass
class ExperimentManifest:
    scenario: str = "connect"
    seeds: tuple = (0, 1, 2)
    eval_episodes: int = 50
    out_dir: str | None = None
    keep_trajectories: bool = False
    workers: int = 1
    world: WorldConfig = None
    combat: combat.CombatConfig = None
    model: ModelSettings = None
    opponent: OpponentSettings = None
    baseline: BaselineSettings = None
    sweep: SweepSettings = None
    train: learner.TrainConfig = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"manifest field 'scenario': must be one of {SCENARIOS}, got {self.scenario!r}"
            )
        defaults = {
            "world": WorldConfig, "combat": combat.CombatConfig, "model": ModelSettings,
            "opponent": OpponentSettings, "baseline": BaselineSettings,
            "sweep": SweepSettings, "train": learner.TrainConfig,
        }
        for name, cls in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, cls())
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("manifest field 'seeds': needs at least one seed")
        if self.eval_episodes < 0:
            raise ConfigError(
                f"manifest field 'eval_episodes': must be >= 0, got {self.eval_episodes}"
            )
        if self.workers < 1:
            raise ConfigError(f"manifest field 'workers': must be >= 1, got {self.workers}")


_SECTIONS = {
    "world": WorldConfig,
    "train": learner.TrainConfig,
    "model": ModelSettings,
    "combat": combat.CombatConfig,
    "opponent": OpponentSettings,
    "baseline": BaselineSettings,
    "sweep": SweepSettings,
}
_TOP_LEVEL = {
    "scenario", "seeds", "eval_episodes", "out_dir", "keep_trajectories", "workers",
}
# ablation switches may sit at top level, as the schema describes them
_TOP_ALIASES = {"no_comm": "model.no_comm", "mean_pool": "model.mean_pool"}


def _parse_scalar(raw: str):
    text = raw.strip()
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(raw: str):
    if "," in raw:
        return [_parse_scalar(part) for part in raw.split(",")]
    return _parse_scalar(raw)


def _flat_to_nested(text: str) -> dict:
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"manifest line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        value = _parse_value(raw)
        if "." in key:
            section, _, field_name = key.partition(".")
            data.setdefault(section, {})[field_name] = value
        else:
            data[key] = value
    return data


def _build_section(section_key: str, cls, values: dict):
    valid = {f.name for f in fields(cls)}
    kwargs = {}
    for name, value in values.items():
        if name not in valid:
            raise ConfigError(
                f"manifest field '{section_key}.{name}': unknown field; valid: {sorted(valid)}"
            )
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"manifest section '{section_key}': {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"manifest section '{section_key}': {e}") from e


def _merge_into_section(data: dict, section: str, field_name: str, value, origin: str):
    sec = data.setdefault(section, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"manifest field '{section}': expected a section, got {sec!r}")
    if field_name in sec:
        raise ConfigError(f"manifest field '{section}.{field_name}': duplicated by '{origin}'")
    sec[field_name] = value


def manifest_from_dict(data: dict) -> ExperimentManifest:
    data = dict(data)
    for alias, target in _TOP_ALIASES.items():
        if alias in data:
            section, _, field_name = target.partition(".")
            _merge_into_section(data, section, field_name, data.pop(alias), alias)
    if "encoder" in data:  # accepted alias section for 'model'
        enc = data.pop("encoder")
        if not isinstance(enc, dict):
            raise ConfigError(f"manifest field 'encoder': expected a section, got {enc!r}")
        for field_name, value in enc.items():
            _merge_into_section(data, "model", field_name, value, f"encoder.{field_name}")
    top = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"manifest field '{key}': expected a section, got {value!r}")
            top[key] = _build_section(key, _SECTIONS[key], value)
        elif key in _TOP_LEVEL:
            if key == "seeds" and not isinstance(value, (list, tuple)):
                value = [value]
            top[key] = tuple(value) if isinstance(value, list) else value
        else:
            raise ConfigError(
                f"manifest field '{key}': unknown key; top-level keys are "
                f"{sorted(_TOP_LEVEL | set(_SECTIONS) | {'encoder'})}"
            )
    try:
        return ExperimentManifest(**top)
    except TypeError as e:
        raise ConfigError(f"manifest: {e}") from e


def parse_manifest(path) -> ExperimentManifest:
    """Read a manifest from flat 'key = value' text or its JSON encoding."""
    text = Path(path).read_text(encoding="utf-8")
    body = text.lstrip()
    if body.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"manifest {path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"manifest {path}: JSON body must be an object")
        return manifest_from_dict(data)
    return manifest_from_dict(_flat_to_nested(text))


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def manifest_canonical(manifest: ExperimentManifest) -> dict:
    out = {}
    for f in fields(manifest):
        value = getattr(manifest, f.name)
        if hasattr(value, "__dataclass_fields__"):
            out[f.name] = {k: _jsonable(v) for k, v in asdict(value).items()}
        else:
            out[f.name] = _jsonable(value)
    return out


def manifest_hash(manifest: ExperimentManifest) -> str:
    payload = json.dumps(manifest_canonical(manifest), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def method_name(manifest: ExperimentManifest) -> str:
    parts = []
    if manifest.model.no_comm:
        parts.append("no_comm")
    if manifest.model.mean_pool:
        parts.append("mean_pool")
    return "+".join(parts) if parts else "full"


# ---------------------------------------------------------------------------
# environment adapters (the learner's episode protocol)


class ConnectEnv:
    """Relay-deployment episodes: shared scalar reward, coverage score.

    Keeps the full per-step trajectory of the current episode so eval
    statistics can be recomputed from persisted logs.
    """

    scenario = "connect"

    def __init__(self, config: WorldConfig):
        self.config = config
        self.act_dim = 2
        self.self_dim = 4
        self.entity_dim = graph.FEATURE_DIM
        self.state_dim = 4 * (config.num_uavs + config.num_nodes)
        self.state = None
        self.trajectory = []
        self._scores = []

    def reset(self, seed):
        self.state = world.reset(self.config, int(seed))
        self.trajectory = []
        self._scores = []
        return graph.build_observations(self.state, self.config).pack()

    def step(self, actions):
        self.state, res = world.step(self.state, actions, self.config)
        self.trajectory.append(world.log_record(self.state, actions, res))
        self._scores.append(float(np.mean(res.coverage_mask)))
        # coverage is a continuing task; the horizon only truncates it
        return res.observations.pack(), res.reward, res.done, {"truncated": bool(res.done)}

    def state_vec(self):
        side, vmax = self.config.arena_side, self.config.max_speed
        s = self.state
        return np.concatenate([
            (s.uav_pos / side).ravel(), (s.uav_vel / vmax).ravel(),
            (s.node_pos / side).ravel(), (s.node_vel / vmax).ravel(),
        ])

    def alive_mask(self):
        return np.ones(self.config.num_uavs)

    def episode_score(self):
        return float(np.mean(self._scores)) if self._scores else 0.0

    def snapshot(self):
        s = self.state
        return {
            "uav_pos": s.uav_pos.tolist(),
            "uav_vel": s.uav_vel.tolist(),
            "node_pos": s.node_pos.tolist(),
            "node_vel": s.node_vel.tolist(),
            "node_waypoint": s.node_waypoint.tolist(),
            "node_weight": s.node_weight.tolist(),
            "t": int(s.t),
            "rng_state": s.rng_state,
            "scores": list(self._scores),
        }

    def restore(self, snap):
        self.state = world.WorldState(
            uav_pos=np.asarray(snap["uav_pos"], dtype=np.float64),
            uav_vel=np.asarray(snap["uav_vel"], dtype=np.float64),
            node_pos=np.asarray(snap["node_pos"], dtype=np.float64),
            node_vel=np.asarray(snap["node_vel"], dtype=np.float64),
            node_waypoint=np.asarray(snap["node_waypoint"], dtype=np.float64),
            node_weight=np.asarray(snap["node_weight"], dtype=np.float64),
            t=int(snap["t"]),
            rng_state=snap["rng_state"],
        )
        self._scores = list(snap["scores"])
        self.trajectory = []  # per-step logs are an eval artifact, not resume state
        return graph.build_observations(self.state, self.config).pack()


class CombatEnv:
    """Engagement episodes from the attacker team's side: the learner
    controls living attackers, a scripted policy moves the defenders.
    Team reward is the sum of per-drone attacker rewards; the episode
    score is the win flag."""

    scenario = "combat"

    def __init__(self, config: combat.CombatConfig, opponent: combat.ScriptedPolicy):
        if opponent.team != combat.DEFENDER:
            raise ConfigError("CombatEnv expects a defender-side scripted opponent")
        self.config = config
        self.opponent = opponent
        self.act_dim = 4
        self.self_dim = combat.SELF_DIM
        self.entity_dim = graph.FEATURE_DIM
        # per-drone kinematics plus the clock: remaining time drives both
        # the per-step penalty total and the worth of a win, so the critic
        # needs it (engagement state carries t; ends here are real terminals)
        self.state_dim = 7 * config.num_drones + 1
        self.state = None
        self.events = []
        self._winner = None

    def reset(self, seed):
        self.state = combat.reset(self.config, int(seed))
        self.events = []
        self._winner = None
        return combat.build_observations(self.state, self.config, combat.ATTACKER).pack()

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        defender_rows = self.opponent(self.state, self.config)
        # attackers hold the lower global indices, so their rows lead
        full = np.concatenate([actions.reshape(-1, 4), defender_rows.reshape(-1, 4)], axis=0)
        self.state, rewards, done, event = combat.combat_step(self.state, full, self.config)
        self.events.append(event)
        if done:
            self._winner = event["winner"]
        reward = float(rewards[self.state.team == combat.ATTACKER].sum())
        pack = combat.build_observations(self.state, self.config, combat.ATTACKER).pack()
        return pack, reward, done, {"event": event}

    def state_vec(self):
        side, vmax = self.config.arena_side, self.config.max_speed
        s = self.state
        per_drone = np.concatenate([
            s.pos / side, s.vel / vmax,
            np.cos(s.heading)[:, None], np.sin(s.heading)[:, None],
            s.alive[:, None].astype(np.float64),
        ], axis=1)
        remaining = 1.0 - s.t / self.config.horizon
        return np.append(per_drone.ravel(), remaining)

    def alive_mask(self):
        return np.ones(self.state.team_members(combat.ATTACKER).size)

    def episode_score(self):
        return 1.0 if self._winner == "attacker" else 0.0

    def snapshot(self):
        s = self.state
        return {
            "pos": s.pos.tolist(),
            "vel": s.vel.tolist(),
            "heading": s.heading.tolist(),
            "team": [int(t) for t in s.team],
            "alive": [bool(a) for a in s.alive],
            "t": int(s.t),
            "winner": self._winner,
        }

    def restore(self, snap):
        self.state = combat.CombatState(
            pos=np.asarray(snap["pos"], dtype=np.float64),
            vel=np.asarray(snap["vel"], dtype=np.float64),
            heading=np.asarray(snap["heading"], dtype=np.float64),
            team=np.asarray(snap["team"], dtype=np.int8),
            alive=np.asarray(snap["alive"], dtype=bool),
            t=int(snap["t"]),
        )
        self._winner = snap["winner"]
        self.events = []  # event logs are an eval artifact, not resume state
        return combat.build_observations(self.state, self.config, combat.ATTACKER).pack()


def make_env(manifest: ExperimentManifest):
    if manifest.scenario == "connect":
        return ConnectEnv(manifest.world)
    opp = manifest.opponent
    return CombatEnv(
        manifest.combat,
        combat.ScriptedPolicy(
            combat.DEFENDER,
            speed_scale=opp.speed_scale,
            range_frac=opp.range_frac,
            fire_cone_deg=opp.fire_cone_deg,
        ),
    )


def build_policy(manifest: ExperimentManifest, seed: int) -> learner.PolicyParams:
    env = make_env(manifest)
    m = manifest.model
    enc_cfg = encoder.EncoderConfig(
        self_dim=env.self_dim,
        entity_dim=env.entity_dim,
        embed_dim=m.embed_dim,
        key_dim=m.key_dim,
        hidden=m.hidden,
        rounds=m.rounds,
        no_comm=m.no_comm,
        mean_pool=m.mean_pool,
        per_round_comm=m.per_round_comm,
    )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    return learner.init_policy(
        rng, enc_cfg, env.act_dim, env.state_dim,
        actor_hidden=m.actor_hidden, critic_hidden=m.critic_hidden,
        init_log_std=m.init_log_std,
    )


# ---------------------------------------------------------------------------
# subcommand implementations


def _resolve_out(manifest, out_dir, command: str) -> Path:
    target = out_dir if out_dir is not None else manifest.out_dir
    if target is None:
        raise ConfigError(f"manifest field 'out_dir' is required for {command}")
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _chosen_seeds(manifest, seed):
    if seed is None:
        return manifest.seeds
    return (int(seed),)


def _map_seeds(manifest, seeds, fn):
    """Run fn(seed) per seed, optionally in worker threads; results come
    back in seed order regardless of completion order."""
    if manifest.workers == 1 or len(seeds) == 1:
        return [fn(k) for k in seeds]
    with concurrent.futures.ThreadPoolExecutor(max_workers=manifest.workers) as pool:
        return list(pool.map(fn, seeds))


def _hash_comments(manifest):
    return [f"manifest sha256={manifest_hash(manifest)}"]


def run_train(manifest: ExperimentManifest, seed=None, out_dir=None) -> dict:
    """One training run per seed under out_dir/seed_k/, resumable.

    Writes each seed's metrics rows to progress.csv and a combined
    learning-curve figure. Returns {seed: rows}.
    """
    out = _resolve_out(manifest, out_dir, "train")
    seeds = _chosen_seeds(manifest, seed)
    comments = _hash_comments(manifest)

    def one(k: int):
        seed_dir = out / f"seed_{k}"
        log.info("training seed %d -> %s", k, seed_dir)
        params = build_policy(manifest, k)
        cfg = replace(manifest.train, seed=k)
        rows = learner.train(lambda: make_env(manifest), params, cfg, out_dir=seed_dir)
        metrics.write_csv(seed_dir / "progress.csv", learner.METRICS_COLUMNS, rows, comments)
        return rows

    rows_per_seed = dict(zip(seeds, _map_seeds(manifest, seeds, one)))
    from . import plots

    plots.training_curves(rows_per_seed, out / "training.png")
    return rows_per_seed


def _checkpoint_for(manifest, out: Path, seed: int, checkpoint) -> Path:
    path = Path(checkpoint) if checkpoint is not None else out / f"seed_{seed}" / "final.npz"
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return path


def _load_compatible_policy(manifest, path):
    params, _, meta = learner.load_policy(path)
    probe = make_env(manifest)
    if params.act_dim != probe.act_dim:
        raise ConfigError(
            f"checkpoint {path} has act_dim {params.act_dim}, but scenario "
            f"'{manifest.scenario}' needs {probe.act_dim}"
        )
    if meta.get("scenario") not in (None, manifest.scenario):
        raise ConfigError(
            f"checkpoint {path} was trained on scenario {meta['scenario']!r}, "
            f"manifest says {manifest.scenario!r}"
        )
    return params


def _eval_episode_connect(env, view, seed_int, deterministic, rng):
    pack = env.reset(seed_int)
    done = False
    while not done:
        actions, _, _ = learner.act(pack, view, rng, deterministic=deterministic)
        pack, _, done, _ = env.step(actions)
    return env.trajectory


def _eval_episode_combat(env, view, seed_int, deterministic, rng):
    pack = env.reset(seed_int)
    done = False
    total = 0.0
    while not done:
        actions, _, _ = learner.act(pack, view, rng, deterministic=deterministic)
        pack, reward, done, _ = env.step(actions)
        total += reward
    return env.events, total


def run_eval(manifest: ExperimentManifest, checkpoint=None, seed=None, out_dir=None,
             deterministic=True) -> dict:
    """Fixed-policy evaluation: per-episode CSV, seed-aggregated summary
    CSV, optional persisted trajectory / event logs, and a figure.

    Episode seeds reuse the training-time evaluation stream, so desk
    numbers line up with the curves in progress.csv.
    """
    out = _resolve_out(manifest, out_dir, "eval")
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    seeds = _chosen_seeds(manifest, seed)
    comments = _hash_comments(manifest)
    is_combat = manifest.scenario == "combat"

    def one(k: int):
        params = _load_compatible_policy(manifest, _checkpoint_for(manifest, out, k, checkpoint))
        view = params.actor_view()
        env = make_env(manifest)
        rows, stats = [], []
        for ep in range(manifest.eval_episodes):
            seed_int = int(np.random.SeedSequence([k, 2, ep]).generate_state(1)[0])
            rng = None if deterministic else np.random.default_rng(
                np.random.SeedSequence([k, 3, ep]))
            if is_combat:
                events, total = _eval_episode_combat(env, view, seed_int, deterministic, rng)
                st = metrics.combat_episode_stats({"teams": []}, events)
                rows.append({
                    "seed": k, "episode": ep, "win": st.win,
                    "episode_steps": st.episode_steps, "team_return": total,
                })
                if manifest.keep_trajectories:
                    combat.write_event_log(
                        eval_dir / f"seed_{k}_ep_{ep}.events.jsonl",
                        manifest.combat, env.state, events,
                    )
            else:
                trajectory = _eval_episode_connect(env, view, seed_int, deterministic, rng)
                st = metrics.episode_stats(trajectory, manifest.world)
                rows.append({
                    "seed": k, "episode": ep,
                    "coverage_ratio": st.mean_coverage_ratio,
                    "overlap_rate": st.overlap_rate,
                    "mean_reward": st.mean_reward,
                    "episode_length": st.episode_length,
                    "comm_components": st.comm_component_count_mean,
                })
                if manifest.keep_trajectories:
                    world.write_trajectory(eval_dir / f"seed_{k}_ep_{ep}.jsonl", trajectory)
            stats.append(st)
        return rows, stats

    results = _map_seeds(manifest, seeds, one)
    episode_rows = [row for rows, _ in results for row in rows]
    per_seed_stats = [stats for _, stats in results]
    columns = COMBAT_EPISODE_COLUMNS if is_combat else EPISODE_COLUMNS
    metrics.write_csv(eval_dir / "episodes.csv", columns, episode_rows, comments)

    summary = {}
    if all(stats for stats in per_seed_stats):
        agg = metrics.aggregate_seeds(per_seed_stats)
        if is_combat:
            win_mean, win_std = agg["win_rate"]
            steps_mean, steps_std = agg["episode_steps"]
            summary = {
                "method": method_name(manifest), "win_rate": win_mean,
                "win_rate_std": win_std, "avg_episode_steps": steps_mean,
                "steps_std": steps_std,
            }
            metrics.write_csv(
                eval_dir / "summary.csv", metrics.COMBAT_COLUMNS, [summary], comments)
        else:
            cov_mean, cov_std = agg["mean_coverage_ratio"]
            summary = {
                "method": method_name(manifest),
                "num_uavs": manifest.world.num_uavs,
                "num_nodes": manifest.world.num_nodes,
                "comm": manifest.world.comm_mode,
                "obs": manifest.world.obs_mode,
                "coverage_mean": cov_mean,
                "coverage_std": cov_std,
            }
            metrics.write_csv(
                eval_dir / "summary.csv", metrics.RESULTS_COLUMNS, [summary], comments)
    else:
        columns = metrics.COMBAT_COLUMNS if is_combat else metrics.RESULTS_COLUMNS
        metrics.write_csv(eval_dir / "summary.csv", columns, [], comments)

    from . import plots

    plots.eval_summary(dict(zip(seeds, per_seed_stats)), is_combat, eval_dir / "eval.png")
    return {"episodes": episode_rows, "summary": summary}


def run_baseline(manifest: ExperimentManifest, seed=None, out_dir=None) -> list:
    """Grid-restricted placement bounds on seeded static snapshots.

    Each snapshot freezes a fresh reset's node layout; the solver column
    records whether the exact search finished within budget or fell back
    to the greedy bound.
    """
    if manifest.scenario != "connect":
        raise ConfigError("run_baseline needs scenario=connect")
    out = _resolve_out(manifest, out_dir, "baseline")
    cfg = manifest.world
    bl = manifest.baseline
    base_seed = int(seed) if seed is not None else manifest.seeds[0]
    grid = baseline.arena_grid(cfg.arena_side, bl.resolution)
    rows = []
    for s in range(bl.snapshots):
        snap_seed = int(np.random.SeedSequence([base_seed, 5, s]).generate_state(1)[0])
        state = world.reset(cfg, snap_seed)
        instance = baseline.CoverageInstance(
            node_positions=state.node_pos,
            node_weights=state.node_weight,
            uav_origins=state.uav_pos,
            candidate_grid=grid,
            r_cov=cfg.r_cov,
            relocation_weight=bl.relocation_weight,
        )
        try:
            sol = baseline.solve_exact(instance, cfg.num_uavs, expansion_budget=bl.budget)
            solver = "exact"
        except baseline.BudgetExceededError:
            log.info("snapshot %d: exact search over budget, using greedy", s)
            sol = baseline.solve_greedy(instance, cfg.num_uavs)
            solver = "greedy"
        total = float(instance.node_weights.sum())
        bound = float(instance.node_weights[sol.covered_mask].sum()) / total
        rows.append({"snapshot": s, "solver": solver, "coverage_bound": bound})
    metrics.write_csv(out / "baseline.csv", BASELINE_COLUMNS, rows, _hash_comments(manifest))
    from . import plots

    plots.baseline_bounds(rows, out / "baseline.png")
    return rows


def _world_config_for_size(cfg: WorldConfig, m: int, n: int) -> WorldConfig:
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(WorldConfig)}
    kwargs.update(num_uavs=m, num_nodes=n, node_weights=None)
    return WorldConfig(**kwargs)


def run_sweep(manifest: ExperimentManifest, checkpoint=None, seed=None, out_dir=None) -> list:
    """Zero-shot transfer: one trained checkpoint evaluated across team
    sizes with proportionally scaled node counts, without fine-tuning."""
    if manifest.scenario != "connect":
        raise ConfigError("run_sweep needs scenario=connect")
    out = _resolve_out(manifest, out_dir, "sweep")
    eval_seed = int(seed) if seed is not None else manifest.seeds[0]
    params = _load_compatible_policy(
        manifest, _checkpoint_for(manifest, out, eval_seed, checkpoint))

    sizes = manifest.sweep.sizes
    if sizes is None:
        m0 = manifest.world.num_uavs
        sizes = tuple(m for m in range(m0 - 2, m0 + 3) if m >= 1)
    nodes = manifest.sweep.nodes
    if nodes is None:
        nodes = tuple(2 * m for m in sizes)
    if len(nodes) != len(sizes):
        raise ConfigError(
            f"manifest field 'sweep.nodes': {len(nodes)} entries for {len(sizes)} sizes"
        )
    node_for = {int(m): int(n) for m, n in zip(sizes, nodes)}

    def env_for_size(m: int):
        cfg = _world_config_for_size(manifest.world, m, node_for[m])
        info = {"num_nodes": node_for[m], "comm": cfg.comm_mode, "obs": cfg.obs_mode}
        return (lambda: ConnectEnv(cfg)), info

    episodes = manifest.sweep.episodes or manifest.eval_episodes
    rows = metrics.zero_shot_sweep(
        params.actor_view(), env_for_size, sizes, episodes=episodes, seed_key=(eval_seed, 2))
    metrics.write_csv(out / "sweep.csv", metrics.ZERO_SHOT_COLUMNS, rows,
                      _hash_comments(manifest))
    from . import plots

    plots.zero_shot_curve(rows, out / "sweep.png")
    return rows
