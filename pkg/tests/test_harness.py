"""Harness tests: manifest parsing with field-level errors, the two
environment adapters' episode protocol (including exact snapshot
resume), artifact layout, byte-identical re-runs, and the CLI."""

from __future__ import annotations

import json

import numpy as np
import pytest

from skyrelay import cli, combat, harness, learner, metrics, world
from skyrelay.errors import ConfigError

FLAT_TEXT = """
# desk-scale experiment
scenario = connect
seeds = 0, 1
eval_episodes = 2
out_dir = {out}
keep_trajectories = true

world.num_uavs = 2
world.num_nodes = 3
world.horizon = 20

model.embed_dim = 16
model.key_dim = 8
model.hidden = 12
model.actor_hidden = 12
model.critic_hidden = 12

train.total_env_steps = 100
train.rollout_length = 25
train.minibatch_steps = 25
train.eval_every_updates = 2
train.eval_episodes = 2
train.checkpoint_every_updates = 2

baseline.snapshots = 3
sweep.episodes = 2
"""


def desk_manifest(tmp_path, **overrides):
    path = tmp_path / "desk.manifest"
    text = FLAT_TEXT.format(out=tmp_path / "run")
    for key, value in overrides.items():
        text += f"\n{key} = {value}\n"
    path.write_text(text)
    return harness.parse_manifest(path)


# ---------------------------------------------------------------------------
# manifest parsing


def test_flat_manifest_parses_sections_and_defaults(tmp_path):
    m = desk_manifest(tmp_path)
    assert m.scenario == "connect" and m.seeds == (0, 1)
    assert m.world.num_uavs == 2 and m.world.num_nodes == 3
    assert m.world.r_cov == 15.0  # untouched default
    assert m.train.total_env_steps == 100 and m.train.gamma == 0.99
    assert m.model.embed_dim == 16 and m.model.no_comm is False
    assert m.keep_trajectories is True
    assert m.baseline.snapshots == 3 and m.eval_episodes == 2


def test_minimal_manifest_uses_documented_defaults(tmp_path):
    path = tmp_path / "min.manifest"
    path.write_text("scenario = connect\n")
    m = harness.parse_manifest(path)
    assert m.seeds == (0, 1, 2) and m.eval_episodes == 50
    assert m.world.num_uavs == 3 and m.world.num_nodes == 6
    assert m.out_dir is None and m.workers == 1


def test_json_manifest_is_an_equivalent_encoding(tmp_path):
    flat = desk_manifest(tmp_path)
    data = harness.manifest_canonical(flat)
    jpath = tmp_path / "same.json"
    jpath.write_text(json.dumps(data))
    from_json = harness.parse_manifest(jpath)
    assert harness.manifest_canonical(from_json) == data
    assert harness.manifest_hash(from_json) == harness.manifest_hash(flat)


def test_top_level_ablation_aliases_route_to_model(tmp_path):
    path = tmp_path / "ablate.manifest"
    path.write_text("scenario = connect\nno_comm = true\nencoder.rounds = 3\n")
    m = harness.parse_manifest(path)
    assert m.model.no_comm is True and m.model.rounds == 3
    assert harness.method_name(m) == "no_comm"
    both = harness.parse_manifest(path)
    both.model.mean_pool = True
    assert harness.method_name(both) == "no_comm+mean_pool"


def test_manifest_field_level_errors(tmp_path):
    path = tmp_path / "bad.manifest"
    path.write_text("scenario = connect\nworld.numm_uavs = 3\n")
    with pytest.raises(ConfigError, match="world.numm_uavs"):
        harness.parse_manifest(path)
    path.write_text("scenario = connect\nwibble = 1\n")
    with pytest.raises(ConfigError, match="'wibble'"):
        harness.parse_manifest(path)
    path.write_text("scenario = connect\nworld.num_uavs = 0\n")
    with pytest.raises(ConfigError, match="world"):
        harness.parse_manifest(path)
    path.write_text("scenario = teapot\n")
    with pytest.raises(ConfigError, match="scenario"):
        harness.parse_manifest(path)
    path.write_text("scenario = connect\njust a line\n")
    with pytest.raises(ConfigError, match="line 2"):
        harness.parse_manifest(path)
    path.write_text("scenario = connect\nencoder.rounds = 2\nmodel.rounds = 2\n")
    with pytest.raises(ConfigError, match="duplicated"):
        harness.parse_manifest(path)
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        harness.parse_manifest(path)


def test_manifest_hash_tracks_content(tmp_path):
    a = desk_manifest(tmp_path)
    b = desk_manifest(tmp_path)
    assert harness.manifest_hash(a) == harness.manifest_hash(b)
    b.world.r_cov = 20.0
    assert harness.manifest_hash(a) != harness.manifest_hash(b)


# ---------------------------------------------------------------------------
# environment adapters


def connect_env(m=2, n=3, horizon=12, **kw):
    return harness.ConnectEnv(world.WorldConfig(num_uavs=m, num_nodes=n, horizon=horizon, **kw))


def test_connect_env_episode_protocol():
    env = connect_env()
    pack = env.reset(4)
    assert pack.self_feats.shape == (2, 4)
    assert env.state_vec().shape == (4 * (2 + 3),)
    np.testing.assert_allclose(
        env.state_vec()[:2], env.state.uav_pos[0] / env.config.arena_side)
    assert list(env.alive_mask()) == [1.0, 1.0]
    done = False
    steps = 0
    while not done:
        _, reward, done, _ = env.step(np.ones((2, 2)))
        steps += 1
    assert steps == 12 and len(env.trajectory) == 12
    per_step = [float(np.mean(rec["coverage_mask"])) for rec in env.trajectory]
    assert env.episode_score() == float(np.mean(per_step))
    assert env.episode_score() == metrics.coverage_ratio(env.trajectory)


def test_connect_env_snapshot_restore_is_exact():
    env = connect_env(horizon=30)
    env.reset(9)
    rng = np.random.default_rng(1)
    acts = rng.uniform(-5, 5, size=(18, 2, 2))
    for a in acts[:6]:
        env.step(a)
    snap = json.loads(json.dumps(env.snapshot()))  # must survive JSON
    tail = [env.step(a) for a in acts[6:]]
    resumed = connect_env(horizon=30)
    resumed.restore(snap)
    for (pack, reward, done, _), a in zip(tail, acts[6:]):
        _, r2, d2, _ = resumed.step(a)
        assert r2 == reward and d2 == done
    assert np.array_equal(resumed.state.uav_pos, env.state.uav_pos)
    assert np.array_equal(resumed.state.node_pos, env.state.node_pos)
    assert resumed.episode_score() == env.episode_score()


def duel_env(horizon=30, **opp):
    cfg = combat.CombatConfig(num_attackers=2, num_defenders=2, horizon=horizon)
    return harness.CombatEnv(cfg, combat.ScriptedPolicy(combat.DEFENDER, **opp))


def test_combat_env_episode_protocol():
    env = duel_env()
    pack = env.reset(0)
    assert pack.self_feats.shape == (2, 6)
    assert env.state_vec().shape == (7 * 4 + 1,)
    assert env.state_vec()[6] == 1.0  # alive flag of drone 0
    assert env.state_vec()[-1] == 1.0  # full clock remaining at reset
    idle = np.tile([0.0, 0.0, 0.0, -1.0], (2, 1))
    _, reward, done, info = env.step(idle)
    # two attackers each pay one tick of the time penalty
    assert reward == pytest.approx(2 * env.config.time_penalty, abs=1e-12)
    assert not done and info["event"]["step"] == 0
    assert env.episode_score() == 0.0
    assert len(env.alive_mask()) == 2


def test_combat_env_snapshot_restore_is_exact():
    env = duel_env(horizon=40, speed_scale=0.8)
    pack = env.reset(3)
    chaser = combat.ScriptedPolicy(combat.ATTACKER)
    for _ in range(5):
        pack, _, done, _ = env.step(chaser(env.state, env.config))
    snap = json.loads(json.dumps(env.snapshot()))
    tail = []
    while not done:
        pack, reward, done, _ = env.step(chaser(env.state, env.config))
        tail.append(reward)
    resumed = duel_env(horizon=40, speed_scale=0.8)
    resumed.restore(snap)
    done = False
    replay = []
    while not done:
        _, reward, done, _ = resumed.step(chaser(resumed.state, resumed.config))
        replay.append(reward)
    assert replay == tail
    assert resumed.episode_score() == env.episode_score()


def test_combat_env_rejects_attacker_side_opponent():
    cfg = combat.CombatConfig(num_attackers=2, num_defenders=2)
    with pytest.raises(ConfigError, match="defender"):
        harness.CombatEnv(cfg, combat.ScriptedPolicy(combat.ATTACKER))


def test_make_env_and_build_policy_dispatch(tmp_path):
    m = desk_manifest(tmp_path)
    env = harness.make_env(m)
    assert isinstance(env, harness.ConnectEnv)
    params = harness.build_policy(m, seed=0)
    assert params.act_dim == 2 and params.state_dim == env.state_dim
    assert params.encoder.config.embed_dim == 16

    m.scenario = "combat"
    m.model.no_comm = True
    duel = harness.make_env(m)
    assert isinstance(duel, harness.CombatEnv)
    cparams = harness.build_policy(m, seed=0)
    assert cparams.act_dim == 4
    assert cparams.encoder.config.no_comm is True


# ---------------------------------------------------------------------------
# run_train


def test_run_train_writes_artifacts_and_resumes(tmp_path):
    m = desk_manifest(tmp_path)
    rows = harness.run_train(m)
    out = tmp_path / "run"
    for k in (0, 1):
        assert (out / f"seed_{k}" / "final.npz").exists()
        assert (out / f"seed_{k}" / "progress.csv").exists()
    assert (out / "training.png").exists()
    comments, header, parsed = metrics.read_csv(out / "seed_0" / "progress.csv")
    assert header == learner.METRICS_COLUMNS
    assert comments == [f"manifest sha256={harness.manifest_hash(m)}"]
    assert len(parsed) == len(rows[0])

    before = (out / "seed_0" / "progress.csv").read_bytes()
    final_before = (out / "seed_0" / "final.npz").read_bytes()
    again = harness.run_train(m)  # finished runs short-circuit
    assert again[0] == rows[0]
    assert (out / "seed_0" / "progress.csv").read_bytes() == before
    assert (out / "seed_0" / "final.npz").read_bytes() == final_before


def test_run_train_single_seed_selection(tmp_path):
    m = desk_manifest(tmp_path)
    rows = harness.run_train(m, seed=5)
    assert list(rows) == [5]
    assert (tmp_path / "run" / "seed_5" / "final.npz").exists()
    assert not (tmp_path / "run" / "seed_0").exists()


def test_run_train_requires_out_dir(tmp_path):
    path = tmp_path / "no_out.manifest"
    path.write_text("scenario = connect\n")
    with pytest.raises(ConfigError, match="out_dir"):
        harness.run_train(harness.parse_manifest(path))


def test_parallel_workers_match_sequential_rows(tmp_path):
    seq = desk_manifest(tmp_path, **{"out_dir": tmp_path / "seq"})
    par = desk_manifest(tmp_path, **{"out_dir": tmp_path / "par", "workers": 2})
    rows_seq = harness.run_train(seq)
    rows_par = harness.run_train(par)
    assert rows_seq == rows_par


# ---------------------------------------------------------------------------
# run_eval


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    m = desk_manifest(tmp)
    harness.run_train(m)
    return m, tmp / "run"


def test_run_eval_artifacts_and_reproducibility(trained):
    m, out = trained
    result = harness.run_eval(m)
    episodes = out / "eval" / "episodes.csv"
    summary = out / "eval" / "summary.csv"
    assert episodes.exists() and summary.exists() and (out / "eval" / "eval.png").exists()
    first = episodes.read_bytes()
    harness.run_eval(m)
    assert episodes.read_bytes() == first

    _, header, rows = metrics.read_csv(episodes)
    assert header == harness.EPISODE_COLUMNS
    assert len(rows) == 2 * m.eval_episodes  # two seeds
    _, _, srows = metrics.read_csv(summary)
    per_seed = [
        float(np.mean([float(r["coverage_ratio"]) for r in rows if r["seed"] == str(k)]))
        for k in m.seeds
    ]
    assert float(srows[0]["coverage_mean"]) == float(np.mean(per_seed))
    assert srows[0]["method"] == "full"
    assert result["summary"]["num_uavs"] == 2


def test_run_eval_persisted_logs_recompute_to_the_csv(trained):
    m, out = trained
    harness.run_eval(m)
    _, _, rows = metrics.read_csv(out / "eval" / "episodes.csv")
    for row in rows[:4]:
        traj = world.read_trajectory(
            out / "eval" / f"seed_{row['seed']}_ep_{row['episode']}.jsonl")
        stats = metrics.episode_stats(traj, m.world)
        assert float(row["coverage_ratio"]) == stats.mean_coverage_ratio
        assert float(row["overlap_rate"]) == stats.overlap_rate
        assert float(row["mean_reward"]) == stats.mean_reward


def test_run_eval_zero_episodes_writes_header_only(trained):
    m, out = trained
    quiet = harness.parse_manifest(out.parent / "desk.manifest")
    quiet.eval_episodes = 0
    quiet.out_dir = str(out.parent / "empty")
    harness.run_train(quiet, seed=0)
    harness.run_eval(quiet, seed=0)
    _, header, rows = metrics.read_csv(out.parent / "empty" / "eval" / "episodes.csv")
    assert header == harness.EPISODE_COLUMNS and rows == []
    _, sheader, srows = metrics.read_csv(out.parent / "empty" / "eval" / "summary.csv")
    assert sheader == metrics.RESULTS_COLUMNS and srows == []


def test_run_eval_stochastic_mode_differs(trained):
    m, out = trained
    det = harness.run_eval(m, seed=0)
    sto = harness.run_eval(m, seed=0, deterministic=False)
    det_rewards = [r["mean_reward"] for r in det["episodes"]]
    sto_rewards = [r["mean_reward"] for r in sto["episodes"]]
    assert det_rewards != sto_rewards


def test_run_eval_missing_and_incompatible_checkpoints(tmp_path):
    m = desk_manifest(tmp_path)
    with pytest.raises(ConfigError, match="checkpoint not found"):
        harness.run_eval(m, seed=0)
    # train a tiny combat policy, then point the connect manifest at it
    duel = desk_manifest(tmp_path, scenario="combat", **{
        "combat.num_attackers": 2, "combat.num_defenders": 2, "combat.horizon": 20,
    })
    duel.out_dir = str(tmp_path / "duel")
    harness.run_train(duel, seed=0)
    with pytest.raises(ConfigError, match="act_dim"):
        harness.run_eval(m, seed=0, checkpoint=tmp_path / "duel" / "seed_0" / "final.npz")


def test_run_eval_combat_columns(tmp_path):
    duel = desk_manifest(tmp_path, scenario="combat", **{
        "combat.num_attackers": 2, "combat.num_defenders": 2, "combat.horizon": 20,
        "opponent.speed_scale": 0.5,
    })
    harness.run_train(duel, seed=0)
    harness.run_eval(duel, seed=0)
    _, header, rows = metrics.read_csv(tmp_path / "run" / "eval" / "episodes.csv")
    assert header == harness.COMBAT_EPISODE_COLUMNS
    assert len(rows) == duel.eval_episodes
    assert rows[0]["win"] in ("True", "False")
    _, sheader, srows = metrics.read_csv(tmp_path / "run" / "eval" / "summary.csv")
    assert sheader == metrics.COMBAT_COLUMNS
    assert 0.0 <= float(srows[0]["win_rate"]) <= 1.0
    logs = list((tmp_path / "run" / "eval").glob("*.events.jsonl"))
    assert len(logs) == duel.eval_episodes


# ---------------------------------------------------------------------------
# run_baseline


def test_run_baseline_rows_and_determinism(trained):
    m, out = trained
    rows = harness.run_baseline(m)
    assert len(rows) == m.baseline.snapshots
    assert all(r["solver"] == "exact" for r in rows)
    assert all(0.0 <= r["coverage_bound"] <= 1.0 for r in rows)
    first = (out / "baseline.csv").read_bytes()
    harness.run_baseline(m)
    assert (out / "baseline.csv").read_bytes() == first
    assert (out / "baseline.png").exists()


def test_run_baseline_budget_fallback_flags_greedy(tmp_path):
    m = desk_manifest(tmp_path, **{"baseline.budget": 1})
    rows = harness.run_baseline(m)
    assert all(r["solver"] == "greedy" for r in rows)


def test_run_baseline_rejects_combat(tmp_path):
    m = desk_manifest(tmp_path, scenario="combat")
    with pytest.raises(ConfigError, match="connect"):
        harness.run_baseline(m)


# ---------------------------------------------------------------------------
# run_sweep


def test_run_sweep_default_grid_and_csv(trained):
    m, out = trained
    rows = harness.run_sweep(m)
    # M=2 -> sizes 1..4, nodes twice the size
    assert [r["num_uavs"] for r in rows] == [1, 2, 3, 4]
    assert [r["num_nodes"] for r in rows] == [2, 4, 6, 8]
    assert all(0.0 <= r["coverage_ratio"] <= 1.0 for r in rows)
    assert (out / "sweep.csv").exists() and (out / "sweep.png").exists()


def test_sweep_training_size_row_equals_standard_eval(trained):
    m, out = trained
    # the default node rule at M=2 gives N=4; align the manifest so the
    # sweep's training-size row runs the exact same configuration
    aligned = harness.parse_manifest(out.parent / "desk.manifest")
    aligned.out_dir = str(out.parent / "aligned")
    kwargs = {f.name: getattr(aligned.world, f.name) for f in
              __import__("dataclasses").fields(world.WorldConfig)}
    kwargs.update(num_nodes=4, node_weights=None)
    aligned.world = world.WorldConfig(**kwargs)
    harness.run_train(aligned, seed=0)
    harness.run_eval(aligned, seed=0)
    rows = harness.run_sweep(aligned, seed=0)
    _, _, erows = metrics.read_csv(out.parent / "aligned" / "eval" / "episodes.csv")
    per_ep = [float(r["coverage_ratio"]) for r in erows]
    at_train = next(r for r in rows if r["num_uavs"] == 2)
    assert at_train["coverage_ratio"] == float(np.mean(per_ep))


def test_run_sweep_validates_inputs(tmp_path):
    m = desk_manifest(tmp_path, **{"sweep.sizes": "2, 3", "sweep.nodes": "4"})
    harness.run_train(m, seed=0)
    with pytest.raises(ConfigError, match="sweep.nodes"):
        harness.run_sweep(m, seed=0)
    duel = desk_manifest(tmp_path, scenario="combat")
    with pytest.raises(ConfigError, match="connect"):
        harness.run_sweep(duel)


# ---------------------------------------------------------------------------
# CLI


def test_cli_runs_every_subcommand(tmp_path, capsys):
    path = tmp_path / "desk.manifest"
    path.write_text(FLAT_TEXT.format(out=tmp_path / "run"))
    assert cli.main(["train", "--manifest", str(path), "--seed", "0"]) == 0
    assert cli.main(["eval", "--manifest", str(path), "--seed", "0"]) == 0
    assert cli.main(["baseline", "--manifest", str(path)]) == 0
    assert cli.main(["sweep", "--manifest", str(path), "--seed", "0"]) == 0
    assert (tmp_path / "run" / "sweep.csv").exists()


def test_cli_reports_errors_with_exit_code_two(tmp_path, capsys):
    assert cli.main(["train", "--manifest", str(tmp_path / "missing.manifest")]) == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.manifest"
    bad.write_text("scenario = teapot\n")
    assert cli.main(["train", "--manifest", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "scenario" in err


def test_cli_requires_a_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])
