"""Actor-critic training with centralized values and decentralized actors.

The single shared actor maps [own observation features; h^(K)] to a
diagonal-Gaussian action head. The critic reads a flat global state
vector and exists only during training; evaluation code receives an
ActorView that does not even carry critic weights.

Updates are PPO-style: clipped ratio surrogate on whitened GAE
advantages, a squared-error value loss on normalized targets, an
entropy bonus, Adam with per-group gradient-norm clipping. The critic
regresses running-normalized returns because raw episode returns span
two orders of magnitude across layouts, which otherwise drowns the
surrogate signal during the critic's transient.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .errors import ConfigError, ContractError, TrainingAbort


@dataclass
class TrainConfig:
    total_env_steps: int = 200_000
    rollout_length: int = 400
    minibatch_steps: int = 50
    epochs: int = 2
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    num_parallel_envs: int = 1
    eval_every_updates: int = 40
    eval_episodes: int = 10
    checkpoint_every_updates: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError(f"clip_epsilon must be in (0, 1), got {self.clip_epsilon}")
        for name in ("rollout_length", "minibatch_steps", "epochs", "learning_rate", "num_parallel_envs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name, v in (("gamma", self.gamma), ("gae_lambda", self.gae_lambda)):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.total_env_steps < 0:
            raise ConfigError(f"total_env_steps must be >= 0, got {self.total_env_steps}")


@dataclass
class ActorView:
    """Everything needed to act; deliberately excludes the critic."""

    encoder: enc.EncoderParams
    actor: ad.Mlp
    log_std: ad.Tensor


@dataclass
class PolicyParams:
    encoder: enc.EncoderParams
    actor: ad.Mlp  # [self_dim + embed] -> act_dim
    log_std: ad.Tensor  # (act_dim,)
    critic: ad.Mlp  # [state_dim] -> 1
    act_dim: int
    state_dim: int

    def actor_view(self) -> ActorView:
        return ActorView(encoder=self.encoder, actor=self.actor, log_std=self.log_std)

    def named(self) -> dict:
        out = {f"enc.{k}": v for k, v in self.encoder.named().items()}
        out.update(self.actor.named("actor"))
        out.update(self.critic.named("critic"))
        out["log_std"] = self.log_std
        return out


def init_policy(
    rng: np.random.Generator,
    enc_config: enc.EncoderConfig,
    act_dim: int,
    state_dim: int,
    actor_hidden: int = 64,
    critic_hidden: int = 64,
    init_log_std: float = 0.0,
) -> PolicyParams:
    """Fresh parameters; the actor's output layer starts near zero so the
    initial policy is approximately a centred Gaussian."""
    return PolicyParams(
        encoder=enc.init_encoder(rng, enc_config),
        actor=ad.mlp_init(
            rng, [enc_config.self_dim + enc_config.embed_dim, actor_hidden, act_dim], out_scale=0.01
        ),
        log_std=ad.parameter(np.full(act_dim, init_log_std)),
        critic=ad.mlp_init(rng, [state_dim, critic_hidden, critic_hidden, 1]),
        act_dim=act_dim,
        state_dim=state_dim,
    )


# ---------------------------------------------------------------------------
# acting and value estimation


def _actor_mean(view, packs) -> ad.Tensor:
    """(sum_M, act_dim) action means for a list of packed observations."""
    h, _ = enc.encode_batch(packs, view.encoder)
    self_cat = np.concatenate([p.self_feats for p in packs], axis=0)
    actor_in = ad.concat([ad.tensor(self_cat), h], axis=1)
    return ad.mlp_forward(view.actor, actor_in)


def _logprob_data(mean, log_std, actions) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return (
        -0.5 * (z * z).sum(axis=-1)
        - log_std.sum()
        - 0.5 * mean.shape[-1] * ad.LOG_2PI
    )


def act(pack, view, rng: np.random.Generator | None = None, deterministic: bool = False):
    """Sample (or take the mean of) the shared policy for every agent.

    Returns (actions (M, act_dim), log_probs (M,), aux). Works with an
    ActorView or full PolicyParams; never touches critic weights.
    """
    pack = pack.pack() if hasattr(pack, "pack") else pack
    mean = _actor_mean(view, [pack]).data
    log_std = view.log_std.data
    if deterministic:
        actions = mean.copy()
    else:
        if rng is None:
            raise ContractError("sampling mode needs an rng; pass deterministic=True otherwise")
        actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return actions, _logprob_data(mean, log_std, actions), {"mean": mean}


def evaluate_value(state_vec: np.ndarray, params: PolicyParams, vnorm: ValueNorm | None = None) -> float:
    """Centralized value estimate in reward units; training-time only."""
    state_vec = np.asarray(state_vec, dtype=np.float64)
    if state_vec.shape != (params.state_dim,):
        raise ConfigError(
            f"critic expects a ({params.state_dim},) state vector, got {state_vec.shape}"
        )
    v = float(ad.mlp_forward(params.critic, ad.tensor(state_vec[None, :])).data[0, 0])
    return vnorm.denormalize(v) if vnorm is not None else v


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Standard generalized advantage estimation.

    values carries one bootstrap entry beyond the last step; dones cut
    both the delta bootstrap and the recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t = rewards.shape[0]
    if values.shape[0] != t + 1 or dones.shape[0] != t:
        raise ContractError(
            f"misaligned GAE inputs: {t} rewards, {values.shape[0]} values, {dones.shape[0]} dones"
        )
    adv = np.zeros(t)
    acc = 0.0
    for k in range(t - 1, -1, -1):
        not_done = 1.0 - dones[k]
        delta = rewards[k] + gamma * values[k + 1] * not_done - values[k]
        acc = delta + gamma * lam * not_done * acc
        adv[k] = acc
    return adv, adv + values[:-1]


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over a named parameter dict with grad-norm clipping.

    With `groups` set (param key -> group label), each group's gradient
    norm is clipped independently. The critic's value errors start orders
    of magnitude above the surrogate loss, so a single global norm would
    let the critic's gradients scale the policy's to nothing.
    """

    def __init__(self, named: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 groups: dict | None = None):
        self.named = named
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in named.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in named.items()}
        self.groups = groups or {}

    def zero_grads(self):
        for p in self.named.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        return math.sqrt(
            sum(float((p.grad * p.grad).sum()) for p in self.named.values() if p.grad is not None)
        )

    def _group_scales(self, max_grad_norm: float) -> dict:
        sq = {}
        for k, p in self.named.items():
            if p.grad is None:
                continue
            label = self.groups.get(k, "")
            sq[label] = sq.get(label, 0.0) + float((p.grad * p.grad).sum())
        return {
            label: max_grad_norm / (math.sqrt(s) + 1e-12) if math.sqrt(s) > max_grad_norm else 1.0
            for label, s in sq.items()
        }

    def step(self, max_grad_norm: float | None = None) -> float:
        norm = self.grad_norm()
        scales = {}
        if max_grad_norm is not None:
            scales = self._group_scales(max_grad_norm)
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for k, p in self.named.items():
            g = p.grad * scales.get(self.groups.get(k, ""), 1.0)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            p.data -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)
        return norm

    def state_arrays(self) -> dict:
        out = {}
        for k in self.named:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict, t: int):
        self.t = t
        for k in self.named:
            self.m[k] = np.array(arrays[f"adam.m.{k}"])
            self.v[k] = np.array(arrays[f"adam.v.{k}"])


class ValueNorm:
    """Debiased running mean/std of value-regression targets.

    The critic predicts values in normalized units; anything that needs
    reward-unit values (GAE, bootstraps) de-normalizes through this.
    """

    def __init__(self, beta: float = 0.995):
        self.beta = beta
        self.mean = 0.0
        self.mean_sq = 0.0
        self.count = 0

    def update(self, targets: np.ndarray):
        self.count += 1
        b = self.beta
        self.mean = b * self.mean + (1.0 - b) * float(np.mean(targets))
        self.mean_sq = b * self.mean_sq + (1.0 - b) * float(np.mean(np.square(targets)))

    def _stats(self):
        if self.count == 0:
            return 0.0, 1.0
        debias = 1.0 - self.beta**self.count
        m = self.mean / debias
        var = max(self.mean_sq / debias - m * m, 1e-4)
        return m, math.sqrt(var)

    def normalize(self, x):
        m, s = self._stats()
        return (x - m) / s

    def denormalize(self, x):
        m, s = self._stats()
        return x * s + m

    def state(self) -> dict:
        return {"beta": self.beta, "mean": self.mean, "mean_sq": self.mean_sq, "count": self.count}

    def load_state(self, state: dict):
        self.beta = state["beta"]
        self.mean = state["mean"]
        self.mean_sq = state["mean_sq"]
        self.count = state["count"]


# ---------------------------------------------------------------------------
# rollout storage


@dataclass
class RolloutBatch:
    packs: list  # FeaturePack per step
    state_vecs: np.ndarray  # (T, state_dim)
    actions: list  # (M, act_dim) per step
    log_probs: list  # (M,) per step
    alive: list  # (M,) float mask per step
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)
    values: np.ndarray  # (T + 1,) incl. bootstrap
    advantages: np.ndarray = None  # (T,)
    returns: np.ndarray = None  # (T,)

    def finalize(self, gamma: float, lam: float):
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values, self.dones, gamma, lam
        )


def minibatch_loss(
    packs, actions, old_logp, alive, adv_rows, state_vecs, returns, params, cfg
):
    """Clipped-surrogate + value + entropy loss for one minibatch.

    Must run inside an active Tape to be differentiable. Returns
    (loss, parts) with the unscaled components for inspection.
    """
    n_alive = max(float(np.sum(alive)), 1.0)
    mean = _actor_mean(params, packs)
    logp = ad.gaussian_logprob(mean, params.log_std, actions)
    ratio = ad.exp(ad.sub(logp, ad.tensor(old_logp)))
    surr = ad.minimum(
        ad.mul(ratio, ad.tensor(adv_rows)),
        ad.mul(
            ad.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon),
            ad.tensor(adv_rows),
        ),
    )
    policy_loss = ad.mul(ad.sum_(ad.mul(surr, ad.tensor(alive))), -1.0 / n_alive)

    v = ad.reshape(ad.mlp_forward(params.critic, ad.tensor(state_vecs)), (len(returns),))
    verr = ad.sub(v, ad.tensor(returns))
    value_loss = ad.mean(ad.mul(verr, verr))

    entropy = ad.gaussian_entropy(params.log_std)
    loss = ad.add(
        ad.add(policy_loss, ad.mul(value_loss, cfg.value_coef)),
        ad.mul(entropy, -cfg.entropy_coef),
    )
    parts = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "ratio": ratio,
    }
    return loss, parts


def ppo_update(batch: RolloutBatch, params: PolicyParams, cfg: TrainConfig, adam: Adam, rng,
               vnorm: ValueNorm | None = None):
    """One PPO pass over the batch; returns mean loss statistics.

    Advantages are whitened over the whole batch, every agent transition
    trains the shared actor, and per-drone alive masks drop transitions
    of eliminated agents. With a ValueNorm, the critic regresses the
    batch's returns in normalized units.
    """
    t_steps = len(batch.packs)
    if t_steps == 0:
        raise ContractError("ppo_update needs a nonempty batch")
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    targets = batch.returns
    if vnorm is not None:
        vnorm.update(targets)
        targets = vnorm.normalize(targets)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "grad_norm": 0.0}
    n_batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(t_steps)
        for lo in range(0, t_steps, cfg.minibatch_steps):
            idx = order[lo : lo + cfg.minibatch_steps]
            with ad.Tape():
                loss, parts = minibatch_loss(
                    packs=[batch.packs[i] for i in idx],
                    actions=np.concatenate([batch.actions[i] for i in idx], axis=0),
                    old_logp=np.concatenate([batch.log_probs[i] for i in idx]),
                    alive=np.concatenate([batch.alive[i] for i in idx]),
                    adv_rows=np.concatenate(
                        [np.full(batch.actions[i].shape[0], adv[i]) for i in idx]
                    ),
                    state_vecs=batch.state_vecs[idx],
                    returns=targets[idx],
                    params=params,
                    cfg=cfg,
                )
            if not np.isfinite(loss.data):
                raise TrainingAbort(
                    "non-finite loss: "
                    f"policy={parts['policy_loss'].data} value={parts['value_loss'].data} "
                    f"entropy={parts['entropy'].data} ratio_max={parts['ratio'].data.max()}"
                )
            adam.zero_grads()
            ad.backward(loss)
            stats["grad_norm"] += adam.step(cfg.max_grad_norm)
            stats["policy_loss"] += float(parts["policy_loss"].data)
            stats["value_loss"] += float(parts["value_loss"].data)
            stats["entropy"] += float(parts["entropy"].data)
            n_batches += 1
    return {k: v / n_batches for k, v in stats.items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(path, params: PolicyParams, meta: dict, adam: Adam | None = None):
    arrays = {k: v.data for k, v in params.named().items()}
    meta = dict(meta)
    meta["enc_config"] = asdict(params.encoder.config)
    meta["act_dim"] = params.act_dim
    meta["state_dim"] = params.state_dim
    meta["actor_hidden"] = int(params.actor.weights[0].data.shape[1])
    meta["critic_hidden"] = int(params.critic.weights[0].data.shape[1])
    if adam is not None:
        arrays.update(adam.state_arrays())
        meta["adam_t"] = adam.t
    ad.save_checkpoint(path, arrays, meta)


def load_policy(path):
    """Rebuild (params, arrays, meta) from a checkpoint file."""
    arrays, meta = ad.load_checkpoint(path)
    cfg = enc.EncoderConfig(**meta["enc_config"])
    params = init_policy(
        np.random.default_rng(0),
        cfg,
        meta["act_dim"],
        meta["state_dim"],
        actor_hidden=meta["actor_hidden"],
        critic_hidden=meta["critic_hidden"],
    )
    named = params.named()
    for k, tensor in named.items():
        if k not in arrays:
            raise ConfigError(f"checkpoint missing parameter {k}")
        if arrays[k].shape != tensor.data.shape:
            raise ConfigError(
                f"checkpoint parameter {k} has shape {arrays[k].shape}, expected {tensor.data.shape}"
            )
        tensor.data[:] = arrays[k]
    return params, arrays, meta


# ---------------------------------------------------------------------------
# training loop


def evaluate_policy(env_factory, view, episodes: int, seed_key, deterministic=True):
    """Deterministic-policy rollouts; returns (mean_score, mean_return).

    The env's score is its own headline metric (coverage fraction for
    the relay task, win flag for the combat task), averaged per episode
    then across episodes. Runs entirely from local observations.
    """
    env = env_factory()
    scores, returns = [], []
    for ep in range(episodes):
        seed = int(np.random.SeedSequence([*seed_key, ep]).generate_state(1)[0])
        pack = env.reset(seed)
        total = 0.0
        done = False
        while not done:
            actions, _, _ = act(pack, view, deterministic=deterministic)
            pack, reward, done, info = env.step(actions)
            total += reward
        scores.append(env.episode_score())
        returns.append(total)
    return float(np.mean(scores)), float(np.mean(returns))


METRICS_COLUMNS = (
    "step",
    "mean_eval_coverage",
    "mean_eval_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "seed",
)


def _merge_batches(batches):
    """Concatenate finalized per-env rollouts; list order fixes the
    reduction order, so multi-env runs are reproducible given seeds."""
    if len(batches) == 1:
        return batches[0]
    return RolloutBatch(
        packs=[p for b in batches for p in b.packs],
        state_vecs=np.concatenate([b.state_vecs for b in batches], axis=0),
        actions=[a for b in batches for a in b.actions],
        log_probs=[x for b in batches for x in b.log_probs],
        alive=[x for b in batches for x in b.alive],
        rewards=np.concatenate([b.rewards for b in batches]),
        dones=np.concatenate([b.dones for b in batches]),
        values=np.concatenate([b.values for b in batches]),
        advantages=np.concatenate([b.advantages for b in batches]),
        returns=np.concatenate([b.returns for b in batches]),
    )


def train(env_factory, params: PolicyParams, cfg: TrainConfig, out_dir=None, resume=True):
    """Alternate rollout collection and PPO updates; returns metrics rows.

    Each row matches METRICS_COLUMNS. With out_dir set, checkpoints and
    resume state land there ('latest.npz', 'final.npz'); an existing
    final checkpoint short-circuits, an existing latest resumes.

    Episodes that end by running out the clock are not true terminals:
    the value of the reached state is folded into the last reward, so
    the critic never has to represent time-to-horizon. Ends reported by
    the env without info["truncated"] (combat eliminations, draws) keep
    their zero continuation value.
    """
    from pathlib import Path

    n_envs = cfg.num_parallel_envs
    updates_total = cfg.total_env_steps // (cfg.rollout_length * n_envs)
    envs = [env_factory() for _ in range(n_envs)]
    sample_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    update_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    named = params.named()
    clip_groups = {k: ("critic" if k.startswith("critic") else "policy") for k in named}
    adam = Adam(named, cfg.learning_rate, groups=clip_groups)
    vnorm = ValueNorm()
    rows = []
    start_update = 0
    episode_idx = [0] * n_envs
    env_snaps = None

    latest = final = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        latest = out_dir / "latest.npz"
        final = out_dir / "final.npz"

    if resume and final is not None and final.exists():
        arrays, meta = ad.load_checkpoint(final)
        for k, tensor in named.items():
            tensor.data[:] = arrays[k]
        return json.loads(meta["metrics_rows"])
    if resume and latest is not None and latest.exists():
        arrays, meta = ad.load_checkpoint(latest)
        for k, tensor in named.items():
            tensor.data[:] = arrays[k]
        adam.load_state_arrays(arrays, meta["adam_t"])
        sample_rng.bit_generator.state = json.loads(meta["sample_rng"])
        update_rng.bit_generator.state = json.loads(meta["update_rng"])
        vnorm.load_state(meta["value_norm"])
        start_update = meta["update"]
        episode_idx = list(meta["episode_idx"])
        env_snaps = meta["env_snapshot"]
        rows = json.loads(meta["metrics_rows"])

    def episode_seed(rank, i):
        return int(np.random.SeedSequence([cfg.seed, 1, rank, i]).generate_state(1)[0])

    def run_eval(step, stats):
        score, ret = evaluate_policy(
            env_factory, params.actor_view(), cfg.eval_episodes, (cfg.seed, 2)
        )
        rows.append(
            {
                "step": step,
                "mean_eval_coverage": score,
                "mean_eval_reward": ret,
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "seed": cfg.seed,
            }
        )

    def save(path, update):
        meta = {
            "step": update * cfg.rollout_length * n_envs,
            "update": update,
            "episode_idx": episode_idx,
            "sample_rng": json.dumps(sample_rng.bit_generator.state),
            "update_rng": json.dumps(update_rng.bit_generator.state),
            "value_norm": vnorm.state(),
            "env_snapshot": [env.snapshot() for env in envs],
            "metrics_rows": json.dumps(rows),
            "scenario": envs[0].scenario,
        }
        save_policy(path, params, meta, adam)

    zero_stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    if start_update == 0:
        run_eval(0, zero_stats)

    if env_snaps is not None:
        packs_cur = [env.restore(snap) for env, snap in zip(envs, env_snaps)]
    else:
        packs_cur = [env.reset(episode_seed(r, episode_idx[r])) for r, env in enumerate(envs)]

    for update in range(start_update, updates_total):
        rank_batches = []
        for rank, env in enumerate(envs):
            pack = packs_cur[rank]
            packs, state_vecs, values, acts, logps, alives, rewards, dones = (
                [], [], [], [], [], [], [], [],
            )
            for _ in range(cfg.rollout_length):
                state_vecs.append(env.state_vec())
                values.append(evaluate_value(state_vecs[-1], params, vnorm))
                actions, logp, _ = act(pack, params, sample_rng)
                packs.append(pack)
                acts.append(actions)
                logps.append(logp)
                alives.append(env.alive_mask())
                pack, reward, done, info = env.step(actions)
                if done and info.get("truncated", False):
                    reward = reward + cfg.gamma * evaluate_value(env.state_vec(), params, vnorm)
                rewards.append(reward)
                dones.append(float(done))
                if done:
                    episode_idx[rank] += 1
                    pack = env.reset(episode_seed(rank, episode_idx[rank]))
            values.append(0.0 if dones[-1] else evaluate_value(env.state_vec(), params, vnorm))
            packs_cur[rank] = pack
            b = RolloutBatch(
                packs=packs,
                state_vecs=np.stack(state_vecs),
                actions=acts,
                log_probs=logps,
                alive=alives,
                rewards=np.array(rewards),
                dones=np.array(dones),
                values=np.array(values),
            )
            b.finalize(cfg.gamma, cfg.gae_lambda)
            rank_batches.append(b)
        batch = _merge_batches(rank_batches)
        stats = ppo_update(batch, params, cfg, adam, update_rng, vnorm)

        done_all = update + 1 == updates_total
        if (update + 1) % cfg.eval_every_updates == 0 or done_all:
            run_eval((update + 1) * cfg.rollout_length * n_envs, stats)
        if latest is not None and ((update + 1) % cfg.checkpoint_every_updates == 0 or done_all):
            save(latest, update + 1)

    if final is not None:
        save(final, updates_total)
    return rows
