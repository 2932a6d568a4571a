"""Dual-attention observation encoder.

Stage one embeds each agent's sensed entities with scaled dot-product
attention (agent embedding as query) and concatenates the summary onto
the agent embedding. Stage two runs K rounds of self-attention message
passing over the communication graph, each agent attending over its
neighbors plus a self-loop, with a residual MLP update.

The batched path stacks any number of world snapshots into one flat
agent axis; ragged entity and neighbor sets become contiguous row
segments handled by the segment primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass
class EncoderConfig:
    self_dim: int
    entity_dim: int = 8
    embed_dim: int = 64
    key_dim: int = 32
    hidden: int = 64
    rounds: int = 2
    no_comm: bool = False
    mean_pool: bool = False
    per_round_comm: bool = False

    def __post_init__(self):
        if self.embed_dim % 2 != 0:
            raise ConfigError(f"embed_dim must be even, got {self.embed_dim}")
        for name in ("self_dim", "entity_dim", "embed_dim", "key_dim", "hidden", "rounds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def half(self) -> int:
        return self.embed_dim // 2


@dataclass
class EncoderParams:
    config: EncoderConfig
    f_a: ad.Mlp  # self_dim -> half
    f_e: ad.Mlp  # entity_dim -> half
    w_q: ad.Tensor  # (half, key_dim)
    w_k: ad.Tensor  # (half, key_dim)
    w_v: ad.Tensor  # (half, half)
    wc_q: list  # per round (or shared, length 1): (embed, key_dim)
    wc_k: list
    wc_v: list  # (embed, embed)
    f_upd: ad.Mlp  # 2*embed -> embed

    def round_weights(self, k: int):
        idx = k if self.config.per_round_comm else 0
        return self.wc_q[idx], self.wc_k[idx], self.wc_v[idx]

    def named(self) -> dict:
        out = {}
        out.update(self.f_a.named("f_a"))
        out.update(self.f_e.named("f_e"))
        out.update({"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v})
        for r in range(len(self.wc_q)):
            out[f"wc_q{r}"] = self.wc_q[r]
            out[f"wc_k{r}"] = self.wc_k[r]
            out[f"wc_v{r}"] = self.wc_v[r]
        out.update(self.f_upd.named("f_upd"))
        return out


def _proj(rng, n_in, n_out):
    a = math.sqrt(6.0 / (n_in + n_out))
    return ad.parameter(rng.uniform(-a, a, size=(n_in, n_out)))


def init_encoder(rng: np.random.Generator, config: EncoderConfig) -> EncoderParams:
    half, d, dk = config.half, config.embed_dim, config.key_dim
    n_sets = config.rounds if config.per_round_comm else 1
    return EncoderParams(
        config=config,
        f_a=ad.mlp_init(rng, [config.self_dim, config.hidden, half]),
        f_e=ad.mlp_init(rng, [config.entity_dim, config.hidden, half]),
        w_q=_proj(rng, half, dk),
        w_k=_proj(rng, half, dk),
        w_v=_proj(rng, half, half),
        wc_q=[_proj(rng, d, dk) for _ in range(n_sets)],
        wc_k=[_proj(rng, d, dk) for _ in range(n_sets)],
        wc_v=[_proj(rng, d, d) for _ in range(n_sets)],
        f_upd=ad.mlp_init(rng, [2 * d, config.hidden, d]),
    )


# ---------------------------------------------------------------------------
# single-agent reference path


def embed_environment(self_state, entity_feats, params: EncoderParams):
    """Entity attention for one agent: returns (h0 (embed,), alpha (n,)).

    An empty entity list yields a zero summary half and empty weights.
    """
    cfg = params.config
    fa = ad.mlp_forward(params.f_a, ad.tensor(np.asarray(self_state)[None, :]))
    ents = np.asarray(entity_feats, dtype=np.float64).reshape(-1, cfg.entity_dim)
    n = ents.shape[0]
    if n == 0:
        h0 = ad.concat([fa, ad.tensor(np.zeros((1, cfg.half)))], axis=1)
        return ad.reshape(h0, (cfg.embed_dim,)), np.zeros(0)
    fe = ad.mlp_forward(params.f_e, ad.tensor(ents))
    keys = ad.matmul(fe, params.w_k)
    vals = ad.matmul(fe, params.w_v)
    if cfg.mean_pool:
        alpha = ad.tensor(np.full(n, 1.0 / n))
    else:
        q = ad.matmul(fa, params.w_q)
        logits = ad.sum_(ad.mul(keys, ad.concat([q] * n, axis=0)), axis=1)
        alpha = ad.softmax(logits, math.sqrt(cfg.key_dim))
    agg = ad.matmul(ad.reshape(alpha, (1, n)), vals)
    h0 = ad.concat([fa, agg], axis=1)
    return ad.reshape(h0, (cfg.embed_dim,)), np.array(alpha.data)


# ---------------------------------------------------------------------------
# batched path


def _comm_edges(comm_sets, offset: int = 0):
    """Flatten neighbor sets (self-loop added) into src/dst index arrays,
    rows grouped contiguously by destination agent."""
    src, dst, starts = [], [], [0]
    for i, nbrs in enumerate(comm_sets):
        members = sorted(set(nbrs) | {i})
        src.extend(offset + j for j in members)
        dst.extend([offset + i] * len(members))
        starts.append(len(src))
    return (
        np.asarray(src, dtype=np.intp),
        np.asarray(dst, dtype=np.intp),
        np.asarray(starts, dtype=np.intp),
    )


@dataclass
class _Batch:
    self_feats: np.ndarray
    ent_feats: np.ndarray
    ent_owner: np.ndarray  # (total_entities,) owning agent row
    ent_starts: np.ndarray  # (G + 1,)
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_starts: np.ndarray  # (G + 1,)


def _merge_packs(packs) -> _Batch:
    self_rows, ent_rows, owners, ent_starts = [], [], [], [0]
    srcs, dsts, estarts = [], [], [0]
    offset = 0
    for pack in packs:
        m = pack.num_agents
        self_rows.append(pack.self_feats)
        ent_rows.append(pack.ent_feats)
        for i in range(m):
            lo, hi = pack.ent_starts[i], pack.ent_starts[i + 1]
            owners.extend([offset + i] * (hi - lo))
            ent_starts.append(ent_starts[-1] + (hi - lo))
        s, d, st = _comm_edges(pack.comm, offset)
        srcs.append(s)
        dsts.append(d)
        estarts.extend(estarts[-1] + st[1:])
        offset += m
    return _Batch(
        self_feats=np.concatenate(self_rows, axis=0),
        ent_feats=np.concatenate(ent_rows, axis=0),
        ent_owner=np.asarray(owners, dtype=np.intp),
        ent_starts=np.asarray(ent_starts, dtype=np.intp),
        edge_src=np.concatenate(srcs),
        edge_dst=np.concatenate(dsts),
        edge_starts=np.asarray(estarts, dtype=np.intp),
    )


def _entity_stage(batch: _Batch, params: EncoderParams):
    cfg = params.config
    fa = ad.mlp_forward(params.f_a, ad.tensor(batch.self_feats))
    g = batch.self_feats.shape[0]
    if batch.ent_feats.shape[0] == 0:
        agg = ad.tensor(np.zeros((g, cfg.half)))
        return ad.concat([fa, agg], axis=1), np.zeros(0)
    fe = ad.mlp_forward(params.f_e, ad.tensor(batch.ent_feats))
    vals = ad.matmul(fe, params.w_v)
    if cfg.mean_pool:
        sizes = np.diff(batch.ent_starts).astype(np.float64)
        alpha = ad.tensor(1.0 / sizes[batch.ent_owner])
    else:
        keys = ad.matmul(fe, params.w_k)
        q = ad.matmul(fa, params.w_q)
        logits = ad.sum_(ad.mul(keys, ad.gather_rows(q, batch.ent_owner)), axis=1)
        alpha = ad.segment_softmax(
            logits, batch.ent_starts[:-1], batch.ent_owner, math.sqrt(cfg.key_dim)
        )
    agg = ad.segment_sum(ad.scale_rows(vals, alpha), batch.ent_owner, g)
    return ad.concat([fa, agg], axis=1), np.array(alpha.data)


def _round(h, edge_src, edge_dst, edge_starts, params: EncoderParams, k: int):
    cfg = params.config
    wq, wk, wv = params.round_weights(k)
    qc = ad.matmul(h, wq)
    kc = ad.matmul(h, wk)
    vc = ad.matmul(h, wv)
    logits = ad.sum_(
        ad.mul(ad.gather_rows(qc, edge_dst), ad.gather_rows(kc, edge_src)), axis=1
    )
    beta = ad.segment_softmax(logits, edge_starts[:-1], edge_dst, math.sqrt(cfg.key_dim))
    m = ad.segment_sum(ad.scale_rows(ad.gather_rows(vc, edge_src), beta), edge_dst, h.data.shape[0])
    return ad.add(h, ad.mlp_forward(params.f_upd, ad.concat([h, m], axis=1))), beta


def message_round(h_all, comm_sets, params: EncoderParams, k: int):
    """One message-passing round over explicit neighbor sets.

    h_all is (M, embed); returns the updated (M, embed) tensor.
    """
    src, dst, starts = _comm_edges(comm_sets)
    h, _ = _round(h_all, src, dst, starts, params, k)
    return h


def encode(pack, params: EncoderParams, want_attention: bool = False):
    """Full pipeline for one observation set; returns (M, embed) h^(K).

    Accepts a FeaturePack or anything with .pack() (an ObservationSet).
    """
    out, info = encode_batch([pack if not hasattr(pack, "pack") else pack.pack()], params)
    return (out, info) if want_attention else out


def encode_batch(packs, params: EncoderParams):
    """Encode a list of packed observation sets in one pass.

    Returns (h (sum_M, embed), info) where info carries attention weights
    for inspection; agent rows follow pack order.
    """
    batch = _merge_packs([p.pack() if hasattr(p, "pack") else p for p in packs])
    h, alpha = _entity_stage(batch, params)
    betas = []
    if not params.config.no_comm:
        for k in range(params.config.rounds):
            h, beta = _round(
                h, batch.edge_src, batch.edge_dst, batch.edge_starts, params, k
            )
            betas.append(np.array(beta.data))
    info = {
        "alpha": alpha,
        "ent_owner": batch.ent_owner,
        "betas": betas,
        "edge_src": batch.edge_src,
        "edge_dst": batch.edge_dst,
    }
    return h, info
