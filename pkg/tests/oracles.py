"""Independent reference computations used to check the package.

Everything here is written from the definitions with plain numpy and
python loops, deliberately not importing package internals, so tests
compare two separately derived routes to the same quantity.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def rel_err(a, b, floor=1e-6):
    """Max elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def fd_grad(f, arrays, step=1e-5):
    """Central finite-difference gradients of scalar f w.r.t. each array.

    f takes the list of arrays and returns a float; arrays are perturbed
    one element at a time.
    """
    grads = []
    for k, x in enumerate(arrays):
        g = np.zeros_like(x, dtype=np.float64)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(arrays)
            flat[i] = orig - step
            lo = f(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# attention reference


def mlp_ref(weights, biases, x):
    """Tanh-hidden MLP on a 1D input, plain numpy."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i != len(weights) - 1:
            h = np.tanh(h)
    return h


def softmax_ref(x, divisor=1.0):
    z = np.asarray(x, dtype=np.float64) / divisor
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def entity_attention_ref(p, self_feat, entity_feats):
    """Agent-entity attention for one agent: returns (h0, alpha).

    p is a dict of plain arrays: fa_w/fa_b, fe_w/fe_b (lists), wq, wk, wv,
    and d_k. Empty entity list gives a zero summary.
    """
    fa = mlp_ref(p["fa_w"], p["fa_b"], self_feat)
    if len(entity_feats) == 0:
        agg = np.zeros(p["wv"].shape[1])
        return np.concatenate([fa, agg]), np.zeros(0)
    q = fa @ p["wq"]
    ks, vs = [], []
    for x in entity_feats:
        fe = mlp_ref(p["fe_w"], p["fe_b"], x)
        ks.append(fe @ p["wk"])
        vs.append(fe @ p["wv"])
    logits = np.array([q @ k for k in ks])
    alpha = softmax_ref(logits, math.sqrt(p["d_k"]))
    agg = sum(a * v for a, v in zip(alpha, vs))
    return np.concatenate([fa, agg]), alpha


def message_rounds_ref(p, h0_all, neighbor_sets, rounds):
    """K rounds of neighbor self-attention with a self-loop, plain loops.

    neighbor_sets[i] excludes i; p holds wcq, wck, wcv, fu_w/fu_b, d_k.
    The update is residual: h + mlp([h; m]).
    """
    h = [np.array(v) for v in h0_all]
    for _ in range(rounds):
        nxt = []
        for i in range(len(h)):
            members = sorted(set(neighbor_sets[i]) | {i})
            q = h[i] @ p["wcq"]
            logits = np.array([q @ (h[j] @ p["wck"]) for j in members])
            beta = softmax_ref(logits, math.sqrt(p["d_k"]))
            m = sum(b * (h[j] @ p["wcv"]) for b, j in zip(beta, members))
            nxt.append(h[i] + mlp_ref(p["fu_w"], p["fu_b"], np.concatenate([h[i], m])))
        h = nxt
    return h


# ---------------------------------------------------------------------------
# advantage reference


def gae_ref(rewards, values, dones, gamma, lam):
    """GAE by brute-force discounted sums of future deltas.

    values has one bootstrap entry beyond the last reward; dones mark
    episode ends, cutting the sum.
    """
    T = len(rewards)
    deltas = [
        rewards[t] + gamma * values[t + 1] * (1.0 - dones[t]) - values[t] for t in range(T)
    ]
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        scale = 1.0
        for k in range(t, T):
            acc += scale * deltas[k]
            if dones[k]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv, adv + np.asarray(values[:-1])


# ---------------------------------------------------------------------------
# coverage placement reference


def placement_objective_ref(instance, placements):
    """Eq-style objective: covered weight minus relocation penalty."""
    total = 0.0
    for j, u in enumerate(instance.node_positions):
        d = min(np.linalg.norm(u - p) for p in placements)
        if d <= instance.r_cov:
            total += instance.node_weights[j]
    for i, p in enumerate(placements):
        total -= instance.relocation_weight * np.linalg.norm(p - instance.uav_origins[i])
    return total


def enumerate_best_ref(instance, m):
    """Exhaustive search over grid^m placements; lexicographically first
    argmax to mirror the solver's lowest-index tie-break."""
    grid = instance.candidate_grid
    best_val, best_idx = -np.inf, None
    for combo in itertools.product(range(len(grid)), repeat=m):
        val = placement_objective_ref(instance, [grid[g] for g in combo])
        if val > best_val + 1e-12:
            best_val, best_idx = val, combo
    return best_val, best_idx


# ---------------------------------------------------------------------------
# metric references


def coverage_ratio_ref(masks):
    """Mean over steps of covered fraction; masks is a list of bool lists."""
    vals = [sum(m) / len(m) for m in masks]
    return sum(vals) / len(vals)


def overlap_rate_ref(node_pos_per_step, uav_pos_per_step, r_cov):
    """Fraction of covered nodes seen by 2+ UAVs, averaged over steps
    that cover at least one node."""
    per_step = []
    for nodes, uavs in zip(node_pos_per_step, uav_pos_per_step):
        covered = 0
        multi = 0
        for u in nodes:
            hits = sum(1 for q in uavs if np.linalg.norm(np.asarray(u) - np.asarray(q)) <= r_cov)
            if hits >= 1:
                covered += 1
                if hits >= 2:
                    multi += 1
        if covered:
            per_step.append(multi / covered)
    return sum(per_step) / len(per_step) if per_step else 0.0


def team_reward_ref(node_pos, uav_pos, r_cov, lam_cov, lam_dist):
    n = len(node_pos)
    cov = 0.0
    dist = 0.0
    for u in node_pos:
        d = min(np.linalg.norm(np.asarray(u) - np.asarray(q)) for q in uav_pos)
        cov += 1.0 if d <= r_cov else 0.0
        dist += d / r_cov
    return lam_cov * cov / n - lam_dist * dist / n
