"""Minimal reverse-mode autodiff on dense float64 arrays.

Everything the policy/value networks need: matmul, elementwise ops,
softmax, small MLPs, diagonal-Gaussian log-densities, and a tape that
replays gradients in reverse insertion order. Single-threaded per tape;
independent tapes may run concurrently.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ContractError, DomainError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)

_TAPES = threading.local()  # per-thread stack, so worker threads don't share tapes


def _active_tapes() -> list:
    try:
        return _TAPES.stack
    except AttributeError:
        _TAPES.stack = []
        return _TAPES.stack


class Tape:
    """Ordered record of primitive ops; topological by construction.

    Use as a context manager around forward code whose gradients are
    needed. Ops run outside any tape compute forward values only.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __enter__(self) -> "Tape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes().pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)


class Tensor:
    """Dense float64 array plus an optional gradient buffer.

    `tape` links the value into the computation record it was produced
    under (None for leaves and for values computed outside any tape).
    """

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, grad=None, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = grad
        self.tape = tape

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # convenience operators; hot paths call the functions directly
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Wrap data as a constant (no gradient buffer)."""
    return Tensor(np.asarray(data, dtype=np.float64))


def parameter(data) -> Tensor:
    """Wrap data as a trainable leaf; grad buffer starts at zero."""
    arr = np.array(data, dtype=np.float64)
    return Tensor(arr, grad=np.zeros_like(arr))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _emit(out_data: np.ndarray, pulls) -> Tensor:
    """Create the op output, recording a tape node when a tape is active.

    `pulls` is a sequence of (input_tensor, fn) pairs where fn maps the
    output gradient to that input's gradient contribution.
    """
    stack = _active_tapes()
    if stack:
        tape = stack[-1]
        out = Tensor(out_data, tape=tape)
        tape._nodes.append((out, pulls))
        return out
    return Tensor(out_data)


def _accumulate(t: Tensor, contrib: np.ndarray):
    if t.grad is None:
        t.grad = np.array(contrib, dtype=np.float64)
    else:
        np.add(t.grad, contrib, out=t.grad)


def backward(loss: Tensor):
    """Populate gradient buffers for everything `loss` depends on.

    Walks the loss's tape once, in reverse insertion order. Parameters
    the loss never touched keep their zeroed buffers.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        raise ContractError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    loss.grad = np.ones((), dtype=np.float64)
    for out, pulls in reversed(loss.tape._nodes):
        g = out.grad
        if g is None:
            continue
        for inp, pull in pulls:
            _accumulate(inp, pull(g))


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b) -> Tensor:
    """a + b for equal shapes, python scalars, scalar tensors, or a 2D
    matrix plus a 1D row vector (bias broadcast)."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        out = a.data + float(b)
        return _emit(out, ((a, lambda g: g),))
    if a.data.shape == b.data.shape:
        return _emit(a.data + b.data, ((a, lambda g: g), (b, lambda g: g)))
    if b.data.shape == ():
        return _emit(a.data + b.data, ((a, lambda g: g), (b, lambda g: g.sum())))
    if a.data.shape == ():
        return _emit(a.data + b.data, ((a, lambda g: g.sum()), (b, lambda g: g)))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return _emit(a.data + b.data, ((a, lambda g: g), (b, lambda g: g.sum(axis=0))))
    raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, ((a, lambda g: -g),))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, neg(b))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; also scalar * tensor."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit(a.data * c, ((a, lambda g: g * c),))
    if a.data.shape == b.data.shape:
        ad, bd = a.data, b.data
        return _emit(ad * bd, ((a, lambda g: g * bd), (b, lambda g: g * ad)))
    if b.data.shape == ():
        ad, bd = a.data, b.data
        return _emit(ad * bd, ((a, lambda g: g * bd), (b, lambda g: float((g * ad).sum()))))
    if a.data.shape == ():
        return mul(b, a)
    raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D matrix product with the standard transpose-rule backward."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {ad.shape} by {bd.shape}")
    return _emit(ad @ bd, ((a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, ((a, lambda g: g * (1.0 - y * y)),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit(y, ((a, lambda g: g * y),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _emit(a.data.reshape(shape), ((a, lambda g: g.reshape(old)),))


def sum_(a: Tensor, axis=None) -> Tensor:
    """Sum to a scalar (axis=None) or along one axis (no keepdims)."""
    if axis is None:
        return _emit(a.data.sum(), ((a, lambda g: np.full_like(a.data, float(g))),))
    shape = a.data.shape

    def pull(g, axis=axis, shape=shape):
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _emit(a.data.sum(axis=axis), ((a, pull),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise DomainError("mean of an empty tensor")
    inv = 1.0 / n
    return _emit(a.data.sum() * inv, ((a, lambda g: np.full_like(a.data, float(g) * inv)),))


def concat(parts: list, axis: int = 0) -> Tensor:
    """Concatenate along axis 0 or 1; backward slices the gradient."""
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    pulls = []
    offset = 0
    for p in parts:
        n = p.data.shape[axis]
        lo, hi = offset, offset + n

        if axis == 0:
            pulls.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
        elif axis == 1:
            pulls.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
        else:
            raise ShapeError(f"concat: unsupported axis {axis}")
        offset = hi
    return _emit(out, tuple(pulls))


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2D tensor; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: need a 2D tensor, got {a.data.shape}")

    def pull(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return gx

    return _emit(a.data[idx], ((a, pull),))


def softmax(a: Tensor, divisor: float = 1.0) -> Tensor:
    """Stable softmax of a/divisor along the last axis.

    Max-subtraction keeps exponents bounded; rows sum to 1.
    """
    if divisor <= 0:
        raise DomainError(f"softmax divisor must be positive, got {divisor}")
    if a.data.size == 0:
        raise DomainError("softmax of an empty tensor")
    z = a.data / divisor
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner)) / divisor

    return _emit(y, ((a, pull),))


def segment_softmax(a: Tensor, seg_starts, seg_ids, divisor: float = 1.0) -> Tensor:
    """Per-segment softmax over a 1D tensor of stacked logits.

    Segments are contiguous row ranges: seg_starts[s] is where segment s
    begins and seg_ids[r] names the segment owning row r. Empty segments
    contribute no rows. Used for attention over ragged neighbor sets.
    """
    if divisor <= 0:
        raise DomainError(f"segment_softmax divisor must be positive, got {divisor}")
    starts = np.asarray(seg_starts, dtype=np.intp)
    ids = np.asarray(seg_ids, dtype=np.intp)
    n = a.data.shape[0]
    if a.data.ndim != 1 or ids.shape[0] != n:
        raise ShapeError(f"segment_softmax: logits {a.data.shape} vs {ids.shape[0]} segment ids")
    if n == 0:
        raise DomainError("segment_softmax of an empty tensor")
    # reduceat over nonempty starts only: empty segments have zero extent,
    # so consecutive nonempty starts still delimit exact segment slices
    m = starts.shape[0]
    ends = np.append(starts[1:], n)
    nonempty = starts < ends
    idx = starts[nonempty]

    def per_segment(vals, reducer):
        full = np.empty(m, dtype=np.float64)
        full[nonempty] = reducer.reduceat(vals, idx)
        return full

    z = a.data / divisor
    z = z - per_segment(z, np.maximum)[ids]
    e = np.exp(z)
    y = e / per_segment(e, np.add)[ids]

    def pull(g):
        inner = per_segment(g * y, np.add)[ids]
        return (y * (g - inner)) / divisor

    return _emit(y, ((a, pull),))


def segment_sum(a: Tensor, seg_ids, num_segments: int) -> Tensor:
    """Sum rows of a 2D tensor into their owning segments.

    Rows with the same id add into the same output row; segments with no
    rows stay zero. Backward gathers the output gradient back per row.
    """
    ids = np.asarray(seg_ids, dtype=np.intp)
    if a.data.ndim != 2 or ids.shape[0] != a.data.shape[0]:
        raise ShapeError(f"segment_sum: rows {a.data.shape} vs {ids.shape[0]} segment ids")
    out = np.zeros((num_segments, a.data.shape[1]), dtype=np.float64)
    np.add.at(out, ids, a.data)
    return _emit(out, ((a, lambda g: g[ids]),))


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply each row of a 2D tensor by a per-row scalar weight."""
    if a.data.ndim != 2 or w.data.shape != (a.data.shape[0],):
        raise ShapeError(f"scale_rows: matrix {a.data.shape} vs weights {w.data.shape}")
    ad, wd = a.data, w.data
    return _emit(
        ad * wd[:, None],
        ((a, lambda g: g * wd[:, None]), (w, lambda g: (g * ad).sum(axis=1))),
    )


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes through inside the band."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _emit(np.clip(a.data, lo, hi), ((a, lambda g: g * mask),))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to `a`."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: incompatible shapes {a.data.shape} and {b.data.shape}")
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    return _emit(out, ((a, lambda g: g * take_a), (b, lambda g: g * ~take_a)))


def gaussian_logprob(mean_t: Tensor, log_std: Tensor, action) -> Tensor:
    """Diagonal-Gaussian log density, summed over the last axis.

    Accepts (d,) -> scalar or (B, d) -> (B,). `action` is data, not a
    differentiation target; gradients flow to mean and log_std.
    """
    act = action.data if isinstance(action, Tensor) else np.asarray(action, dtype=np.float64)
    mu, s = mean_t.data, log_std.data
    if mu.shape != act.shape:
        raise ShapeError(f"gaussian_logprob: mean {mu.shape} vs action {act.shape}")
    if s.shape != mu.shape[-1:]:
        raise ShapeError(f"gaussian_logprob: log_std {s.shape} vs dim {mu.shape[-1:]}")
    inv_std = np.exp(-s)
    z = (act - mu) * inv_std
    out = -0.5 * (z * z).sum(axis=-1) - s.sum() - 0.5 * mu.shape[-1] * LOG_2PI

    if mu.ndim == 1:
        pull_mean = lambda g: float(g) * z * inv_std
        pull_std = lambda g: float(g) * (z * z - 1.0)
    else:
        pull_mean = lambda g: g[:, None] * z * inv_std
        pull_std = lambda g: (g[:, None] * (z * z - 1.0)).sum(axis=0)
    return _emit(out, ((mean_t, pull_mean), (log_std, pull_std)))


def gaussian_entropy(log_std: Tensor) -> Tensor:
    """Entropy of the diagonal Gaussian with the given log stddev."""
    d = log_std.data.shape[0]
    return add(sum_(log_std), 0.5 * d * (1.0 + LOG_2PI))


# ---------------------------------------------------------------------------
# small MLPs


@dataclass
class Mlp:
    """Affine layers with tanh on all but the last."""

    weights: list
    biases: list

    def named(self, prefix: str) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


def mlp_init(rng: np.random.Generator, sizes: list, out_scale: float = 1.0) -> Mlp:
    """Xavier-uniform layers for the size chain; `out_scale` shrinks the
    final layer (useful for near-zero initial policy heads)."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        a = math.sqrt(6.0 / (n_in + n_out))
        if i == len(sizes) - 2:
            a *= out_scale
        weights.append(parameter(rng.uniform(-a, a, size=(n_in, n_out))))
        biases.append(parameter(np.zeros(n_out)))
    return Mlp(weights, biases)


def mlp_forward(mlp: Mlp, x: Tensor) -> Tensor:
    """Run a (B, n_in) batch through the net."""
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = add(matmul(x, w), b)
        if i != last:
            x = tanh(x)
    return x


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "skyrelay-checkpoint-v1"


def save_checkpoint(path, arrays: dict, meta: dict):
    """Write named float64 arrays plus a JSON metadata block.

    The container is npz; float64 payloads round-trip bit-exactly.
    """
    meta = dict(meta)
    meta["format"] = CHECKPOINT_FORMAT
    payload = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple:
    """Return (arrays, meta); raises CheckpointError on bad files."""
    try:
        with np.load(path, allow_pickle=False) as z:
            if "__meta__" not in z:
                raise CheckpointError(f"{path}: not a skyrelay checkpoint (no metadata)")
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: np.array(z[k]) for k in z.files if k != "__meta__"}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return arrays, meta
