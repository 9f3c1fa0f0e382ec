"""Reverse-mode automatic differentiation over float64 NumPy arrays.

Define-by-run: every operation executes eagerly and, while gradients are
enabled, records its inputs and a backward closure on the output tensor.
The implicit DAG of these records is the computation graph; ``backward``
walks it in exact reverse topological order and accumulates gradients,
summing over fan-out.

Primitives are deliberately restricted: elementwise ops require equal
shapes (scalars are folded in as constants), plus matmul, concat, slice,
reshape and reductions. Sequence-model hot spots (layer norm, the LSTM
cell, attention mixing, pooling, the smoothed cross entropy) are fused
single-record ops; layer norm and the LSTM cell dispatch to the kernel
backend.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericsError, ShapeError

_grad_enabled = True
CHECK_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars become constants, tensors must match shapes
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _accum(t: Tensor, contrib: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += contrib


def _grad_buffer(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NumericsError("non-finite result in forward op")
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order: every tensor appears after all of its parents."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dx into .grad of every reachable requires_grad tensor."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._backward_fn is None and not loss.requires_grad:
        raise ShapeError("loss is not connected to any differentiable input")
    if not np.isfinite(loss.data).all():
        raise NumericsError("non-finite loss")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise / linear primitives
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _make(a.data + b.data, (a, b), bwd)


def shift(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        _accum(a, g)

    return _make(a.data + c, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dims differ {a.data.shape} @ {b.data.shape}"
        )

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B,N,K) @ (B,K,M) -> (B,N,M)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError("bmm expects 3-D operands")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.transpose(0, 2, 1))
        if b.requires_grad:
            _accum(b, a.data.transpose(0, 2, 1) @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the last two axes of a 3-D tensor."""
    if a.data.ndim != 3:
        raise ShapeError("transpose_last2 expects a 3-D tensor")

    def bwd(g):
        _accum(a, g.transpose(0, 2, 1))

    return _make(np.ascontiguousarray(a.data.transpose(0, 2, 1)), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def bwd(g):
        _accum(a, g * keep)

    return _make(a.data * keep, (a,), bwd)


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign)

    return _make(np.abs(a.data), (a,), bwd)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def slice_axis(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        _grad_buffer(a)[idx] += g

    return _make(a.data[idx].copy(), (a,), bwd)


def timestep(a: Tensor, t: int) -> Tensor:
    """a (B,T,D) -> (B,D) at step t; cheaper than slice+reshape."""

    def bwd(g):
        _grad_buffer(a)[:, t, :] += g

    return _make(a.data[:, t, :].copy(), (a,), bwd)


def stack_steps(parts: list[Tensor]) -> Tensor:
    """Stack T tensors of shape (B,H) into (B,T,H)."""

    def bwd(g):
        for t, p in enumerate(parts):
            if p.requires_grad:
                _accum(p, g[:, t, :])

    return _make(np.stack([p.data for p in parts], axis=1), tuple(parts), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _grad_buffer(a)
        a.grad += g.reshape(())

    return _make(np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        _grad_buffer(a)
        a.grad += g.reshape(()) / n

    return _make(np.asarray(a.data.mean()), (a,), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Scalar product of two same-shape tensors."""
    _check_same_shape(a, b, "dot")

    def bwd(g):
        s = g.reshape(())
        if a.requires_grad:
            _accum(a, s * b.data)
        if b.requires_grad:
            _accum(b, s * a.data)

    return _make(np.asarray(np.vdot(a.data, b.data)), (a, b), bwd)


# ---------------------------------------------------------------------------
# fused sequence-model ops
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6,
               nblocks: int = 1) -> Tensor:
    """Per-row layer norm over the last axis of a 2-D input, in `nblocks`
    independent column blocks (population variance)."""
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D input")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm: gain/bias length mismatch")
    if d % nblocks != 0:
        raise ShapeError("layer_norm: width not divisible into blocks")
    y, xhat, inv_std = kernels.layer_norm_fwd(
        np.ascontiguousarray(x.data), gain.data, bias.data, eps, nblocks
    )

    def bwd(g):
        dx, dgain, dbias = kernels.layer_norm_bwd(
            np.ascontiguousarray(g), xhat, inv_std, gain.data, nblocks
        )
        if x.requires_grad:
            _accum(x, dx)
        if gain.requires_grad:
            _accum(gain, dgain)
        if bias.requires_grad:
            _accum(bias, dbias)

    return _make(y, (x, gain, bias), bwd)


def lstm_cell(preact: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Elementwise LSTM cell on gate pre-activations (B,4H) and state (B,H).

    Returns (h, c). Each output back-propagates its own contribution; the
    shared cache lives in the closure.
    """
    if preact.data.shape[1] != 4 * c_prev.data.shape[1]:
        raise ShapeError("lstm_cell: preact width must be 4x state width")
    h_val, c_val, gates, tanh_c = kernels.lstm_cell_fwd(
        np.ascontiguousarray(preact.data), np.ascontiguousarray(c_prev.data)
    )
    c_prev_data = np.ascontiguousarray(c_prev.data)

    def bwd_h(g):
        dpre, dcp = kernels.lstm_cell_bwd(
            np.ascontiguousarray(g), None, gates, tanh_c, c_prev_data
        )
        if preact.requires_grad:
            _accum(preact, dpre)
        if c_prev.requires_grad:
            _accum(c_prev, dcp)

    def bwd_c(g):
        dpre, dcp = kernels.lstm_cell_bwd(
            None, np.ascontiguousarray(g), gates, tanh_c, c_prev_data
        )
        if preact.requires_grad:
            _accum(preact, dpre)
        if c_prev.requires_grad:
            _accum(c_prev, dcp)

    h_out = _make(h_val, (preact, c_prev), bwd_h)
    c_out = _make(c_val, (preact, c_prev), bwd_c)
    return h_out, c_out


def lerp_mask(new: Tensor, old: Tensor, mask_col: np.ndarray) -> Tensor:
    """mask*new + (1-mask)*old with a constant (B,1) mask; carries RNN state
    through padded steps so padding never perturbs real positions."""
    _check_same_shape(new, old, "lerp_mask")
    m = mask_col

    def bwd(g):
        if new.requires_grad:
            _accum(new, g * m)
        if old.requires_grad:
            _accum(old, g * (1.0 - m))

    return _make(m * new.data + (1.0 - m) * old.data, (new, old), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError("embedding: id out of range")

    def bwd(g):
        buf = _grad_buffer(table)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))

    return _make(table.data[ids], (table,), bwd)


def add_rowvec(x: Tensor, s: Tensor) -> Tensor:
    """x (B,T,H) + s (B,H) broadcast over T."""
    if x.data.shape[0] != s.data.shape[0] or x.data.shape[2] != s.data.shape[1]:
        raise ShapeError("add_rowvec: incompatible shapes")

    def bwd(g):
        if x.requires_grad:
            _accum(x, g)
        if s.requires_grad:
            _accum(s, g.sum(axis=1))

    return _make(x.data + s.data[:, None, :], (x, s), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (N,D) + b (D,) broadcast over rows."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError("add_bias: incompatible shapes")

    def bwd(g):
        if x.requires_grad:
            _accum(x, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _make(x.data + b.data, (x, b), bwd)


def attn_mix(weights: Tensor, context: Tensor) -> Tensor:
    """Weighted sum over time: (B,T) x (B,T,H) -> (B,H)."""
    if weights.data.shape != context.data.shape[:2]:
        raise ShapeError("attn_mix: weights/context mismatch")

    def bwd(g):
        if weights.requires_grad:
            _accum(weights, np.einsum("bh,bth->bt", g, context.data))
        if context.requires_grad:
            _accum(context, weights.data[:, :, None] * g[:, None, :])

    return _make(np.einsum("bt,bth->bh", weights.data, context.data),
                 (weights, context), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accum(x, out * (g - inner))

    return _make(out, (x,), bwd)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over unmasked entries; masked entries get exactly 0."""
    if mask.shape != scores.data.shape:
        raise ShapeError("masked_softmax: mask shape mismatch")
    if not (mask > 0).any(axis=-1).all():
        raise ShapeError("masked_softmax: some row is fully masked")
    neg = np.where(mask > 0, scores.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - m)
    e[mask == 0] = 0.0
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accum(scores, out * (g - inner))

    return _make(out, (scores,), bwd)


def masked_softmax_cols(scores: Tensor, col_mask: np.ndarray) -> Tensor:
    """Softmax over the last axis of (B,N,M) where col_mask (B,M) marks the
    valid columns for every row; masked columns get exactly 0."""
    if scores.data.ndim != 3 or col_mask.shape != (
        scores.data.shape[0],
        scores.data.shape[2],
    ):
        raise ShapeError("masked_softmax_cols: mask shape mismatch")
    if not (col_mask > 0).any(axis=-1).all():
        raise ShapeError("masked_softmax_cols: some batch is fully masked")
    m3 = col_mask[:, None, :]
    neg = np.where(m3 > 0, scores.data, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - mx)
    e *= m3 > 0
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accum(scores, out * (g - inner))

    return _make(out, (scores,), bwd)


def masked_pool(x: Tensor, mask: np.ndarray, kind: str) -> Tensor:
    """Pool (B,T,H) over unmasked time steps; kind is 'mean' or 'max'.

    Accumulation runs step by step in time order: trailing pad steps add
    exact zeros (mean) or -inf candidates (max), so a padded sequence pools
    to bit-identical values.
    """
    if mask.shape != x.data.shape[:2]:
        raise ShapeError("masked_pool: mask shape mismatch")
    b, t_len, h = x.data.shape
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("masked_pool: fully masked input")
    if kind == "mean":
        acc = np.zeros((b, h))
        for t in range(t_len):
            acc += x.data[:, t, :] * mask[:, t : t + 1]
        out = acc / counts[:, None]

        def bwd(g):
            _accum(x, mask[:, :, None] * (g[:, None, :] / counts[:, None, None]))

        return _make(out, (x,), bwd)
    if kind == "max":
        acc = np.full((b, h), -np.inf)
        idx = np.zeros((b, h), dtype=np.int64)
        for t in range(t_len):
            cand = np.where(mask[:, t : t + 1] > 0, x.data[:, t, :], -np.inf)
            newer = cand > acc
            idx[newer] = t
            acc = np.where(newer, cand, acc)
        out = acc

        def bwd(g):
            buf = _grad_buffer(x)
            b_idx = np.arange(b)[:, None]
            h_idx = np.arange(h)[None, :]
            np.add.at(buf, (b_idx, idx, h_idx), g)

        return _make(out, (x,), bwd)
    raise ValueError(f"unknown pooling kind: {kind}")


def dropout(x: Tensor, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1): {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        _accum(x, g * keep)

    return _make(x.data * keep, (x,), bwd)


def smoothed_cross_entropy(logits: Tensor, targets: np.ndarray, eps: float = 0.0,
                           weights: np.ndarray | None = None) -> Tensor:
    """Label-smoothed cross entropy, averaged with per-row weights.

    Target distribution is (1-eps) on the true class plus eps/K everywhere.
    logits (N,K), targets (N,) ints; weights default to all-ones.
    """
    n, k = logits.data.shape
    if k < 2:
        raise ShapeError("need at least 2 classes")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing eps must be in [0,1): {eps}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ShapeError("true_class out of range")
    if weights is None:
        weights = np.ones(n)
    wsum = weights.sum()
    if wsum <= 0:
        raise ShapeError("cross entropy: zero total weight")
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    z = e.sum(axis=1, keepdims=True)
    logp = logits.data - m - np.log(z)
    rows = np.arange(n)
    per_row = -((1.0 - eps) * logp[rows, targets] + (eps / k) * logp.sum(axis=1))
    loss = float((per_row * weights).sum() / wsum)

    def bwd(g):
        target_dist = np.full((n, k), eps / k)
        target_dist[rows, targets] += 1.0 - eps
        p = e / z
        _accum(logits, g.reshape(()) * (p - target_dist) * (weights / wsum)[:, None])

    return _make(np.asarray(loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: dict[int, float]

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_err:.3e}"


def grad_check(fn, inputs: list[Tensor], tol: float = 1e-4,
               h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of fn(*inputs) against central differences.

    fn must return a scalar Tensor and be deterministic. Relative error is
    |a-n| / max(|a|, |n|, 1e-8); failures are reported, never raised.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    per_input: dict[int, float] = {}
    worst = 0.0
    with no_grad():
        for i, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            num = np.zeros_like(flat)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = fn(*inputs).item()
                flat[j] = orig - h
                f_minus = fn(*inputs).item()
                flat[j] = orig
                num[j] = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
            err = float((np.abs(a - num) / denom).max()) if flat.size else 0.0
            per_input[i] = err
            worst = max(worst, err)
    return GradCheckReport(max_rel_err=worst, passed=worst < tol, per_input=per_input)
