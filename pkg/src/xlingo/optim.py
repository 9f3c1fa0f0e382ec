"""Adam with bias correction, decoupled L2, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Tensor
from .errors import NumericsError, ShapeError


@dataclass
class RegularizerConfig:
    """Regularization knobs shared by all training loops.

    l2 adds lam*param to the gradient (losses stay comparable across lam);
    dropout applies only in training mode; label smoothing mixes eps/K
    uniform mass into the target distribution.
    """

    l2: float = 0.0
    dropout_rate: float = 0.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0,1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0,1)")


@dataclass
class AdamState:
    """First/second moments per parameter name plus a shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_global_norm(params: dict[str, Tensor], max_norm: float,
                     names=None) -> float:
    """Scale gradients in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm. Parameters without gradients are skipped.
    """
    names = list(params) if names is None else list(names)
    sq = 0.0
    for n in names:
        g = params[n].grad
        if g is not None:
            sq += float(np.vdot(g, g))
    norm = float(np.sqrt(sq))
    if not np.isfinite(norm):
        raise NumericsError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for n in names:
            if params[n].grad is not None:
                params[n].grad *= factor
    return norm


def adam_step(params: dict[str, Tensor], state: AdamState,
              reg: RegularizerConfig | None = None, names=None) -> None:
    """One bias-corrected Adam update on the named parameter subset.

    The effective gradient is grad + l2*param. Parameters whose grad is
    None (untouched by the last backward pass) are left alone, so stepping
    one translation direction never moves the other direction's decoder.
    """
    lam = 0.0 if reg is None else reg.l2
    names = list(params) if names is None else list(names)
    if state.t >= 2**62:
        raise OverflowError("adam step counter overflow")
    state.t += 1
    bc1 = 1.0 / (1.0 - state.beta1**state.t)
    bc2 = 1.0 / (1.0 - state.beta2**state.t)
    for n in names:
        p = params[n]
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"grad/param shape mismatch for {n}")
        if n not in state.m:
            state.m[n] = np.zeros_like(p.data)
            state.v[n] = np.zeros_like(p.data)
        kernels.adam_update(
            p.data.reshape(-1), p.grad.reshape(-1),
            state.m[n].reshape(-1), state.v[n].reshape(-1),
            state.lr, state.beta1, state.beta2, state.eps, bc1, bc2, lam,
        )


def clear_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
