"""Layer-normalized LSTM building blocks and additive attention.

All recurrent math runs one time step at a time with fixed per-step shapes,
so appending pad steps to a sequence can never perturb the floating-point
results at real positions (state is carried through masked steps
unchanged). Parameters live in a flat name->Tensor registry whose names
become checkpoint tensor names.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

LN_EPS = 1e-6


class ParamSet:
    """Ordered name -> parameter registry backing checkpoints and Adam."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(values, dtype=np.float64),
                   requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def as_dict(self) -> dict[str, Tensor]:
        return self._params

    def names(self, *prefixes: str) -> list[str]:
        if not prefixes:
            return list(self._params)
        return [n for n in self._params
                if any(n.startswith(p) for p in prefixes)]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values (checkpoint snapshot)."""
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, a in arrays.items():
            p = self._params[n]
            if p.data.shape != a.shape:
                raise ShapeError(f"shape mismatch loading {n}")
            p.data = np.ascontiguousarray(a, dtype=np.float64).copy()

    def total_size(self) -> int:
        return sum(p.data.size for p in self._params.values())


def uniform_init(rng, shape, r: float) -> np.ndarray:
    return rng.uniform(-r, r, shape)


class LstmLayer:
    """Single-direction LSTM with layer norm on the four gate blocks.

    The forget-gate norm bias starts at 1 to keep early memory open.
    """

    def __init__(self, ps: ParamSet, prefix: str, d_in: int, d_h: int, rng,
                 init_range: float):
        self.d_in = d_in
        self.d_h = d_h
        self.wx = ps.add(f"{prefix}/Wx", uniform_init(rng, (d_in, 4 * d_h), init_range))
        self.wh = ps.add(f"{prefix}/Wh", uniform_init(rng, (d_h, 4 * d_h), init_range))
        self.ln_gain = ps.add(f"{prefix}/ln_gain", np.ones(4 * d_h))
        bias = np.zeros(4 * d_h)
        bias[d_h : 2 * d_h] = 1.0
        self.ln_bias = ps.add(f"{prefix}/ln_bias", bias)

    def step(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        a = ad.add(ad.matmul(x_t, self.wx), ad.matmul(h, self.wh))
        a = ad.layer_norm(a, self.ln_gain, self.ln_bias, LN_EPS, nblocks=4)
        return ad.lstm_cell(a, c)

    def run(self, x_seq: Tensor, mask: np.ndarray | None,
            reverse: bool = False) -> Tensor:
        """x_seq (B,T,d_in) -> (B,T,d_h). Masked steps carry state through."""
        b, t_len, _ = x_seq.data.shape
        h = ad.zeros((b, self.d_h))
        c = ad.zeros((b, self.d_h))
        order = range(t_len - 1, -1, -1) if reverse else range(t_len)
        outs: list[Tensor | None] = [None] * t_len
        for t in order:
            h_new, c_new = self.step(ad.timestep(x_seq, t), h, c)
            if mask is not None and not mask[:, t].all():
                mcol = mask[:, t : t + 1]
                h = ad.lerp_mask(h_new, h, mcol)
                c = ad.lerp_mask(c_new, c, mcol)
            else:
                h, c = h_new, c_new
            outs[t] = h
        return ad.stack_steps(outs)


class AdditiveAttention:
    """score_i = v^T tanh(W1 h_i + W2 s); masked softmax; mixed context."""

    def __init__(self, ps: ParamSet, prefix: str, d_h: int, rng,
                 init_range: float):
        self.d_h = d_h
        self.w1 = ps.add(f"{prefix}/W1", uniform_init(rng, (d_h, d_h), init_range))
        self.w2 = ps.add(f"{prefix}/W2", uniform_init(rng, (d_h, d_h), init_range))
        self.v = ps.add(f"{prefix}/v", uniform_init(rng, (d_h, 1), init_range))

    def prepare(self, context: Tensor) -> Tensor:
        b, t_len, d = context.data.shape
        flat = ad.reshape(context, (b * t_len, d))
        return ad.reshape(ad.matmul(flat, self.w1), (b, t_len, self.d_h))

    def step(self, prepared: Tensor, context: Tensor, mask: np.ndarray,
             state: Tensor) -> tuple[Tensor, Tensor]:
        b, t_len, _ = context.data.shape
        q = ad.matmul(state, self.w2)
        e = ad.tanh(ad.add_rowvec(prepared, q))
        scores = ad.reshape(
            ad.matmul(ad.reshape(e, (b * t_len, self.d_h)), self.v), (b, t_len)
        )
        weights = ad.masked_softmax(scores, mask)
        return ad.attn_mix(weights, context), weights


class Encoder:
    """Shared embedding -> 1 bi-directional layer (projected to d_h) -> a
    residual stack of uni-directional layers; outputs the final layer's
    states, one per input position.

    depth truncates bottom-up: 0 = embeddings only, 1 = + bi layer,
    1+k = + k uni layers.
    """

    def __init__(self, ps: ParamSet, d_emb: int, d_h: int, n_uni: int, rng,
                 init_range: float, prefix: str = "encoder"):
        self.d_emb = d_emb
        self.d_h = d_h
        self.n_uni = n_uni
        self.bi_f = LstmLayer(ps, f"{prefix}/bi_f", d_emb, d_h, rng, init_range)
        self.bi_b = LstmLayer(ps, f"{prefix}/bi_b", d_emb, d_h, rng, init_range)
        self.comb_gain = ps.add(f"{prefix}/comb/ln_gain", np.ones(2 * d_h))
        self.comb_bias = ps.add(f"{prefix}/comb/ln_bias", np.zeros(2 * d_h))
        self.comb_w = ps.add(f"{prefix}/comb/W",
                             uniform_init(rng, (2 * d_h, d_h), init_range))
        self.uni = [
            LstmLayer(ps, f"{prefix}/uni{i + 1}", d_h, d_h, rng, init_range)
            for i in range(n_uni)
        ]
        self.depth = 1 + n_uni

    @property
    def full_depth(self) -> int:
        return 1 + self.n_uni

    def set_depth(self, depth: int) -> None:
        if not 0 <= depth <= self.full_depth:
            raise ShapeError(
                f"encoder depth {depth} outside [0, {self.full_depth}]"
            )
        self.depth = depth

    def out_dim(self) -> int:
        return self.d_emb if self.depth == 0 else self.d_h

    def encode(self, embed: Tensor, ids: np.ndarray, mask: np.ndarray,
               training: bool = False, rng=None,
               dropout_rate: float = 0.0) -> Tensor:
        if ids.shape[1] == 0:
            raise ShapeError("cannot encode an empty sequence")
        x = ad.embedding(embed, ids)
        x = ad.dropout(x, dropout_rate, rng, training)
        if self.depth == 0:
            return x
        fwd = self.bi_f.run(x, mask)
        bwd = self.bi_b.run(x, mask, reverse=True)
        both = ad.concat([fwd, bwd], axis=2)
        b, t_len, _ = both.data.shape
        flat = ad.reshape(both, (b * t_len, 2 * self.d_h))
        flat = ad.layer_norm(flat, self.comb_gain, self.comb_bias, LN_EPS)
        h = ad.reshape(ad.matmul(flat, self.comb_w), (b, t_len, self.d_h))
        for layer in self.uni[: self.depth - 1]:
            out = layer.run(h, mask)
            out = ad.dropout(out, dropout_rate, rng, training)
            h = ad.add(h, out)
        return h


def make_embedding(ps: ParamSet, name: str, vocab_size: int, d_emb: int, rng,
                   init_range: float) -> Tensor:
    return ps.add(name, uniform_init(rng, (vocab_size, d_emb), init_range))
