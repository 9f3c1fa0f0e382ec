"""NumPy reference implementations of the hot kernels.

Every function here has a twin in the compiled module ``_fast``; both
compute the same math and are interchangeable. This module is also the
ground truth for the parity tests and the kernel benchmark.
"""

import numpy as np

__all__ = [
    "lstm_cell_fwd",
    "lstm_cell_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "adam_update",
    "xoshiro_fill",
]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell_fwd(preact, c_prev):
    """Elementwise LSTM cell. preact (B,4H) holds i,f,g,o pre-activations.

    Returns (h, c, gates, tanh_c); gates are the post-activation values
    needed by the backward pass.
    """
    h = preact.shape[1] // 4
    gates = np.empty_like(preact)
    gates[:, : 2 * h] = _sigmoid(preact[:, : 2 * h])  # i, f
    gates[:, 2 * h : 3 * h] = np.tanh(preact[:, 2 * h : 3 * h])  # g
    gates[:, 3 * h :] = _sigmoid(preact[:, 3 * h :])  # o
    i = gates[:, :h]
    f = gates[:, h : 2 * h]
    g = gates[:, 2 * h : 3 * h]
    o = gates[:, 3 * h :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    out = o * tanh_c
    return out, c, gates, tanh_c


def lstm_cell_bwd(dh, dc, gates, tanh_c, c_prev):
    """Backward of lstm_cell_fwd. dh or dc may be None (treated as zero)."""
    b, d4 = gates.shape
    h = d4 // 4
    i = gates[:, :h]
    f = gates[:, h : 2 * h]
    g = gates[:, 2 * h : 3 * h]
    o = gates[:, 3 * h :]
    dct = np.zeros((b, h)) if dc is None else dc.copy()
    if dh is not None:
        do = dh * tanh_c
        dct += dh * o * (1.0 - tanh_c * tanh_c)
    else:
        do = np.zeros((b, h))
    dpreact = np.empty_like(gates)
    dpreact[:, :h] = dct * g * i * (1.0 - i)
    dpreact[:, h : 2 * h] = dct * c_prev * f * (1.0 - f)
    dpreact[:, 2 * h : 3 * h] = dct * i * (1.0 - g * g)
    dpreact[:, 3 * h :] = do * o * (1.0 - o)
    dc_prev = dct * f
    return dpreact, dc_prev


def layer_norm_fwd(x, gain, bias, eps, nblocks):
    """Normalize each of `nblocks` equal column blocks of x (N,D) per row.

    Population variance. Returns (y, xhat, inv_std) with inv_std (N, nblocks).
    """
    n, d = x.shape
    h = d // nblocks
    xb = x.reshape(n, nblocks, h)
    mean = xb.mean(axis=2, keepdims=True)
    var = xb.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xb - mean) * inv_std).reshape(n, d)
    y = xhat * gain + bias
    return y, xhat, np.ascontiguousarray(inv_std.reshape(n, nblocks))


def layer_norm_bwd(dy, xhat, inv_std, gain, nblocks):
    n, d = dy.shape
    h = d // nblocks
    dxhat = (dy * gain).reshape(n, nblocks, h)
    xb = xhat.reshape(n, nblocks, h)
    m1 = dxhat.mean(axis=2, keepdims=True)
    m2 = (dxhat * xb).mean(axis=2, keepdims=True)
    dx = ((dxhat - m1 - xb * m2) * inv_std.reshape(n, nblocks, 1)).reshape(n, d)
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, lam):
    """Fused bias-corrected Adam step on flat views; mutates p, m, v.

    bc1/bc2 are the precomputed 1/(1-beta^t) correction factors; lam adds
    an L2 term to the gradient without touching the caller's g.
    """
    if lam != 0.0:
        g = g + lam * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m * bc1) / (np.sqrt(v * bc2) + eps)


_U64 = np.uint64
_MASK = _U64(0xFFFFFFFFFFFFFFFF)


def _rotl(x, k):
    return ((x << _U64(k)) | (x >> _U64(64 - k))) & _MASK


def xoshiro_fill(state, out):
    """Fill out (float64, flat) with uniforms in [0,1) from xoshiro256**.

    state is a uint64[4] array, mutated in place. The stream is identical
    to the compiled kernel's, element for element.
    """
    s0, s1, s2, s3 = (state[i] for i in range(4))
    five = _U64(5)
    nine = _U64(9)
    seventeen = _U64(17)
    scale = 2.0 ** -53
    with np.errstate(over="ignore"):
        for idx in range(out.shape[0]):
            result = (_rotl((s1 * five) & _MASK, 7) * nine) & _MASK
            t = (s1 << seventeen) & _MASK
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
            out[idx] = float(result >> _U64(11)) * scale
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
