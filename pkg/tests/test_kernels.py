"""Compiled kernels agree with the NumPy reference implementations."""

import numpy as np
import pytest

from xlingo import kernels
from xlingo.kernels import _ref
from xlingo.rng import Rng

compiled = pytest.mark.skipif(
    kernels.compiled is None, reason="compiled kernels not built"
)


def arrays(seed, *shapes):
    rng = Rng(seed)
    return [rng.uniform(-2, 2, s) for s in shapes]


@compiled
@pytest.mark.parametrize("seed", range(5))
def test_lstm_cell_parity(seed):
    pre, c = arrays(seed, (6, 32), (6, 8))
    fast = kernels.compiled.lstm_cell_fwd(pre, c)
    ref = _ref.lstm_cell_fwd(pre, c)
    for a, b in zip(fast, ref):
        assert np.allclose(a, b, atol=1e-13)
    dh, dc = arrays(seed + 100, (6, 8), (6, 8))
    fast_b = kernels.compiled.lstm_cell_bwd(dh, dc, fast[2], fast[3], c)
    ref_b = _ref.lstm_cell_bwd(dh, dc, ref[2], ref[3], c)
    for a, b in zip(fast_b, ref_b):
        assert np.allclose(a, b, atol=1e-13)
    # None-gradient variants
    for args in ((dh, None), (None, dc)):
        fa = kernels.compiled.lstm_cell_bwd(*args, fast[2], fast[3], c)
        rb = _ref.lstm_cell_bwd(*args, ref[2], ref[3], c)
        for a, b in zip(fa, rb):
            assert np.allclose(a, b, atol=1e-13)


@compiled
@pytest.mark.parametrize("nblocks", [1, 4])
def test_layer_norm_parity(nblocks):
    x, = arrays(3, (5, 32))
    gain = np.linspace(0.5, 1.5, 32)
    bias = np.linspace(-1, 1, 32)
    fast = kernels.compiled.layer_norm_fwd(x, gain, bias, 1e-6, nblocks)
    ref = _ref.layer_norm_fwd(x, gain, bias, 1e-6, nblocks)
    for a, b in zip(fast, ref):
        assert np.allclose(a, b, atol=1e-12)
    dy, = arrays(5, (5, 32))
    fast_b = kernels.compiled.layer_norm_bwd(dy, fast[1], fast[2], gain, nblocks)
    ref_b = _ref.layer_norm_bwd(dy, ref[1], ref[2], gain, nblocks)
    for a, b in zip(fast_b, ref_b):
        assert np.allclose(a, b, atol=1e-12)


@compiled
def test_adam_parity():
    p1, g, m1, v1 = arrays(9, (64,), (64,), (64,), (64,))
    v1 = np.abs(v1)
    p2, m2, v2 = p1.copy(), m1.copy(), v1.copy()
    args = (2e-3, 0.9, 0.999, 1e-8, 1.5, 1.2, 0.01)
    kernels.compiled.adam_update(p1, g, m1, v1, *args)
    _ref.adam_update(p2, g, m2, v2, *args)
    assert np.allclose(p1, p2, atol=1e-15)
    assert np.allclose(m1, m2, atol=1e-15)
    assert np.allclose(v1, v2, atol=1e-15)


@compiled
def test_xoshiro_parity():
    st1 = np.array([1, 2, 3, 4], dtype=np.uint64)
    st2 = st1.copy()
    a = np.empty(257)
    b = np.empty(257)
    kernels.compiled.xoshiro_fill(st1, a)
    _ref.xoshiro_fill(st2, b)
    assert np.array_equal(a, b)
    assert np.array_equal(st1, st2)


def test_backend_reports_name():
    assert kernels.BACKEND in ("fast", "ref")
    assert callable(kernels.lstm_cell_fwd)
