"""Adam update semantics, L2 coupling, and gradient clipping."""

import numpy as np
import pytest

from xlingo.autodiff import Tensor
from xlingo.optim import AdamState, RegularizerConfig, adam_step, clear_grads, clip_global_norm


def make_params(**arrays):
    return {k: Tensor(np.asarray(v, dtype=float), requires_grad=True)
            for k, v in arrays.items()}


def test_zero_grad_zero_l2_is_identity_for_all_t():
    params = make_params(w=[1.0, -2.0, 3.0])
    state = AdamState(lr=0.01)
    for _ in range(10):
        params["w"].grad = np.zeros(3)
        adam_step(params, state, RegularizerConfig())
    assert np.array_equal(params["w"].data, [1.0, -2.0, 3.0])
    assert state.t == 10


def test_first_step_closed_form():
    # first bias-corrected update: delta = -lr * g / (|g| + eps)
    g = 0.5
    lr = 1e-3
    params = make_params(w=[1.0])
    params["w"].grad = np.array([g])
    state = AdamState(lr=lr)
    adam_step(params, state, RegularizerConfig())
    expected = 1.0 - lr * g / (abs(g) + state.eps)
    assert np.isclose(params["w"].data[0], expected, rtol=1e-12)
    # for |g| >> eps this is -lr * sign(g)
    assert abs((params["w"].data[0] - 1.0) + lr) < 1e-9


def test_l2_pulls_toward_origin():
    params = make_params(w=[2.0, -3.0])
    state = AdamState(lr=0.05)
    reg = RegularizerConfig(l2=0.1)
    before = np.abs(params["w"].data.copy())
    for _ in range(5):
        params["w"].grad = np.zeros(2)
        adam_step(params, state, reg)
    after = np.abs(params["w"].data)
    assert (after < before).all()


def test_untouched_parameters_stay_put():
    params = make_params(a=[1.0], b=[5.0])
    params["a"].grad = np.array([0.3])
    state = AdamState(lr=0.1)
    adam_step(params, state, RegularizerConfig(), names=["a"])
    assert params["b"].data[0] == 5.0
    assert "b" not in state.m
    # grad present but name excluded: also untouched
    params["b"].grad = np.array([1.0])
    adam_step(params, state, RegularizerConfig(), names=["a"])
    assert params["b"].data[0] == 5.0


def test_grad_none_skipped():
    params = make_params(a=[1.0])
    state = AdamState()
    adam_step(params, state, RegularizerConfig())
    assert params["a"].data[0] == 1.0


def test_clip_global_norm():
    params = make_params(a=[3.0, 0.0], b=[[4.0]])
    params["a"].grad = np.array([3.0, 0.0])
    params["b"].grad = np.array([[4.0]])
    norm = clip_global_norm(params, 1.0)
    assert np.isclose(norm, 5.0)
    total = np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params.values()))
    assert np.isclose(total, 1.0)
    # under the threshold: untouched
    params["a"].grad = np.array([0.3, 0.0])
    params["b"].grad = np.array([[0.4]])
    norm = clip_global_norm(params, 1.0)
    assert np.isclose(norm, 0.5)
    assert np.isclose(params["a"].grad[0], 0.3)


def test_clear_grads():
    params = make_params(a=[1.0])
    params["a"].grad = np.array([2.0])
    clear_grads(params)
    assert params["a"].grad is None


def test_regularizer_validation():
    with pytest.raises(ValueError):
        RegularizerConfig(l2=-1.0)
    with pytest.raises(ValueError):
        RegularizerConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        RegularizerConfig(label_smoothing=1.0)


def test_adam_matches_naive_reference():
    # independent scalar re-implementation of bias-corrected Adam
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=4)
    grads = [rng.normal(size=4) for _ in range(7)]
    lam = 0.02
    lr, b1, b2, eps = 2e-3, 0.9, 0.999, 1e-8

    w = w0.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t, g in enumerate(grads, start=1):
        ge = g + lam * w
        m = b1 * m + (1 - b1) * ge
        v = b2 * v + (1 - b2) * ge * ge
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)

    params = make_params(w=w0)
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    for g in grads:
        params["w"].grad = g.copy()
        adam_step(params, state, RegularizerConfig(l2=lam))
    assert np.allclose(params["w"].data, w, atol=1e-12)
