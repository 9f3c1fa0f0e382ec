"""Autodiff primitives: forward examples, backward vs finite differences."""

import math

import numpy as np
import pytest

from xlingo import autodiff as ad
from xlingo.autodiff import Tensor, backward, grad_check
from xlingo.errors import NumericsError, ShapeError
from xlingo.rng import Rng

SEEDS = list(range(20))


def rand(rng, shape, lo=-1.5, hi=1.5):
    return rng.uniform(lo, hi, shape)


class TestForwardExamples:
    def test_matmul_identity(self):
        a = Tensor(np.arange(9, dtype=float).reshape(3, 3))
        eye = Tensor(np.eye(3))
        assert np.array_equal(ad.matmul(eye, a).data, a.data)

    def test_tanh_zero_vector(self):
        z = Tensor(np.zeros(7))
        assert np.array_equal(ad.tanh(z).data, np.zeros(7))

    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor(np.array([1.0, 1.0, 1.0])))
        assert np.allclose(out.data, np.full(3, 1 / 3), atol=1e-15)

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestBackwardExamples:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(12, dtype=float).reshape(3, 4), requires_grad=True)
        backward(ad.sum_all(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_dot_gives_2x(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        backward(ad.dot(x, x))
        assert np.allclose(x.grad, 2 * x.data)

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(ad.tanh(x))

    def test_nonfinite_loss_rejected(self):
        x = Tensor(np.array([1e308]), requires_grad=True)
        with np.errstate(over="ignore"):
            y = ad.sum_all(ad.mul(x, x))
        with pytest.raises(NumericsError):
            backward(y)

    def test_fanout_gradients_sum(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.mul(x, x), ad.scale(x, 3.0))  # x^2 + 3x
        backward(ad.sum_all(y))
        assert np.allclose(x.grad, [7.0])

    @pytest.mark.parametrize("seed", SEEDS)
    def test_composite_graph_matches_finite_differences(self, seed):
        # random 5-element inputs through a composite graph (spec oracle)
        rng = Rng(seed)
        a = Tensor(rand(rng, (5,)), requires_grad=True)
        b = Tensor(rand(rng, (5,)), requires_grad=True)

        def fn(a, b):
            x = ad.mul(ad.tanh(a), ad.sigmoid(b))
            y = ad.add(x, ad.abs_(b))
            return ad.mean_all(ad.mul(y, y))

        report = grad_check(fn, [a, b], tol=1e-4, h=1e-5)
        assert report.passed, report


def _linear_layer_case(rng):
    x = Tensor(rand(rng, (4, 3)), requires_grad=True)
    w = Tensor(rand(rng, (3, 2)), requires_grad=True)
    b = Tensor(rand(rng, (2,)), requires_grad=True)

    def fn(x, w, b):
        return ad.sum_all(ad.tanh(ad.add_bias(ad.matmul(x, w), b)))

    return fn, [x, w, b]


def _layer_norm_case(rng):
    x = Tensor(rand(rng, (1, 8)), requires_grad=True)
    g = Tensor(rand(rng, (8,), 0.5, 1.5), requires_grad=True)
    b = Tensor(rand(rng, (8,)), requires_grad=True)

    def fn(x, g, b):
        return ad.sum_all(ad.layer_norm(x, g, b, 1e-6))

    return fn, [x, g, b]


def _layer_norm_blocks_case(rng):
    x = Tensor(rand(rng, (2, 8)), requires_grad=True)
    g = Tensor(rand(rng, (8,), 0.5, 1.5), requires_grad=True)
    b = Tensor(rand(rng, (8,)), requires_grad=True)
    r = Tensor(rand(rng, (2, 8)), requires_grad=False)

    def fn(x, g, b):
        return ad.sum_all(ad.mul(ad.layer_norm(x, g, b, 1e-6, nblocks=2), r))

    return fn, [x, g, b]


def _lstm_cell_case(rng):
    pre = Tensor(rand(rng, (2, 12)), requires_grad=True)
    c = Tensor(rand(rng, (2, 3)), requires_grad=True)
    wh = Tensor(rand(rng, (3, 1)), requires_grad=True)

    def fn(pre, c, wh):
        h, c_new = ad.lstm_cell(pre, c)
        # route both outputs into the loss so both backward paths fire
        return ad.add(ad.sum_all(ad.matmul(h, wh)), ad.mean_all(ad.mul(c_new, c_new)))

    return fn, [pre, c, wh]


def _masked_softmax_case(rng):
    s = Tensor(rand(rng, (2, 4)), requires_grad=True)
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    r = rand(rng, (2, 4))

    def fn(s):
        return ad.sum_all(ad.mul(ad.masked_softmax(s, mask), Tensor(r)))

    return fn, [s]


def _masked_pool_mean_case(rng):
    x = Tensor(rand(rng, (2, 3, 4)), requires_grad=True)
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    r = rand(rng, (2, 4))

    def fn(x):
        return ad.sum_all(ad.mul(ad.masked_pool(x, mask, "mean"), Tensor(r)))

    return fn, [x]


def _masked_pool_max_case(rng):
    x = Tensor(rand(rng, (2, 3, 4)), requires_grad=True)
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    r = rand(rng, (2, 4))

    def fn(x):
        return ad.sum_all(ad.mul(ad.masked_pool(x, mask, "max"), Tensor(r)))

    return fn, [x]


def _attention_case(rng):
    w = Tensor(rand(rng, (2, 3)), requires_grad=True)
    c = Tensor(rand(rng, (2, 3, 4)), requires_grad=True)
    r = rand(rng, (2, 4))

    def fn(w, c):
        return ad.sum_all(ad.mul(ad.attn_mix(ad.softmax(w), c), Tensor(r)))

    return fn, [w, c]


def _add_rowvec_case(rng):
    x = Tensor(rand(rng, (2, 3, 4)), requires_grad=True)
    s = Tensor(rand(rng, (2, 4)), requires_grad=True)

    def fn(x, s):
        return ad.mean_all(ad.tanh(ad.add_rowvec(x, s)))

    return fn, [x, s]


def _embedding_case(rng):
    table = Tensor(rand(rng, (5, 3)), requires_grad=True)
    ids = np.array([[0, 2, 2], [4, 1, 0]])

    def fn(table):
        return ad.mean_all(ad.mul(ad.embedding(table, ids), ad.embedding(table, ids)))

    return fn, [table]


def _cross_entropy_case(rng):
    logits = Tensor(rand(rng, (3, 4)), requires_grad=True)
    targets = np.array([0, 3, 1])
    weights = np.array([1.0, 0.5, 2.0])

    def fn(logits):
        return ad.smoothed_cross_entropy(logits, targets, eps=0.1, weights=weights)

    return fn, [logits]


def _bmm_case(rng):
    a = Tensor(rand(rng, (2, 3, 2)), requires_grad=True)
    b = Tensor(rand(rng, (2, 2, 4)), requires_grad=True)

    def fn(a, b):
        return ad.mean_all(ad.tanh(ad.bmm(a, b)))

    return fn, [a, b]


def _masked_softmax_cols_case(rng):
    s = Tensor(rand(rng, (2, 2, 4)), requires_grad=True)
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]])
    r = rand(rng, (2, 2, 4))

    def fn(s):
        return ad.sum_all(ad.mul(ad.masked_softmax_cols(s, mask), Tensor(r)))

    return fn, [s]


def _concat_slice_case(rng):
    a = Tensor(rand(rng, (2, 3)), requires_grad=True)
    b = Tensor(rand(rng, (2, 2)), requires_grad=True)

    def fn(a, b):
        cat = ad.concat([a, b], axis=1)
        piece = ad.slice_axis(cat, 1, 4, axis=1)
        return ad.mean_all(ad.mul(piece, piece))

    return fn, [a, b]


def _lerp_stack_case(rng):
    a = Tensor(rand(rng, (2, 3)), requires_grad=True)
    b = Tensor(rand(rng, (2, 3)), requires_grad=True)
    mask = np.array([[1.0], [0.0]])

    def fn(a, b):
        mixed = ad.lerp_mask(a, b, mask)
        stacked = ad.stack_steps([mixed, b])
        return ad.mean_all(ad.mul(stacked, stacked))

    return fn, [a, b]


PRIMITIVE_CASES = {
    "linear": _linear_layer_case,
    "layer_norm": _layer_norm_case,
    "layer_norm_blocks": _layer_norm_blocks_case,
    "lstm_cell": _lstm_cell_case,
    "masked_softmax": _masked_softmax_case,
    "pool_mean": _masked_pool_mean_case,
    "pool_max": _masked_pool_max_case,
    "attention": _attention_case,
    "add_rowvec": _add_rowvec_case,
    "embedding": _embedding_case,
    "cross_entropy": _cross_entropy_case,
    "bmm": _bmm_case,
    "masked_softmax_cols": _masked_softmax_cols_case,
    "concat_slice": _concat_slice_case,
    "lerp_stack": _lerp_stack_case,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
@pytest.mark.parametrize("seed", SEEDS)
def test_primitive_gradients(name, seed):
    """Every differentiable primitive passes grad_check at 1e-4 (20 seeds)."""
    fn, inputs = PRIMITIVE_CASES[name](Rng(seed * 1000 + 7))
    report = grad_check(fn, inputs, tol=1e-4)
    assert report.passed, f"{name}: {report}"


class TestGradCheckApi:
    def test_linear_layer_passes(self):
        fn, inputs = _linear_layer_case(Rng(3))
        assert grad_check(fn, inputs, tol=1e-4).passed

    def test_layer_norm_passes(self):
        fn, inputs = _layer_norm_case(Rng(4))
        assert grad_check(fn, inputs, tol=1e-4).passed

    def test_zero_input_tanh_has_zero_error(self):
        x = Tensor(np.zeros(4), requires_grad=True)

        def fn(x):
            return ad.sum_all(ad.tanh(x))

        report = grad_check(fn, [x], tol=1e-4)
        # d/dx tanh at 0 is exactly 1; central differences are exact too
        assert report.max_rel_err < 1e-10

    def test_failure_is_reported_not_thrown(self):
        x = Tensor(np.array([0.3, -0.2]), requires_grad=True)

        def broken(x):
            out = ad.tanh(x)
            out.data = out.data * 1.5  # corrupt forward so gradients disagree
            return ad.sum_all(out)

        report = grad_check(broken, [x], tol=1e-4)
        assert not report.passed


class TestLayerNormStats:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_normalized_moments(self, seed):
        rng = Rng(seed)
        raw = rand(rng, (1, 8), -6, 6)
        if raw.var() < 2.0:  # invariant is conditional on variance >> eps
            raw = raw * 2.0
        x = Tensor(raw)
        out = ad.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), 1e-6)
        assert abs(out.data.mean()) < 1e-9
        assert abs(out.data.var() - 1.0) < 1e-6
        # direct recomputation of the moments as an independent oracle
        expected = (raw - raw.mean()) / np.sqrt(raw.var() + 1e-6)
        assert np.abs(out.data - expected).max() < 1e-9

    def test_constant_vector_gives_bias(self):
        x = Tensor(np.full((1, 4), 3.7))
        bias = Tensor(np.array([1.0, -2.0, 0.5, 0.0]))
        out = ad.layer_norm(x, Tensor(np.ones(4)), bias, 1e-6)
        assert np.allclose(out.data[0], bias.data, atol=1e-12)

    def test_two_point_unit_variance(self):
        x = Tensor(np.array([[-1.0, 1.0]]))
        out = ad.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-12)
        assert np.allclose(out.data[0], [-1.0, 1.0], atol=1e-9)


class TestSoftmaxProperties:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_sums_to_one_in_open_interval(self, seed):
        rng = Rng(seed)
        out = ad.softmax(Tensor(rand(rng, (4, 6), -8, 8))).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12
        assert (out > 0).all() and (out < 1).all()


class TestCrossEntropy:
    def test_eps_zero_is_nll(self):
        logits = Tensor(np.array([[0.2, 1.4, -0.7]]))
        loss = ad.smoothed_cross_entropy(logits, np.array([1]), eps=0.0)
        z = np.log(np.exp(logits.data[0]).sum())
        assert np.isclose(loss.item(), z - 1.4, atol=1e-12)

    def test_uniform_logits_give_log_k(self):
        for k in (2, 3, 7):
            logits = Tensor(np.zeros((1, k)))
            for eps in (0.0, 0.1, 0.5):
                loss = ad.smoothed_cross_entropy(logits, np.array([0]), eps=eps)
                assert np.isclose(loss.item(), math.log(k), atol=1e-12)

    def test_hand_value(self):
        # logits [2,0], true class 0, eps 0.1, K=2; direct evaluation:
        # lse = log(e^2 + e^0); loss = -(0.95*(2-lse) + 0.05*(0-lse))
        lse = math.log(math.exp(2.0) + 1.0)
        expected = -(0.95 * (2.0 - lse) + 0.05 * (0.0 - lse))
        assert np.isclose(expected, 0.2269280110429725, atol=1e-15)
        loss = ad.smoothed_cross_entropy(Tensor(np.array([[2.0, 0.0]])),
                                         np.array([0]), eps=0.1)
        assert np.isclose(loss.item(), expected, atol=1e-12)

    def test_class_out_of_range(self):
        with pytest.raises(ShapeError):
            ad.smoothed_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor(np.arange(5, dtype=float))
        out = ad.dropout(x, 0.0, Rng(0), training=True)
        assert out is x

    def test_eval_mode_identity(self):
        x = Tensor(np.arange(5, dtype=float))
        out = ad.dropout(x, 0.9, Rng(0), training=False)
        assert out is x

    def test_mean_preserved_at_large_n(self):
        x = Tensor(np.ones(100_000))
        out = ad.dropout(x, 0.5, Rng(123), training=True)
        assert 0.99 <= out.data.mean() <= 1.01

    def test_same_seed_same_mask(self):
        x = Tensor(np.ones(1000))
        a = ad.dropout(x, 0.3, Rng(7), training=True)
        b = ad.dropout(x, 0.3, Rng(7), training=True)
        assert np.array_equal(a.data, b.data)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(3)), 1.0, Rng(0), training=True)


class TestMaskedOps:
    def test_fully_masked_softmax_rejected(self):
        with pytest.raises(ShapeError):
            ad.masked_softmax(Tensor(np.zeros((1, 3))), np.zeros((1, 3)))

    def test_fully_masked_pool_rejected(self):
        with pytest.raises(ShapeError):
            ad.masked_pool(Tensor(np.zeros((1, 3, 2))), np.zeros((1, 3)), "mean")

    def test_masked_positions_get_exact_zero(self):
        scores = Tensor(np.array([[5.0, 1.0, 3.0]]))
        mask = np.array([[1.0, 0.0, 1.0]])
        out = ad.masked_softmax(scores, mask)
        assert out.data[0, 1] == 0.0
        assert np.isclose(out.data.sum(), 1.0, atol=1e-15)
