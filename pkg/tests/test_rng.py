"""Determinism and stream-consistency of the seeded generator."""

import numpy as np
import pytest

from xlingo.rng import Rng


def test_same_seed_same_stream():
    a = Rng(99)
    b = Rng(99)
    assert [a.next_u64() for _ in range(50)] == [b.next_u64() for _ in range(50)]


def test_reference_vectors():
    # splitmix64 from seed 0 must reproduce the published test vectors
    from xlingo.rng import _splitmix64

    x = 0
    outs = []
    for _ in range(3):
        x, z = _splitmix64(x)
        outs.append(z)
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    # xoshiro256** from state (1,2,3,4): first output is rotl(2*5,7)*9 = 11520
    r = Rng(0)
    r._s = [1, 2, 3, 4]
    assert [r.next_u64() for _ in range(3)] == [11520, 0, 1509978240]


def test_known_stream_frozen():
    # frozen first draws for seed 0; guards against accidental algorithm drift
    r = Rng(0)
    first = [r.next_u64() for _ in range(3)]
    assert first == [
        11091344671253066420,
        13793997310169335082,
        1900383378846508768,
    ]


def test_bulk_matches_scalar():
    bulk = Rng(4242).random(100)
    scalar = np.array([Rng(4242).random() for _ in range(100)])
    assert np.array_equal(bulk, scalar)


def test_bulk_advances_state_like_scalar():
    a = Rng(7)
    a.random(10)
    b = Rng(7)
    for _ in range(10):
        b.random()
    assert a.next_u64() == b.next_u64()


def test_uniform_range():
    vals = Rng(5).uniform(-0.08, 0.08, 10_000)
    assert vals.min() >= -0.08 and vals.max() < 0.08
    assert abs(vals.mean()) < 0.002


def test_integers_bounds_and_determinism():
    r = Rng(11)
    draws = [r.integers(7) for _ in range(1000)]
    assert min(draws) == 0 and max(draws) == 6
    assert draws == [Rng(11).integers(7) for _ in range(1000)]
    with pytest.raises(ValueError):
        r.integers(0)


def test_shuffle_deterministic():
    x = list(range(20))
    y = list(range(20))
    Rng(3).shuffle(x)
    Rng(3).shuffle(y)
    assert x == y and sorted(x) == list(range(20))


def test_spawn_streams_independent_and_stable():
    parent = Rng(123)
    child_a = parent.spawn("data")
    parent.random(57)  # consuming the parent must not shift children
    child_a2 = Rng(123).spawn("data")
    assert child_a.random(8).tolist() == child_a2.random(8).tolist()
    child_b = Rng(123).spawn("other")
    assert child_b.random(8).tolist() != Rng(123).spawn("data").random(8).tolist()


def test_shapes():
    assert Rng(1).random((2, 3)).shape == (2, 3)
    assert isinstance(Rng(1).random(), float)
