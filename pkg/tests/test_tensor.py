import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfpn.tensor import add, concat_channels, reduce_channels, reduce_spatial, split_channels


def test_concat_two_blocks():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((1, 64, 8, 8)).astype(np.float32)
    b = rng.standard_normal((1, 64, 8, 8)).astype(np.float32)
    out = concat_channels([a, b])
    assert out.shape == (1, 128, 8, 8)
    assert np.array_equal(out[:, :64], a)
    assert np.array_equal(out[:, 64:], b)


def test_concat_single_part_is_identity():
    a = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
    assert np.array_equal(concat_channels([a]), a)


def test_concat_four_feature_blocks():
    parts = [np.zeros((1, 64, 4, 4)) for _ in range(4)]
    assert concat_channels(parts).shape[1] == 256


def test_concat_reports_offending_index():
    a = np.zeros((1, 2, 8, 8))
    b = np.zeros((1, 2, 8, 8))
    c = np.zeros((1, 2, 4, 4))
    with pytest.raises(ValueError, match="part 2"):
        concat_channels([a, b, c])
    with pytest.raises(ValueError, match="empty"):
        concat_channels([])


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 3),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
    sizes=st.lists(st.integers(1, 5), min_size=1, max_size=4),
    seed=st.integers(0, 10_000),
)
def test_concat_split_round_trip(n, h, w, sizes, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.standard_normal((n, c, h, w)) for c in sizes]
    back = split_channels(concat_channels(parts), sizes)
    for orig, rec in zip(parts, back):
        assert np.array_equal(orig, rec)


def test_add_identity_and_negation():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((1, 2, 3, 3))
    assert np.array_equal(add(a, np.zeros_like(a)), a)
    assert np.array_equal(add(a, -a), np.zeros_like(a))


def test_add_hand_case_and_mismatch():
    a = np.array([1.0, 2.0]).reshape(1, 1, 1, 2)
    b = np.array([3.0, 4.0]).reshape(1, 1, 1, 2)
    assert np.array_equal(add(a, b), np.array([4.0, 6.0]).reshape(1, 1, 1, 2))
    with pytest.raises(ValueError, match="mismatch"):
        add(a, np.zeros((1, 1, 2, 1)))


def test_reduce_spatial_cases():
    v = 3.25
    x = np.full((2, 3, 4, 5), v)
    assert np.allclose(reduce_spatial(x, "mean"), v)
    plane = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert reduce_spatial(plane, "max").item() == 4.0
    assert reduce_spatial(plane, "mean").item() == 2.5
    assert reduce_spatial(plane, "mean").shape == (1, 1, 1, 1)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 2),
    c=st.integers(1, 4),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
    seed=st.integers(0, 10_000),
)
def test_reduce_spatial_mean_matches_summation_oracle(n, c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((n, c, h, w))
    got = reduce_spatial(x, "mean")
    # straightforward scalar summation, independent of np.mean
    ref = np.zeros((n, c, 1, 1))
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for y in range(h):
                for xx in range(w):
                    acc += x[ni, ci, y, xx]
            ref[ni, ci, 0, 0] = acc / (h * w)
    assert np.abs(got - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())


def test_reduce_channels_cases():
    x = np.tile(np.arange(6.0).reshape(1, 1, 2, 3), (1, 4, 1, 1))
    assert np.array_equal(reduce_channels(x, "mean"), x[:, :1])
    two = np.stack([np.zeros((2, 2)), np.full((2, 2), 10.0)]).reshape(1, 2, 2, 2)
    assert np.all(reduce_channels(two, "max") == 10.0)
    assert np.all(reduce_channels(two, "mean") == 5.0)
    assert reduce_channels(two, "mean").shape == (1, 1, 2, 2)


def test_reduce_errors():
    with pytest.raises(ValueError, match="empty"):
        reduce_spatial(np.zeros((1, 2, 0, 3)), "mean")
    with pytest.raises(ValueError, match="channels"):
        reduce_channels(np.zeros((1, 0, 2, 2)), "max")


def test_operations_do_not_mutate_inputs():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal((1, 2, 3, 3))
    a0, b0 = a.copy(), b.copy()
    add(a, b)
    concat_channels([a, b])
    reduce_spatial(a, "max")
    reduce_channels(b, "mean")
    assert np.array_equal(a, a0) and np.array_equal(b, b0)
