import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoblock.imputation import (ImputationError, ImputationKind, fill_last, fill_linear, fill_zero,
                                 impute, impute_batch)

NAN = np.nan


def traj(points, observed):
    p = np.array(points, dtype=float)
    m = np.array(observed, dtype=bool)
    p[~m] = NAN
    return p, m


# fill_last
def test_last_carries_forward():
    p, m = traj([(1, 1), (9, 9), (9, 9)], [1, 0, 0])
    np.testing.assert_array_equal(fill_last(p, m), [(1, 1), (1, 1), (1, 1)])


def test_last_identity_when_complete():
    p, m = traj([(1, 2), (3, 4), (5, 6)], [1, 1, 1])
    np.testing.assert_array_equal(fill_last(p, m), p)


def test_last_leading_gap_takes_first_detection():
    p, m = traj([(0, 0), (5, 5)], [0, 1])
    np.testing.assert_array_equal(fill_last(p, m), [(5, 5), (5, 5)])


# fill_zero
def test_zero_everywhere_missing():
    p, m = traj([(1, 1), (2, 2), (3, 3)], [0, 0, 0])
    np.testing.assert_array_equal(fill_zero(p, m), np.zeros((3, 2)))


def test_zero_identity_when_complete():
    p, m = traj([(1, 2), (3, 4)], [1, 1])
    np.testing.assert_array_equal(fill_zero(p, m), p)


def test_zero_mixed_mask():
    p, m = traj([(1, 2), (3, 4), (5, 6), (7, 8)], [1, 0, 1, 0])
    out = fill_zero(p, m)
    np.testing.assert_array_equal(out[m], p[m])
    np.testing.assert_array_equal(out[~m], 0.0)


def test_zero_custom_value():
    p, m = traj([(1, 2), (3, 4)], [1, 0])
    np.testing.assert_array_equal(fill_zero(p, m, value=(-1.5, 2.0)), [(1, 2), (-1.5, 2.0)])


# fill_linear
def test_linear_interior():
    p, m = traj([(0, 0), (9, 9), (9, 9), (3, 3)], [1, 0, 0, 1])
    np.testing.assert_array_equal(fill_linear(p, m), [(0, 0), (1, 1), (2, 2), (3, 3)])


def test_linear_forward_extrapolation():
    p, m = traj([(0, 0)] * 4 + [(4, 0), (5, 0), (0, 0), (0, 0)], [0, 0, 0, 0, 1, 1, 0, 0])
    out = fill_linear(p, m)
    np.testing.assert_array_equal(out[6:], [(6, 0), (7, 0)])


def test_linear_backward_extrapolation():
    p, m = traj([(0, 0), (2, 0), (3, 0)], [0, 1, 1])
    np.testing.assert_array_equal(fill_linear(p, m), [(1, 0), (2, 0), (3, 0)])


def test_linear_single_detection_is_constant():
    p, m = traj([(0, 0), (2, 5), (0, 0)], [0, 1, 0])
    np.testing.assert_array_equal(fill_linear(p, m), [(2, 5)] * 3)


@pytest.mark.parametrize("fn", [fill_last, fill_linear])
def test_no_detection_is_an_error(fn):
    p, m = traj([(0, 0), (1, 1)], [0, 0])
    with pytest.raises(ImputationError):
        fn(p, m)


masks = st.lists(st.booleans(), min_size=2, max_size=12).filter(lambda m: sum(m) >= 1)


@given(masks, st.integers(0, 2**31))
def test_fills_never_touch_observed(mask, seed):
    m = np.array(mask)
    p = np.random.default_rng(seed).normal(size=(len(m), 2))
    p[~m] = NAN
    for kind in ImputationKind:
        out = impute(kind, p, m)
        np.testing.assert_array_equal(out[m], p[m])
        assert np.all(np.isfinite(out))


@given(st.integers(2, 12), st.integers(0, 2**31))
def test_complete_data_identity(T, seed):
    p = np.random.default_rng(seed).normal(size=(T, 2))
    m = np.ones(T, bool)
    for kind in ImputationKind:
        np.testing.assert_array_equal(impute(kind, p, m), p)


@given(st.lists(st.booleans(), min_size=2, max_size=12).filter(lambda m: sum(m) >= 2),
       st.integers(0, 2**31))
def test_linear_reconstructs_affine(mask, seed):
    r = np.random.default_rng(seed)
    m = np.array(mask)
    t = np.arange(len(m))[:, None]
    p = r.uniform(-10, 10, 2) + t * r.uniform(-3, 3, 2)
    obs = np.where(m[:, None], p, NAN)
    np.testing.assert_allclose(fill_linear(obs, m), p, rtol=0, atol=1e-12)


def test_batch_matches_single():
    r = np.random.default_rng(0)
    p = r.normal(size=(5, 8, 2))
    m = r.random((5, 8)) < 0.6
    m[:, 0] = True
    for kind in ImputationKind:
        out = impute_batch(kind, np.where(m[..., None], p, NAN), m)
        for i in range(5):
            np.testing.assert_array_equal(out[i], impute(kind, np.where(m[i, :, None], p[i], NAN), m[i]))
