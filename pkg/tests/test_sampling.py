from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guidedwm.errors import BoundsError, ConfigError
from guidedwm.sampling import apply_stride, dense_indices, make_plan, to_zero_based, uniform_indices


def uniform_float_oracle(n, nu):
    return [int(np.floor(1 + (i - 1) * (n - 1) / (nu - 1))) for i in range(1, nu + 1)]


@pytest.mark.parametrize("n,nu,expected", [
    (64, 8, [1, 10, 19, 28, 37, 46, 55, 64]),
    (5, 5, [1, 2, 3, 4, 5]),
    (10, 4, [1, 4, 7, 10]),
])
def test_uniform_hand_values(n, nu, expected):
    assert uniform_indices(n, nu) == expected


@pytest.mark.parametrize("nu", [1, 0, 11])
def test_uniform_rejects_bad_count(nu):
    with pytest.raises(ConfigError):
        uniform_indices(10, nu)


@given(st.integers(2, 300), st.data())
def test_uniform_properties(n, data):
    nu = data.draw(st.integers(2, n))
    idx = uniform_indices(n, nu)
    assert len(idx) == nu
    assert idx[0] == 1 and idx[-1] == n
    assert all(a < b for a, b in zip(idx, idx[1:]))
    assert idx == uniform_float_oracle(n, nu)


@given(st.integers(2, 300))
def test_uniform_full_is_identity(n):
    assert uniform_indices(n, n) == list(range(1, n + 1))


def test_dense_examples():
    assert dense_indices(5, 4, 64) == [5, 6, 7, 8]
    assert dense_indices(1, 64, 64) == list(range(1, 65))
    with pytest.raises(BoundsError):
        dense_indices(62, 4, 64)
    with pytest.raises(BoundsError):
        dense_indices(0, 4, 64)


@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 120))
def test_dense_length_or_bounds(t0, nd, n):
    if t0 + nd - 1 <= n:
        idx = dense_indices(t0, nd, n)
        assert len(idx) == nd and idx[0] == t0
    else:
        with pytest.raises(BoundsError):
            dense_indices(t0, nd, n)


def test_stride_examples():
    full = list(range(1, 65))
    assert apply_stride(full, 1) == full
    assert apply_stride(full, 2) == list(range(1, 64, 2))
    assert apply_stride([1, 10, 19], 2) == [1, 19]
    with pytest.raises(ConfigError):
        apply_stride(full, 3)


def test_plan_eval_and_random_placement():
    plan = make_plan(64, 8, 8, t0=1)
    assert plan.dense == tuple(range(1, 9)) and plan.uniform[-1] == 64
    rng = np.random.default_rng(0)
    starts = {make_plan(64, 8, 8, rng=rng, t0_max=5).t0 for _ in range(200)}
    assert starts == {1, 2, 3, 4, 5}


def test_plan_stride_span():
    plan = make_plan(64, 8, 8, stride=2, t0=1)
    assert plan.dense == (1, 3, 5, 7, 9, 11, 13, 15)
    with pytest.raises(ConfigError):
        make_plan(10, 4, 8, stride=2, t0=1)


def test_zero_based():
    np.testing.assert_array_equal(to_zero_based([1, 5]), [0, 4])
