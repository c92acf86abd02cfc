from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedwm import tensor as T
from guidedwm.errors import DimensionError
from guidedwm.tensor import Tape, Tensor, default_dtype


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


# --- loop oracles ---------------------------------------------------------------------

def matmul_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for q in range(k):
                s += a[i, q] * b[q, j]
            out[i, j] = s
    return out


def softmax_loop(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        mx = max(x[i])
        e = [np.exp(v - mx) for v in x[i]]
        tot = sum(e)
        for j in range(x.shape[1]):
            out[i, j] = e[j] / tot
    return out


def layer_norm_loop(x, eps=1e-5):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = list(x[i])
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        for j, v in enumerate(row):
            out[i, j] = (v - mu) / np.sqrt(var + eps)
    return out


# --- matmul ---------------------------------------------------------------------------

def test_matmul_identity():
    out = T.matmul(t64(np.eye(2)), t64([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projector():
    out = T.matmul(t64([[1, 0], [0, 0]]), t64([[5], [7]]))
    np.testing.assert_array_equal(out.data, [[5], [0]])


def test_matmul_random_matches_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(t64(a), t64(b)).data, matmul_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_matmul_loop_oracle_property(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(m, k)), r.normal(size=(k, n))
    np.testing.assert_allclose(T.matmul(t64(a), t64(b)).data, matmul_loop(a, b), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_softmax_and_layer_norm_loop_oracles(m, n, seed):
    x = np.random.default_rng(seed).normal(size=(m, n)) * 3
    np.testing.assert_allclose(T.softmax(t64(x), axis=-1).data, softmax_loop(x), rtol=0, atol=1e-12)
    np.testing.assert_allclose(T.layer_norm(t64(x)).data, layer_norm_loop(x), rtol=0, atol=1e-12)


# --- primitive examples ----------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(t64([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_layer_norm_constant_vector_is_zero():
    out = T.layer_norm(t64([[4.0, 4.0, 4.0, 4.0]]))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_array_equal(out.data, 0.0)


def test_smooth_l1_identical_inputs():
    x = t64([1.0, -2.0, 3.5])
    assert T.smooth_l1(x, x, beta=1.0).item() == 0.0


def test_smooth_l1_branches():
    x, y = t64([0.5, 3.0]), t64([0.0, 0.0])
    np.testing.assert_allclose(T.smooth_l1(x, y, reduction="none").data, [0.125, 2.5])


def test_gelu_tanh_form():
    x = np.linspace(-3, 3, 7)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(T.gelu(t64(x)).data, ref, atol=1e-12)


def test_attention_single_key_returns_value():
    q, k, v = t64(np.ones((1, 3, 2))), t64(np.ones((1, 1, 2))), t64([[[5.0, -1.0, 2.0]]])
    np.testing.assert_allclose(T.scaled_dot_attention(q, k, v).data, np.tile([5.0, -1.0, 2.0], (1, 3, 1)))


def test_mean_pool_and_l2_norm():
    x = t64([[[3.0, 4.0], [0.0, 0.0]]])
    np.testing.assert_allclose(T.mean_pool(x, axis=1).data, [[1.5, 2.0]])
    np.testing.assert_allclose(T.l2_norm(x, axis=-1).data, [[5.0, 0.0]])


def test_concat_slice_reshape_round_trip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    c = T.concat([t64(a), t64(b)], axis=1)
    np.testing.assert_array_equal(c[:, :3].data, a)
    np.testing.assert_array_equal(c[:, 3:].data, b)
    np.testing.assert_array_equal(c.reshape(7, 2).reshape(2, 7).data, c.data)


def test_zero_extent_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_broadcast_rules():
    a = t64(np.ones((2, 3, 4)))
    assert (a + t64(np.ones(4))).shape == (2, 3, 4)
    assert (a + t64(np.ones((3, 4)))).shape == (2, 3, 4)
    assert (a * 2.0).shape == (2, 3, 4)
    with pytest.raises(DimensionError):
        a + t64(np.ones((2, 1, 4)))
    with pytest.raises(DimensionError):
        a + t64(np.ones(3))
    assert T.broadcast(t64(np.ones((2, 1, 4))), (2, 3, 4)).shape == (2, 3, 4)


def test_axis_errors():
    with pytest.raises(DimensionError):
        T.softmax(t64(np.ones((2, 2))), axis=3)
    with pytest.raises(DimensionError):
        T.concat([t64(np.ones((2, 2))), t64(np.ones((3, 3)))], axis=0)


def test_default_dtype_context():
    assert Tensor([1.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# --- tape -------------------------------------------------------------------------------

def test_tape_visits_each_node_once_in_reverse():
    x = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = x * x
        z = y + y
        out = T.sum(z)
    visited = tape.backward(out)
    assert visited == sorted(visited, reverse=True)
    assert len(set(visited)) == len(visited) == len(tape)
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_no_recording_without_tape_or_grad():
    x = t64([1.0, 2.0])
    with Tape() as tape:
        T.sum(x * x)
    assert len(tape) == 0


def test_film_identity_passes_gradient_unchanged(rng):
    z = t64(rng.normal(size=(2, 3, 4)), grad=True)
    w = rng.normal(size=(2, 3, 4))
    gamma, beta = t64(np.ones(4)), t64(np.zeros(4))
    with Tape() as tape:
        out = T.sum((z * gamma + beta) * t64(w))
    tape.backward(out)
    np.testing.assert_array_equal(z.grad, w)
