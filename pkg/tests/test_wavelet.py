import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypercs.errors import DimensionError
from hypercs.wavelet import HaarSpec, haar_forward, haar_inverse


def haar_matrix(n):
    """Recursive dense construction: coarse rows on top, finest details at the bottom."""
    if n == 1:
        return np.ones((1, 1))
    top = np.kron(haar_matrix(n // 2), [1.0, 1.0])
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([top, bottom]) / np.sqrt(2.0)


def test_constant_signal_single_coefficient():
    u = haar_forward(np.full(8, 3.0))
    assert np.count_nonzero(np.abs(u) > 1e-12) == 1
    assert u[0] == pytest.approx(3.0 * np.sqrt(8))


def test_small_example_matches_hand_matrix():
    s = 1 / np.sqrt(2)
    H4 = np.array([[0.5, 0.5, 0.5, 0.5], [0.5, 0.5, -0.5, -0.5], [s, -s, 0, 0], [0, 0, s, -s]])
    v = np.array([1.0, -1.0, 0.0, 0.0])
    np.testing.assert_allclose(haar_forward(v), H4 @ v, atol=1e-15)
    np.testing.assert_allclose(haar_matrix(4), H4, atol=1e-15)


def test_inverse_of_dc():
    np.testing.assert_allclose(haar_inverse(np.eye(4)[0]), [0.5] * 4, atol=1e-15)


@pytest.mark.parametrize("n", [2, 8, 32, 64])
def test_matches_dense_oracle(n, rng):
    H = haar_matrix(n)
    v = rng.normal(size=n)
    np.testing.assert_allclose(haar_forward(v), H @ v, atol=1e-12)
    np.testing.assert_allclose(haar_inverse(v), H.T @ v, atol=1e-12)


def test_norm_preserved(rng):
    v = rng.normal(size=1024)
    assert np.linalg.norm(haar_forward(v)) == pytest.approx(np.linalg.norm(v), rel=1e-12)


def test_roundtrip_4096(rng):
    v = rng.normal(size=4096)
    np.testing.assert_allclose(haar_inverse(haar_forward(v)), v, rtol=0, atol=1e-12 * np.abs(v).max())


def test_columns_independent(rng):
    X = rng.normal(size=(16, 3))
    U = haar_forward(X)
    for j in range(3):
        np.testing.assert_allclose(U[:, j], haar_forward(X[:, j]), atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 4, 16, 64])
def test_orthonormal(n):
    H = haar_forward(np.eye(n))
    np.testing.assert_allclose(H.T @ H, np.eye(n), atol=1e-12)


@given(st.integers(0, 6), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_linearity(logn, a, b, seed):
    n = 2**logn
    r = np.random.default_rng(seed)
    v, w = r.normal(size=n), r.normal(size=n)
    lhs = haar_forward(a * v + b * w)
    rhs = a * haar_forward(v) + b * haar_forward(w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * np.sqrt(n))


@given(st.integers(1, 8), st.data())
def test_piecewise_constant_sparsity(logn, data):
    n = 2**logn
    k = data.draw(st.integers(1, min(n, 6)))
    cuts = sorted(data.draw(st.sets(st.integers(1, n - 1), min_size=k - 1, max_size=k - 1))) if k > 1 else []
    v = np.zeros(n)
    edges = [0] + cuts + [n]
    for i in range(len(edges) - 1):
        v[edges[i]:edges[i + 1]] = data.draw(st.floats(-5, 5))
    nnz = np.count_nonzero(np.abs(haar_forward(v)) > 1e-9)
    # each jump touches at most one detail per level, plus the DC term
    assert nnz <= (k - 1) * logn + 1 <= k * logn


def test_partial_depth(rng):
    v = rng.normal(size=16)
    u = haar_forward(v, HaarSpec(16, levels=1))
    np.testing.assert_allclose(u[8:], (v[0::2] - v[1::2]) / np.sqrt(2), atol=1e-14)
    np.testing.assert_allclose(haar_inverse(u, HaarSpec(16, levels=1)), v, atol=1e-13)


def test_rejects_non_power_of_two():
    with pytest.raises(DimensionError):
        haar_forward(np.ones(6))
