import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncsphere.numerics import (
    RandomSource, as_matrix, covariance, gaussian_matrix, log_sum_exp, singular_values,
    sym_eigenvalues, sym_eigh,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_log_sum_exp_examples():
    assert log_sum_exp([5.0]) == 5.0
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)


def test_log_sum_exp_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        log_sum_exp([])


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-500, 500))
def test_log_sum_exp_shift_identity(v, c):
    assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-9)


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_log_sum_exp_bounds(v):
    assert v.max() - 1e-12 <= log_sum_exp(v) <= v.max() + math.log(v.size) + 1e-12


def test_sym_eigenvalues_examples():
    np.testing.assert_allclose(sym_eigenvalues(np.eye(3)), [1, 1, 1], atol=1e-15)
    np.testing.assert_allclose(sym_eigenvalues(np.diag([4.0, 1.0, 0.0])), [4, 1, 0], atol=1e-15)
    np.testing.assert_allclose(sym_eigenvalues([[2.0, 1.0], [1.0, 2.0]]), [3, 1], atol=1e-14)


def test_sym_eigenvalues_rejects_asymmetric_and_nonsquare():
    with pytest.raises(ValueError, match="not symmetric"):
        sym_eigenvalues([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="square"):
        sym_eigenvalues(np.ones((2, 3)))


def test_sym_eigenvalues_clamps_rounding_negatives():
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    G = np.outer(v, v)  # rank one, the zero eigenvalue may come out as -1e-17
    assert np.all(sym_eigenvalues(G) >= 0)


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_sym_eigh_reconstructs(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    S = A + A.T
    w, V = sym_eigh(S)
    assert np.all(np.diff(w) <= 1e-12)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, S, atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)


def test_singular_values_examples():
    np.testing.assert_allclose(singular_values(np.eye(2)), [1, 1], atol=1e-15)
    np.testing.assert_array_equal(singular_values(np.zeros((3, 2))), [0, 0])
    np.testing.assert_allclose(singular_values(np.diag([3.0, -4.0])), [4, 3], atol=1e-14)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_singular_values_properties(m, n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(m, n))
    s = singular_values(A)
    assert np.all(s >= 0) and np.all(np.diff(s) <= 1e-12)
    np.testing.assert_allclose(s, np.linalg.svd(A, compute_uv=False), atol=1e-9)
    np.testing.assert_allclose(singular_values(A[r.permutation(m)]), s, atol=1e-10)


def test_covariance_examples():
    np.testing.assert_array_equal(covariance(np.ones((4, 3))), np.zeros((3, 3)))
    np.testing.assert_allclose(covariance([[1.0, 0.0], [-1.0, 0.0]]), [[1, 0], [0, 0]], atol=1e-15)
    np.testing.assert_array_equal(covariance([[1.0, 2.0]]), np.zeros((2, 2)))


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ValueError, match="non-empty"):
        as_matrix(np.zeros((0, 3)))


def test_random_source_determinism_and_moments():
    a = gaussian_matrix(RandomSource(7), 5, 4)
    b = gaussian_matrix(RandomSource(7), 5, 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, gaussian_matrix(RandomSource(8), 5, 4))
    x = gaussian_matrix(RandomSource(0), 10_000, 1)
    assert abs(x.mean()) < 0.05 and abs(x.var() - 1) < 0.05


def test_random_source_spawn_gives_independent_reproducible_streams():
    c1, c2 = RandomSource(3).spawn(2)
    d1, _ = RandomSource(3).spawn(2)
    assert not np.array_equal(c1.normal(4), c2.normal(4))
    np.testing.assert_array_equal(RandomSource(3).spawn(2)[0].normal(4), d1.normal(4))


def test_gaussian_matrix_rejects_empty_shape():
    with pytest.raises(ValueError):
        gaussian_matrix(RandomSource(0), 0, 3)
