import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_hbvm.densela import block_kron_apply, cholesky, lu_solve
from constrained_hbvm.errors import NotSpdError, ShapeMismatchError, SingularSystemError


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


def test_cholesky_known_factor():
    A = np.array([[4.0, 2.0], [2.0, 5.0]])
    L = cholesky(A).lower
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_cholesky_matches_numpy(n, seed):
    A = _spd(n, seed)
    fac = cholesky(A)
    np.testing.assert_allclose(fac.lower, np.linalg.cholesky(A), rtol=1e-12, atol=1e-12)
    b = np.arange(1.0, n + 1)
    np.testing.assert_allclose(A @ fac.solve(b), b, rtol=1e-10)
    np.testing.assert_allclose(fac.inverse() @ A, np.eye(n), atol=1e-10)


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotSpdError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotSpdError):
        cholesky(np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(ShapeMismatchError):
        cholesky(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_lu_solve_residual(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    B = rng.standard_normal((n, 3))
    X = lu_solve(A, B)
    np.testing.assert_allclose(A @ X, B, atol=1e-10)


def test_lu_solve_needs_pivoting():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(lu_solve(A, [2.0, 3.0]), [3.0, 2.0])


def test_lu_solve_singular():
    with pytest.raises(SingularSystemError):
        lu_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 1.0])
    with pytest.raises(SingularSystemError):
        lu_solve(np.zeros((3, 3)), np.ones(3))
    with pytest.raises(ShapeMismatchError):
        lu_solve(np.eye(2), np.ones(3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31))
def test_block_kron_apply_matches_kronecker(s, m, r, seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((r, s))
    V = rng.standard_normal((s, m))
    full = np.kron(C, np.eye(m)) @ V.reshape(-1)
    assert np.max(np.abs(block_kron_apply(C, V).reshape(-1) - full)) <= 1e-13
    assert np.max(np.abs(block_kron_apply(C, V.reshape(-1)) - full)) <= 1e-13


def test_block_kron_apply_shape_errors():
    with pytest.raises(ShapeMismatchError):
        block_kron_apply(np.eye(2), np.ones((3, 2)))
    with pytest.raises(ShapeMismatchError):
        block_kron_apply(np.eye(2), np.ones(5))
