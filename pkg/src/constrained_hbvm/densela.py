"""Small dense linear algebra used by the stage equations.

Block vectors are stored as 2-D arrays of shape ``(s, m)``: row ``i`` is the
``i``-th block. With that layout ``(C kron I_m) V`` is just ``C @ V``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotSpdError, ShapeMismatchError, SingularSystemError

SYMMETRY_TOL = 1e-12
PIVOT_TOL = 1e-14


@dataclass(frozen=True)
class SpdFactorization:
    """Lower-triangular Cholesky factor ``L`` with ``A = L L^T``."""

    lower: np.ndarray

    @property
    def dimension(self):
        return self.lower.shape[0]

    def solve(self, b):
        y = scipy.linalg.solve_triangular(self.lower, b, lower=True)
        return scipy.linalg.solve_triangular(self.lower.T, y, lower=False)

    def inverse(self):
        return self.solve(np.eye(self.dimension))


def cholesky(A):
    """Cholesky factorization of a symmetric positive-definite matrix.

    Raises ``NotSpdError`` on a non-positive pivot, and ``ShapeMismatchError``
    if ``A`` is not square or not symmetric to within ``1e-12`` (relative).
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"cholesky needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotSpdError("matrix has non-finite entries")
    scale = max(np.max(np.abs(A)), 1.0) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ShapeMismatchError("cholesky needs a symmetric matrix")
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotSpdError(f"non-positive pivot {d:.3e} at column {j}")
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return SpdFactorization(L)


def lu_solve(A, B):
    """Solve ``A X = B`` by LU with partial pivoting.

    A pivot smaller than ``1e-14 * max|A|`` raises ``SingularSystemError``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"lu_solve needs a square matrix, got shape {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ShapeMismatchError(f"right-hand side has {B.shape[0]} rows, matrix has {A.shape[0]}")
    norm = np.max(np.abs(A))
    if not np.isfinite(norm):
        raise SingularSystemError("matrix has non-finite entries")
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularSystemError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if norm == 0.0 or np.min(pivots) < PIVOT_TOL * norm:
        raise SingularSystemError(
            f"pivot {np.min(pivots):.3e} below {PIVOT_TOL:g} * |A| = {PIVOT_TOL * norm:.3e}"
        )
    return scipy.linalg.lu_solve((lu, piv), B, check_finite=False)


def block_kron_apply(C, V):
    """Compute ``(C kron I_m) V`` without forming the Kronecker product.

    ``V`` may be an ``(s, m)`` block array or a flat vector of length ``s*m``;
    the result has the same layout as ``V``.
    """
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    if C.ndim != 2:
        raise ShapeMismatchError(f"C must be a matrix, got shape {C.shape}")
    r, s = C.shape
    if V.ndim == 1:
        if s == 0 or V.size % s:
            raise ShapeMismatchError(f"vector of length {V.size} is not {s} blocks")
        return (C @ V.reshape(s, -1)).reshape(-1)
    if V.ndim != 2 or V.shape[0] != s:
        raise ShapeMismatchError(f"expected {s} blocks, got shape {V.shape}")
    return C @ V
