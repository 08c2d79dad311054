"""Separable Hamiltonian systems with quadratic holonomic constraints.

``H(q, p) = 1/2 p^T M^{-1} p - U(q)`` subject to ``g(q) = 0`` with every
component of ``g`` quadratic in ``q``. The equations of motion are

    q' = M^{-1} p,    p' = grad U(q) - grad g(q) lambda,    g(q) = 0.

The callables held by a system must be pure. ``grad_potential`` and
``constraint_jacobian`` may optionally accept a stack of configurations of
shape ``(n, m)``; set ``vectorized=True`` when they do, and the stepper will
evaluate all quadrature nodes in a single call.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .densela import cholesky
from .errors import DerivativeMismatchError, NotSpdError, RegularityError, ShapeMismatchError

FD_STEP = 1e-6
FD_TOL = 1e-4
CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class State:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        p = np.array(self.p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ShapeMismatchError(f"q and p must be vectors of equal length, got {q.shape}, {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class ConstrainedHamiltonianSystem:
    """A constrained Hamiltonian problem.

    Parameters
    ----------
    m, nu : int
        Configuration dimension and number of constraints (``nu <= m``).
    mass_matrix : (m, m) array
        Constant SPD mass matrix, factorized once on construction.
    potential : callable
        ``q -> U(q)``.
    grad_potential : callable
        ``q -> grad U(q)``, shape ``(m,)``.
    constraints : callable
        ``q -> g(q)``, shape ``(nu,)``.
    constraint_jacobian : callable
        ``q -> grad g(q)``, shape ``(m, nu)`` (column ``a`` is the gradient of
        ``g_a``).
    constraint_hessian_form : callable
        ``(q, w) -> grad^2 g(q)(w, w)``, shape ``(nu,)``; independent of ``q``
        because the constraints are quadratic.
    """

    m: int
    nu: int
    mass_matrix: np.ndarray
    potential: Callable
    grad_potential: Callable
    constraints: Callable
    constraint_jacobian: Callable
    constraint_hessian_form: Callable
    vectorized: bool = False
    name: str = ""
    mass_inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nu < 1 or self.nu > self.m:
            raise ShapeMismatchError(f"need 1 <= nu <= m, got nu={self.nu}, m={self.m}")
        M = np.array(self.mass_matrix, dtype=float)
        if M.shape != (self.m, self.m):
            raise ShapeMismatchError(f"mass matrix must be {self.m}x{self.m}, got {M.shape}")
        Minv = cholesky(M).inverse()
        Minv = 0.5 * (Minv + Minv.T)
        M.setflags(write=False)
        Minv.setflags(write=False)
        object.__setattr__(self, "mass_matrix", M)
        object.__setattr__(self, "mass_inverse", Minv)

    def hamiltonian(self, q, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * p @ self.mass_inverse @ p - self.potential(np.asarray(q, dtype=float))

    def grad_potential_many(self, Q):
        """``grad U`` at every row of ``Q``, shape ``(n, m)``."""
        if self.vectorized:
            return np.asarray(self.grad_potential(Q), dtype=float)
        return np.array([self.grad_potential(q) for q in Q], dtype=float).reshape(Q.shape)

    def constraint_jacobian_many(self, Q):
        """``grad g`` at every row of ``Q``, shape ``(n, m, nu)``."""
        if self.vectorized:
            return np.asarray(self.constraint_jacobian(Q), dtype=float)
        return np.array([self.constraint_jacobian(q) for q in Q], dtype=float).reshape(
            Q.shape[0], self.m, self.nu
        )

    def hidden_constraints(self, q, p):
        """``grad g(q)^T M^{-1} p``."""
        return self.constraint_jacobian(np.asarray(q, dtype=float)).T @ (self.mass_inverse @ p)

    def gram(self, q):
        J = self.constraint_jacobian(np.asarray(q, dtype=float))
        return J.T @ self.mass_inverse @ J


@dataclass(frozen=True)
class ConsistencyReport:
    g_residual: float
    hidden_residual: float
    tol: float

    @property
    def consistent(self):
        return self.g_residual <= self.tol and self.hidden_residual <= self.tol


def hamiltonian(system, state):
    return system.hamiltonian(state.q, state.p)


def check_consistency(system, state, tol=CONSISTENCY_TOL):
    """Residuals of ``g(q) = 0`` and ``grad g(q)^T M^{-1} p = 0`` (max norms)."""
    g = np.atleast_1d(system.constraints(state.q))
    hid = system.hidden_constraints(state.q, state.p)
    return ConsistencyReport(float(np.max(np.abs(g))), float(np.max(np.abs(hid))), tol)


def exact_lambda(system, state):
    """Lagrange multiplier making the second derivative of ``g`` vanish.

    Solves ``[grad g^T M^{-1} grad g] lambda
    = grad^2 g(M^{-1} p, M^{-1} p) + grad g^T M^{-1} grad U``.
    """
    return _exact_lambda(system, state.q, state.p)


def _exact_lambda(system, q, p):
    q = np.asarray(q, dtype=float)
    J = system.constraint_jacobian(q)
    MinvJ = system.mass_inverse @ J
    qdot = system.mass_inverse @ p
    rhs = np.atleast_1d(system.constraint_hessian_form(q, qdot)) + MinvJ.T @ system.grad_potential(q)
    try:
        fac = cholesky(J.T @ MinvJ)
    except NotSpdError as exc:
        raise RegularityError(f"constraint Gram matrix is not SPD: {exc}") from exc
    return fac.solve(rhs)


def vector_field(system, q, p, lam=None):
    """Right-hand side ``(q', p')``; ``lam`` defaults to the exact multiplier."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if lam is None:
        lam = _exact_lambda(system, q, p)
    return system.mass_inverse @ p, system.grad_potential(q) - system.constraint_jacobian(q) @ lam


def constraint_acceleration(system, q, p, lam):
    """Second time derivative of ``g`` along the flow with multiplier ``lam``."""
    qdot, pdot = vector_field(system, q, p, lam)
    J = system.constraint_jacobian(np.asarray(q, dtype=float))
    return np.atleast_1d(system.constraint_hessian_form(q, qdot)) + J.T @ (system.mass_inverse @ pdot)


def _central_jacobian(f, q, step):
    cols = []
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = step
        cols.append((np.asarray(f(q + e), dtype=float) - np.asarray(f(q - e), dtype=float)) / (2 * step))
    return np.array(cols)


def validate_derivatives(system, q, w=None, step=FD_STEP, tol=FD_TOL):
    """Compare the supplied derivatives against central finite differences.

    Checks ``grad U``, ``grad g`` and ``grad^2 g(w, w)`` at ``q``; raises
    ``DerivativeMismatchError`` naming the first offender.
    """
    q = np.asarray(q, dtype=float)
    if w is None:
        w = np.linspace(1.0, -0.5, q.size) / np.sqrt(q.size)
    fd = _central_jacobian(lambda x: np.atleast_1d(system.potential(x)), q, step)[:, 0]
    err = np.max(np.abs(fd - system.grad_potential(q)))
    if err > tol * max(1.0, np.max(np.abs(fd))):
        raise DerivativeMismatchError(f"grad_potential disagrees with finite differences by {err:.3e}")
    fd = _central_jacobian(lambda x: np.atleast_1d(system.constraints(x)), q, step)
    J = system.constraint_jacobian(q)
    err = np.max(np.abs(fd - J))
    if err > tol * max(1.0, np.max(np.abs(fd))):
        raise DerivativeMismatchError(f"constraint_jacobian disagrees with finite differences by {err:.3e}")
    # second difference along w: g(q+tw) - 2 g(q) + g(q-tw) = t^2 grad^2 g(w, w)
    t = 1e-3
    g0 = np.atleast_1d(system.constraints(q))
    fd2 = (np.atleast_1d(system.constraints(q + t * w)) - 2 * g0 + np.atleast_1d(system.constraints(q - t * w))) / t**2
    hw = np.atleast_1d(system.constraint_hessian_form(q, w))
    err = np.max(np.abs(fd2 - hw))
    if err > tol * max(1.0, np.max(np.abs(fd2))):
        raise DerivativeMismatchError(f"constraint_hessian_form disagrees with finite differences by {err:.3e}")


def quadratic_defect(system, q, w):
    """``g(q+w) - g(q) - grad g(q)^T w - 1/2 grad^2 g(w, w)``; zero for quadratic g."""
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    return (
        np.atleast_1d(system.constraints(q + w))
        - np.atleast_1d(system.constraints(q))
        - system.constraint_jacobian(q).T @ w
        - 0.5 * np.atleast_1d(system.constraint_hessian_form(q, w))
    )
