"""Benchmark problems: simple, modified and conical pendulum, and a system of
three tethered satellites.

All callables are module-level functions (or ``functools.partial`` of them)
so the systems pickle and can be shipped to worker processes. They accept
either a single configuration ``(m,)`` or a stack ``(n, m)``.
"""

from dataclasses import dataclass, field
from functools import partial

import numpy as np
import scipy.optimize

from .errors import InvalidConfigurationError
from .model import ConstrainedHamiltonianSystem, State, check_consistency, exact_lambda, validate_derivatives

CONSISTENCY_TOL = 1e-12


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    system: ConstrainedHamiltonianSystem
    initial_state: State
    default_horizon: float
    known_facts: dict = field(default_factory=dict)


# --- unit sphere/circle constraint g(q) = |q|^2 - 1 -------------------------


def _sphere_g(q):
    q = np.asarray(q)
    return np.sum(q * q, axis=-1)[..., None] - 1.0


def _sphere_jac(q):
    return 2.0 * np.asarray(q)[..., :, None]


def _sphere_hess(q, w):
    w = np.asarray(w)
    return 2.0 * np.sum(w * w, axis=-1)[..., None]


def _gravity_U(q, axis):
    # U = -e_axis^T q, so H = T + e_axis^T q
    return -np.asarray(q)[..., axis]


def _gravity_grad(q, axis):
    g = np.zeros_like(np.asarray(q, dtype=float))
    g[..., axis] = -1.0
    return g


def _check(problem):
    rep = check_consistency(problem.system, problem.initial_state, CONSISTENCY_TOL)
    if not rep.consistent:
        raise InvalidConfigurationError(
            f"{problem.name}: inconsistent initial state (g={rep.g_residual:.2e}, hidden={rep.hidden_residual:.2e})"
        )
    validate_derivatives(problem.system, problem.initial_state.q)
    return problem


def simple_pendulum():
    """Unit pendulum in the plane, ``H = |p|^2/2 + e_2^T q``."""
    system = ConstrainedHamiltonianSystem(
        m=2,
        nu=1,
        mass_matrix=np.eye(2),
        potential=partial(_gravity_U, axis=1),
        grad_potential=partial(_gravity_grad, axis=1),
        constraints=_sphere_g,
        constraint_jacobian=_sphere_jac,
        constraint_hessian_form=_sphere_hess,
        vectorized=True,
        name="simple-pendulum",
    )
    state = State([0.0, -1.0], [1.0, 0.0])
    return _check(
        BenchmarkProblem("simple-pendulum", system, state, 10.0, {"initial_energy": -0.5})
    )


def _coulomb_U(q, q_star):
    d = np.asarray(q) - q_star
    return -np.asarray(q)[..., 1] + 1.0 / np.sqrt(np.sum(d * d, axis=-1))


def _coulomb_grad(q, q_star):
    q = np.asarray(q, dtype=float)
    d = q - q_star
    r = np.sqrt(np.sum(d * d, axis=-1))[..., None]
    g = -d / r**3
    g[..., 1] -= 1.0
    return g


def modified_pendulum(q_star=(2.0, 0.0)):
    """Simple pendulum plus a Coulomb term, ``H = |p|^2/2 + e_2^T q - 1/|q - q*|``."""
    q_star = np.array(q_star, dtype=float)
    if q_star.shape != (2,) or not np.all(np.isfinite(q_star)):
        raise InvalidConfigurationError(f"q_star must be a finite 2-vector, got {q_star!r}")
    if abs(np.dot(q_star, q_star) - 1.0) < 1e-12:
        raise InvalidConfigurationError("q_star lies on the constraint circle; the potential is singular there")
    q_star.setflags(write=False)
    system = ConstrainedHamiltonianSystem(
        m=2,
        nu=1,
        mass_matrix=np.eye(2),
        potential=partial(_coulomb_U, q_star=q_star),
        grad_potential=partial(_coulomb_grad, q_star=q_star),
        constraints=_sphere_g,
        constraint_jacobian=_sphere_jac,
        constraint_hessian_form=_sphere_hess,
        vectorized=True,
        name="modified-pendulum",
    )
    state = State([0.0, -1.0], [1.0, 0.0])
    h0 = system.hamiltonian(state.q, state.p)
    return _check(
        BenchmarkProblem(
            "modified-pendulum", system, state, 20.0, {"q_star": q_star.tolist(), "initial_energy": float(h0)}
        )
    )


CONICAL_Z0 = np.sqrt(0.5)  # correctly rounded 1/sqrt(2)
CONICAL_PERIOD = 2.0**0.75 * np.pi


def conical_pendulum():
    """Spherical pendulum started on a horizontal circle at height ``-z0``."""
    z0 = CONICAL_Z0
    system = ConstrainedHamiltonianSystem(
        m=3,
        nu=1,
        mass_matrix=np.eye(3),
        potential=partial(_gravity_U, axis=2),
        grad_potential=partial(_gravity_grad, axis=2),
        constraints=_sphere_g,
        constraint_jacobian=_sphere_jac,
        constraint_hessian_form=_sphere_hess,
        vectorized=True,
        name="conical-pendulum",
    )
    state = State([z0, 0.0, -z0], [0.0, np.sqrt(z0), 0.0])
    facts = {
        "period": CONICAL_PERIOD,
        "constant_lambda": z0,
        "initial_energy": float(system.hamiltonian(state.q, state.p)),
    }
    return _check(BenchmarkProblem("conical-pendulum", system, state, CONICAL_PERIOD, facts))


def conical_exact(t):
    """Closed-form conical pendulum trajectory ``(q(t), p(t))``."""
    z0 = CONICAL_Z0
    w = 2.0 * np.pi / CONICAL_PERIOD
    v = np.sqrt(z0)
    q = np.array([z0 * np.cos(w * t), z0 * np.sin(w * t), -z0])
    p = np.array([-v * np.sin(w * t), v * np.cos(w * t), 0.0])
    return q, p


# --- tethered satellites ----------------------------------------------------

_PAIRS = ((0, 1), (1, 2), (0, 2))


def _bodies(q):
    q = np.asarray(q, dtype=float)
    return q.reshape(q.shape[:-1] + (3, 3))


def _tether_U(q):
    r = np.linalg.norm(_bodies(q), axis=-1)
    return np.sum(1.0 / r + np.cos(r), axis=-1)


def _tether_grad(q):
    x = _bodies(q)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    g = -x / r**3 - np.sin(r) * x / r
    return g.reshape(np.shape(q))


def _tether_g(q):
    x = _bodies(q)
    out = [np.sum((x[..., i, :] - x[..., j, :]) ** 2, axis=-1) - 1.0 for i, j in _PAIRS]
    return np.stack(out, axis=-1)


def _tether_jac(q):
    x = _bodies(q)
    J = np.zeros(x.shape[:-2] + (3, 3, 3))
    for a, (i, j) in enumerate(_PAIRS):
        d = 2.0 * (x[..., i, :] - x[..., j, :])
        J[..., i, :, a] = d
        J[..., j, :, a] = -d
    return J.reshape(x.shape[:-2] + (9, 3))


def _tether_hess(q, w):
    y = _bodies(w)
    out = [2.0 * np.sum((y[..., i, :] - y[..., j, :]) ** 2, axis=-1) for i, j in _PAIRS]
    return np.stack(out, axis=-1)


def _tether_positions(z0):
    return np.array([0.0, 0.5, z0, 0.0, -0.5, z0, 0.0, 0.0, z0 - np.sqrt(3.0) / 2.0])


def tethered_satellites(z0=20.0):
    """Three unit-mass satellites joined by unit-length tethers.

    ``U(q) = sum_i 1/|q_i| + cos|q_i|``; the third satellite starts with
    momentum ``(v0, 0, 0)`` where ``v0 > 0`` makes ``H(q0, p0) = 0``.
    """
    system = ConstrainedHamiltonianSystem(
        m=9,
        nu=3,
        mass_matrix=np.eye(9),
        potential=_tether_U,
        grad_potential=_tether_grad,
        constraints=_tether_g,
        constraint_jacobian=_tether_jac,
        constraint_hessian_form=_tether_hess,
        vectorized=True,
        name="tethered-satellites",
    )
    q0 = _tether_positions(z0)

    def energy(v):
        p = np.zeros(9)
        p[6] = v
        return system.hamiltonian(q0, p)

    if not energy(1e-300) < 0.0 < energy(10.0):
        raise InvalidConfigurationError(f"no v0 in (0, 10] gives zero energy for z0={z0}")
    v0 = scipy.optimize.bisect(energy, 0.0, 10.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    p0 = np.zeros(9)
    p0[6] = v0
    state = State(q0, p0)
    facts = {"v0": float(v0), "initial_energy": float(system.hamiltonian(q0, p0))}
    return _check(BenchmarkProblem("tethered-satellites", system, state, 1000.0, facts))


PROBLEMS = {
    "simple-pendulum": simple_pendulum,
    "modified-pendulum": modified_pendulum,
    "conical-pendulum": conical_pendulum,
    "tethered-satellites": tethered_satellites,
}


def get_problem(name, **kwargs):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise InvalidConfigurationError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None
    return factory(**kwargs)


def known_lambda(problem):
    """Exact multiplier at the initial state."""
    return exact_lambda(problem.system, problem.initial_state)
