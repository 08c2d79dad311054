"""HBVM(k, s) step for constrained Hamiltonian systems.

Unknowns of one step are the Fourier coefficients ``gamma`` (momentum),
``psi_hat`` (potential gradient, by k-point Gauss quadrature), ``zeta``
(constraint forces) and the stage multipliers ``lambda_i`` at the s Gauss
nodes. All block vectors are ``(s, m)`` or ``(s, nu)`` arrays.

The discrete problem is solved by the fixed-point iteration

    grad g^l  = grad g(e x q0 + h I_s x M^{-1} gamma^l)
    lambda^l  = multiplier solve with (grad g^l, psi_hat^l)
    zeta^l    = P_s^T Omega x I (grad g^l lambda^l)
    gamma^l+1 = P_s^T Omega x I [e x p0 + h I_s x I (psi_hat^l - zeta^l)]
    psi^l+1   = P_hat^T Omega_hat x I grad U(e x q0 + h I_hat x M^{-1} gamma^l)

started from ``gamma = psi_hat = 0``.
"""

from dataclasses import dataclass, field

import numpy as np

from .densela import lu_solve
from .errors import InvalidConfigurationError, StepFailureError
from .model import State

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule of the fixed-point iteration.

    The iteration stops when the max-norm increment of ``(gamma, psi_hat)``
    drops to ``stop_tol`` (default ``5 eps max(1, |p0|, |q0|)``), or when the
    increment has not reached a new minimum for ``stagnation_window``
    consecutive iterations. A stagnated step is accepted only if its best
    increment is within ``plateau_factor * stop_tol``; otherwise iteration
    continues up to ``max_iterations``.
    """

    stop_tol: float | None = None
    max_iterations: int = 100
    stagnation_window: int = 3
    plateau_factor: float = 1e3

    def __post_init__(self):
        if self.stop_tol is not None and not self.stop_tol > 0:
            raise InvalidConfigurationError("stop_tol must be positive")
        if self.max_iterations < 1:
            raise InvalidConfigurationError("max_iterations must be >= 1")
        if self.stagnation_window < 1:
            raise InvalidConfigurationError("stagnation_window must be >= 1")
        if not self.plateau_factor >= 1:
            raise InvalidConfigurationError("plateau_factor must be >= 1")

    def tolerance(self, q0, p0):
        if self.stop_tol is not None:
            return self.stop_tol
        return 5 * EPS * max(1.0, np.max(np.abs(p0)), np.max(np.abs(q0)))


@dataclass
class StageState:
    gamma: np.ndarray
    psi_hat: np.ndarray
    zeta: np.ndarray
    lambda_blocks: np.ndarray


@dataclass
class StepResult:
    q1: np.ndarray
    p1: np.ndarray
    lambda_bar: np.ndarray
    iterations: int
    converged: bool
    final_increment: float
    g_residual: float
    hidden_residual: float
    energy: float
    stagnated: bool = False
    stages: StageState | None = field(default=None, repr=False)


def stage_positions(q0, gamma, tableau, h, at_quad_nodes=False, mass_inverse=None):
    """Values ``u(c_i h) = q0 + h M^{-1} sum_j I[i, j] gamma_j``.

    Uses the stage nodes, or the quadrature nodes when ``at_quad_nodes``.
    ``mass_inverse`` defaults to the identity.
    """
    I = tableau.I_hat if at_quad_nodes else tableau.I_s
    incr = I @ np.asarray(gamma, dtype=float)
    if mass_inverse is not None:
        incr = incr @ mass_inverse
    return q0 + h * incr


def stage_velocities(p0, psi_hat, zeta, tableau, h):
    """Values ``v(c_i h) = p0 + h sum_j I_s[i, j] (psi_hat_j - zeta_j)``."""
    return p0 + h * (tableau.I_s @ (np.asarray(psi_hat, dtype=float) - zeta))


def _multipliers(system, p0, U, J, psi_hat, tableau, h):
    s, nu = tableau.s, system.nu
    Minv = system.mass_inverse
    MinvJ = np.einsum("mn,inb->imb", Minv, J)
    # block (i, j) = h a_ij grad g(u_i)^T M^{-1} grad g(u_j)
    gram = np.einsum("ima,jmb->iajb", J, MinvJ)
    mat = (h * gram * tableau.butcher[:, None, :, None]).reshape(s * nu, s * nu)
    w = p0 + h * (tableau.I_s @ psi_hat)
    rhs = np.einsum("imb,im->ib", MinvJ, w).reshape(s * nu)
    return lu_solve(mat, rhs).reshape(s, nu)


def solve_multipliers(system, q0, p0, gamma, psi_hat, tableau, h):
    """Stage multipliers enforcing ``grad g(u_i)^T M^{-1} v(c_i h) = 0``.

    Assembles the ``s nu x s nu`` matrix
    ``grad g~^T (h I_s P_s^T Omega x M^{-1}) grad g~`` at the stage positions
    defined by ``gamma`` and solves it by pivoted LU.
    """
    U = stage_positions(q0, gamma, tableau, h, mass_inverse=system.mass_inverse)
    J = system.constraint_jacobian_many(U)
    return _multipliers(system, np.asarray(p0, dtype=float), U, J, np.asarray(psi_hat, dtype=float), tableau, h)


def _evaluate(system, q0, p0, gamma, psi_hat, tableau, h):
    U = stage_positions(q0, gamma, tableau, h, mass_inverse=system.mass_inverse)
    J = system.constraint_jacobian_many(U)
    lam = _multipliers(system, p0, U, J, psi_hat, tableau, h)
    forces = np.einsum("imb,ib->im", J, lam)
    zeta = tableau.PtO @ forces
    return U, J, lam, zeta


def fixed_point_step(system, q0, p0, tableau, h, config=None, keep_stages=False):
    """Advance ``(q0, p0)`` by one HBVM(k, s) step of size ``h``.

    Raises ``StepFailureError`` when neither the tolerance nor an accepted
    round-off plateau is reached within ``config.max_iterations``.
    """
    config = config or SolverConfig()
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if h == 0:
        raise InvalidConfigurationError("timestep must be nonzero")
    s, m = tableau.s, system.m
    Minv = system.mass_inverse
    tol = config.tolerance(q0, p0)
    plateau = config.plateau_factor * tol

    gamma = np.zeros((s, m))
    psi = np.zeros((s, m))
    best = np.inf
    since_best = 0
    converged = stagnated = False
    increment = np.inf
    it = 0
    while it < config.max_iterations:
        it += 1
        _, _, _, zeta = _evaluate(system, q0, p0, gamma, psi, tableau, h)
        gamma_new = tableau.PtO @ stage_velocities(p0, psi, zeta, tableau, h)
        Q = stage_positions(q0, gamma, tableau, h, at_quad_nodes=True, mass_inverse=Minv)
        psi_new = tableau.PtO_hat @ system.grad_potential_many(Q)
        increment = max(np.max(np.abs(gamma_new - gamma)), np.max(np.abs(psi_new - psi)))
        gamma, psi = gamma_new, psi_new
        if not np.isfinite(increment):
            break
        if increment <= tol:
            converged = True
            break
        if increment < best:
            best, since_best = increment, 0
        else:
            since_best += 1
            if since_best >= config.stagnation_window and best <= plateau:
                stagnated = True
                break
    if not (converged or stagnated):
        raise StepFailureError(
            f"fixed-point iteration did not converge in {it} iterations (h={h:g}, increment={increment:.3e})",
            h=h,
            increment=float(increment),
            iterations=it,
        )

    # multipliers and constraint forces consistent with the final iterate
    _, _, lam, zeta = _evaluate(system, q0, p0, gamma, psi, tableau, h)
    q1 = q0 + h * (Minv @ gamma[0])
    p1 = p0 + h * (psi[0] - zeta[0])
    lambda_bar = tableau.end_values @ (tableau.PtO @ lam)
    g1 = np.atleast_1d(system.constraints(q1))
    hid = system.hidden_constraints(q1, p1)
    return StepResult(
        q1=q1,
        p1=p1,
        lambda_bar=lambda_bar,
        iterations=it,
        converged=converged,
        final_increment=float(increment),
        g_residual=float(np.max(np.abs(g1))),
        hidden_residual=float(np.max(np.abs(hid))),
        energy=float(system.hamiltonian(q1, p1)),
        stagnated=stagnated,
        stages=StageState(gamma, psi, zeta, lam) if keep_stages else None,
    )


@dataclass
class Trajectory:
    """Result of ``propagate``: states at ``t_0, t_0 + h, ...``.

    ``q`` and ``p`` have ``n_steps + 1`` rows (row 0 is the initial state);
    ``lambda_bar``, ``iterations``, ``g_residual``, ``hidden_residual`` and
    ``energy`` have one entry per step.
    """

    h: float
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    lambda_bar: np.ndarray
    iterations: np.ndarray
    g_residual: np.ndarray
    hidden_residual: np.ndarray
    energy: np.ndarray
    initial_energy: float

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def mean_iterations(self):
        return float(np.mean(self.iterations)) if self.iterations.size else 0.0

    @property
    def final_state(self):
        return State(self.q[-1], self.p[-1], self.times[-1])


def propagate(system, state0, tableau, h, n_steps, config=None, observers=()):
    """Apply ``fixed_point_step`` ``n_steps`` times from ``state0``.

    Each observer is called as ``observer(t_n, step_result)`` after step n.
    A ``StepFailureError`` is re-raised with ``step_index`` set.
    """
    if n_steps < 1:
        raise InvalidConfigurationError("n_steps must be >= 1")
    m, nu = system.m, system.nu
    q = np.empty((n_steps + 1, m))
    p = np.empty((n_steps + 1, m))
    lam = np.empty((n_steps, nu))
    iters = np.empty(n_steps, dtype=int)
    gres = np.empty(n_steps)
    hres = np.empty(n_steps)
    energy = np.empty(n_steps)
    q[0], p[0] = state0.q, state0.p
    times = state0.t + h * np.arange(n_steps + 1)
    for n in range(n_steps):
        try:
            res = fixed_point_step(system, q[n], p[n], tableau, h, config)
        except StepFailureError as exc:
            exc.step_index = n
            raise
        q[n + 1], p[n + 1] = res.q1, res.p1
        lam[n] = res.lambda_bar
        iters[n] = res.iterations
        gres[n] = res.g_residual
        hres[n] = res.hidden_residual
        energy[n] = res.energy
        for obs in observers:
            obs(times[n + 1], res)
    return Trajectory(
        h=h,
        times=times,
        q=q,
        p=p,
        lambda_bar=lam,
        iterations=iters,
        g_residual=gres,
        hidden_residual=hres,
        energy=energy,
        initial_energy=float(system.hamiltonian(state0.q, state0.p)),
    )
