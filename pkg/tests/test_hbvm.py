import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_hbvm.bench import CONICAL_Z0, conical_pendulum, modified_pendulum, simple_pendulum, tethered_satellites
from constrained_hbvm.errors import InvalidConfigurationError, StepFailureError
from constrained_hbvm.hbvm import SolverConfig, fixed_point_step, propagate, solve_multipliers
from constrained_hbvm.polybasis import build_tableau


def _oracle_step(system, q0, p0, tab, h):
    """Solve the discrete problem with a generic nonlinear solver."""
    s, m, nu = tab.s, system.m, system.nu
    Minv = system.mass_inverse

    def unpack(z):
        return z[: s * m].reshape(s, m), z[s * m:].reshape(s, nu)

    def parts(z):
        gamma, lam = unpack(z)
        Qhat = q0 + h * (tab.I_hat @ gamma) @ Minv
        psi = tab.PtO_hat @ np.array([system.grad_potential(q) for q in Qhat])
        U = q0 + h * (tab.I_s @ gamma) @ Minv
        J = np.array([system.constraint_jacobian(u) for u in U])
        zeta = tab.PtO @ np.einsum("imb,ib->im", J, lam)
        V = p0 + h * tab.I_s @ (psi - zeta)
        return gamma, psi, zeta, J, V

    def residual(z):
        gamma, psi, zeta, J, V = parts(z)
        r1 = gamma - tab.PtO @ V
        r2 = np.einsum("imb,im->ib", J, V @ Minv)
        return np.concatenate([r1.ravel(), r2.ravel()])

    z0 = np.concatenate([np.tile(p0, s), np.zeros(s * nu)])
    z, info, ier, msg = scipy.optimize.fsolve(residual, z0, xtol=1e-14, full_output=True)
    assert np.max(np.abs(residual(z))) < 1e-13, msg
    gamma, psi, zeta, _, _ = parts(z)
    return q0 + h * Minv @ gamma[0], p0 + h * (psi[0] - zeta[0])


@pytest.mark.parametrize(
    "factory,k,s,h",
    [
        (simple_pendulum, 1, 1, 0.3),
        (simple_pendulum, 3, 3, 0.5),
        (modified_pendulum, 3, 2, 0.25),
        (conical_pendulum, 2, 2, 0.4),
        (tethered_satellites, 4, 2, 0.1),
    ],
)
def test_step_matches_generic_solver(factory, k, s, h):
    pb = factory()
    tab = build_tableau(s, k)
    q0, p0 = pb.initial_state.q, pb.initial_state.p
    res = fixed_point_step(pb.system, q0, p0, tab, h)
    q1, p1 = _oracle_step(pb.system, q0, p0, tab, h)
    assert res.converged or res.stagnated
    np.testing.assert_allclose(res.q1, q1, atol=1e-12)
    np.testing.assert_allclose(res.p1, p1, atol=1e-12)


def test_midpoint_case_closed_form():
    # for s = k = 1 the stage velocity equals gamma and u = q0 + h/2 gamma
    pb = simple_pendulum()
    h = 0.2
    res = fixed_point_step(pb.system, pb.initial_state.q, pb.initial_state.p, build_tableau(1), h, keep_stages=True)
    gamma = res.stages.gamma[0]
    u = pb.initial_state.q + 0.5 * h * gamma
    assert abs(2 * u @ gamma) < 1e-14
    np.testing.assert_allclose(res.q1, pb.initial_state.q + h * gamma, atol=1e-15)


@pytest.mark.parametrize("s", [1, 2, 3, 4])
def test_step_conserves_constraint_and_quadratic_energy(s):
    pb = simple_pendulum()
    res = fixed_point_step(pb.system, pb.initial_state.q, pb.initial_state.p, build_tableau(s), 0.5)
    assert res.g_residual < 1e-14
    assert abs(res.energy + 0.5) < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-2, 2), st.integers(1, 3), st.floats(0.01, 0.3))
def test_step_keeps_constraint_from_any_consistent_state(theta, omega, s, h):
    pb = simple_pendulum()
    q = np.array([np.sin(theta), -np.cos(theta)])
    p = omega * np.array([np.cos(theta), np.sin(theta)])
    res = fixed_point_step(pb.system, q, p, build_tableau(s), h)
    assert res.g_residual < 1e-13
    assert abs(res.energy - pb.system.hamiltonian(q, p)) < 1e-13


@pytest.mark.parametrize("factory", [simple_pendulum, modified_pendulum, conical_pendulum, tethered_satellites])
def test_symmetry_forward_backward(factory):
    pb = factory()
    tab = build_tableau(2, 3)
    q0, p0 = pb.initial_state.q, pb.initial_state.p
    fwd = fixed_point_step(pb.system, q0, p0, tab, 0.05)
    back = fixed_point_step(pb.system, fwd.q1, fwd.p1, tab, -0.05)
    assert np.max(np.abs(back.q1 - q0)) < 1e-10
    assert np.max(np.abs(back.p1 - p0)) < 1e-10


@pytest.mark.parametrize("s", [1, 2, 3, 4])
def test_conical_stage_multipliers_are_constant(s):
    pb = conical_pendulum()
    res = fixed_point_step(pb.system, pb.initial_state.q, pb.initial_state.p, build_tableau(s), 0.3, keep_stages=True)
    np.testing.assert_allclose(res.stages.lambda_blocks, CONICAL_Z0, atol=1e-11)
    np.testing.assert_allclose(res.lambda_bar, CONICAL_Z0, atol=1e-11)


def test_solve_multipliers_matches_stage_state():
    pb = modified_pendulum()
    tab = build_tableau(2, 4)
    q0, p0 = pb.initial_state.q, pb.initial_state.p
    res = fixed_point_step(pb.system, q0, p0, tab, 0.25, keep_stages=True)
    lam = solve_multipliers(pb.system, q0, p0, res.stages.gamma, res.stages.psi_hat, tab, 0.25)
    np.testing.assert_allclose(lam, res.stages.lambda_blocks, atol=1e-14)


def test_zero_step_rejected():
    pb = simple_pendulum()
    with pytest.raises(InvalidConfigurationError):
        fixed_point_step(pb.system, pb.initial_state.q, pb.initial_state.p, build_tableau(1), 0.0)


def test_nonconvergence_reports_step():
    pb = simple_pendulum()
    cfg = SolverConfig(max_iterations=2)
    with pytest.raises(StepFailureError) as err:
        propagate(pb.system, pb.initial_state, build_tableau(1), 0.5, 3, cfg)
    assert err.value.step_index == 0
    assert err.value.h == 0.5
    assert err.value.iterations == 2


def test_solver_config_validation():
    for kw in ({"stop_tol": 0.0}, {"max_iterations": 0}, {"stagnation_window": 0}, {"plateau_factor": 0.5}):
        with pytest.raises(InvalidConfigurationError):
            SolverConfig(**kw)
    cfg = SolverConfig()
    eps = np.finfo(float).eps
    assert cfg.tolerance(np.array([0.5]), np.array([-3.0])) == pytest.approx(15 * eps)
    assert SolverConfig(stop_tol=1e-9).tolerance(np.zeros(1), np.zeros(1)) == 1e-9


def test_propagate_records_series_and_observers():
    pb = conical_pendulum()
    seen = []
    traj = propagate(pb.system, pb.initial_state, build_tableau(2), 0.25, 4, observers=[lambda t, r: seen.append(t)])
    assert traj.q.shape == (5, 3) and traj.lambda_bar.shape == (4, 1)
    np.testing.assert_allclose(seen, [0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(traj.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert traj.final_state.t == 1.0
    assert traj.mean_iterations > 0
    with pytest.raises(InvalidConfigurationError):
        propagate(pb.system, pb.initial_state, build_tableau(1), 0.1, 0)


def test_propagation_is_deterministic():
    pb = modified_pendulum()
    a = propagate(pb.system, pb.initial_state, build_tableau(1, 2), 0.125, 16)
    b = propagate(pb.system, pb.initial_state, build_tableau(1, 2), 0.125, 16)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.lambda_bar, b.lambda_bar)


def test_nonvectorized_system_gives_same_step():
    from dataclasses import replace

    pb = modified_pendulum()
    loose = replace(pb.system, vectorized=False)
    tab = build_tableau(2, 3)
    a = fixed_point_step(pb.system, pb.initial_state.q, pb.initial_state.p, tab, 0.2)
    b = fixed_point_step(loose, pb.initial_state.q, pb.initial_state.p, tab, 0.2)
    np.testing.assert_allclose(a.q1, b.q1, atol=1e-15)
