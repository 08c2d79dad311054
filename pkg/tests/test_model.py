import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_hbvm.bench import simple_pendulum, tethered_satellites
from constrained_hbvm.errors import DerivativeMismatchError, RegularityError, ShapeMismatchError
from constrained_hbvm.model import (
    ConstrainedHamiltonianSystem,
    State,
    check_consistency,
    constraint_acceleration,
    exact_lambda,
    hamiltonian,
    quadratic_defect,
    validate_derivatives,
    vector_field,
)


def _pendulum(**overrides):
    kw = dict(
        m=2,
        nu=1,
        mass_matrix=np.eye(2),
        potential=lambda q: -q[1],
        grad_potential=lambda q: np.array([0.0, -1.0]),
        constraints=lambda q: np.array([q @ q - 1.0]),
        constraint_jacobian=lambda q: 2.0 * q[:, None],
        constraint_hessian_form=lambda q, w: np.array([2.0 * w @ w]),
    )
    kw.update(overrides)
    return ConstrainedHamiltonianSystem(**kw)


def test_state_validation():
    st_ = State([1, 2], [3, 4], 0.5)
    assert st_.q.dtype == float and st_.t == 0.5
    with pytest.raises(ShapeMismatchError):
        State([1, 2], [3])
    with pytest.raises(ValueError):
        State([np.nan, 0], [0, 0])


def test_system_shape_checks():
    with pytest.raises(ShapeMismatchError):
        _pendulum(nu=3)
    with pytest.raises(ShapeMismatchError):
        _pendulum(mass_matrix=np.eye(3))


def test_pendulum_energy_and_lambda():
    sys_ = _pendulum()
    s0 = State([0.0, -1.0], [1.0, 0.0])
    assert hamiltonian(sys_, s0) == pytest.approx(-0.5)
    # 4 lambda = 2|p|^2 + 2 q.grad U = 2 + 2
    np.testing.assert_allclose(exact_lambda(sys_, s0), [1.0])
    rep = check_consistency(sys_, s0)
    assert rep.consistent and rep.g_residual == 0.0 and rep.hidden_residual == 0.0


def test_inconsistent_state_detected():
    rep = check_consistency(_pendulum(), State([0.0, -1.1], [1.0, 0.1]))
    assert not rep.consistent
    assert rep.g_residual == pytest.approx(0.21)


def test_vector_field_with_exact_multiplier():
    sys_ = _pendulum()
    qdot, pdot = vector_field(sys_, [0.0, -1.0], [1.0, 0.0])
    np.testing.assert_allclose(qdot, [1.0, 0.0])
    # gravity (0,-1) minus tension 2 q lambda = (0, 2)
    np.testing.assert_allclose(pdot, [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-3, 3))
def test_exact_lambda_keeps_acceleration_zero(theta, omega):
    sys_ = _pendulum()
    q = np.array([np.sin(theta), -np.cos(theta)])
    p = omega * np.array([np.cos(theta), np.sin(theta)])
    lam = exact_lambda(sys_, State(q, p))
    assert np.max(np.abs(constraint_acceleration(sys_, q, p, lam))) < 1e-12
    # closed form: lambda = (omega^2 + cos theta) / 2
    assert lam[0] == pytest.approx((omega**2 + np.cos(theta)) / 2, abs=1e-12)


def test_nonidentity_mass_matrix():
    M = np.diag([2.0, 0.5])
    sys_ = _pendulum(mass_matrix=M)
    np.testing.assert_allclose(sys_.mass_inverse, np.diag([0.5, 2.0]))
    # kinetic 1/2 * 4 * 0.5 = 1, potential U = -q_2 = 1
    assert sys_.hamiltonian([0.0, -1.0], [2.0, 0.0]) == pytest.approx(0.0)


def test_singular_gram_raises_regularity():
    with pytest.raises(RegularityError):
        exact_lambda(_pendulum(), State([0.0, 0.0], [1.0, 0.0]))


def test_validate_derivatives_accepts_correct():
    validate_derivatives(_pendulum(), np.array([0.3, -0.8]))
    validate_derivatives(tethered_satellites().system, tethered_satellites().initial_state.q)


def test_validate_derivatives_catches_sign_error():
    bad = _pendulum(grad_potential=lambda q: np.array([0.0, 1.0]))
    with pytest.raises(DerivativeMismatchError, match="grad_potential"):
        validate_derivatives(bad, np.array([0.3, -0.8]))
    bad = _pendulum(constraint_jacobian=lambda q: q[:, None])
    with pytest.raises(DerivativeMismatchError, match="constraint_jacobian"):
        validate_derivatives(bad, np.array([0.3, -0.8]))
    bad = _pendulum(constraint_hessian_form=lambda q, w: np.array([w @ w]))
    with pytest.raises(DerivativeMismatchError, match="hessian"):
        validate_derivatives(bad, np.array([0.3, -0.8]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_quadratic_defect_vanishes(v):
    sys_ = simple_pendulum().system
    assert np.max(np.abs(quadratic_defect(sys_, v[:2], v[2:]))) < 1e-12


def test_many_evaluations_match_single():
    sys_ = _pendulum()
    Q = np.array([[0.0, -1.0], [0.6, 0.8]])
    np.testing.assert_allclose(sys_.grad_potential_many(Q), [[0, -1], [0, -1]])
    assert sys_.constraint_jacobian_many(Q).shape == (2, 2, 1)
    vec = simple_pendulum().system
    np.testing.assert_allclose(vec.constraint_jacobian_many(Q), sys_.constraint_jacobian_many(Q))
