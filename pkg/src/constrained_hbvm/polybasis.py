"""Orthonormal shifted Legendre basis on [0, 1], Gauss-Legendre rules and the
HBVM tableau matrices built from them.

The basis is ``P_j(x) = sqrt(2j+1) L_j(2x-1)`` where ``L_j`` is the classical
Legendre polynomial, so that ``int_0^1 P_i P_j dx = delta_ij``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegreeOutOfRangeError, InvalidConfigurationError, NumericalFailureError

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100


def xi(i):
    """Coefficient ``1 / (2 sqrt|4 i^2 - 1|)`` of the integration matrix."""
    return 1.0 / (2.0 * np.sqrt(abs(4.0 * i * i - 1.0)))


def _legendre_table(n, x):
    """Rows ``P_0(x) .. P_n(x)`` stacked along axis 0, by three-term recurrence."""
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    out = np.empty((n + 1,) + x.shape)
    out[0] = 1.0
    if n == 0:
        return out
    # classical recurrence on L_j, rescaled at the end
    out[1] = t
    for j in range(1, n):
        out[j + 1] = ((2 * j + 1) * t * out[j] - j * out[j - 1]) / (j + 1)
    scale = np.sqrt(2.0 * np.arange(n + 1) + 1.0)
    return out * scale.reshape((-1,) + (1,) * x.ndim)


class LegendreBasis:
    """Shifted orthonormal Legendre polynomials up to ``max_degree``."""

    def __init__(self, max_degree):
        if int(max_degree) != max_degree or max_degree < 0:
            raise InvalidConfigurationError(f"max_degree must be a non-negative integer, got {max_degree!r}")
        self.max_degree = int(max_degree)

    def __repr__(self):
        return f"LegendreBasis(max_degree={self.max_degree})"

    def _check(self, j):
        if j < 0 or j > self.max_degree:
            raise DegreeOutOfRangeError(f"degree {j} outside [0, {self.max_degree}]")

    def eval(self, j, x):
        """Value of ``P_j`` at ``x`` (scalar or array)."""
        self._check(j)
        return _legendre_table(j, x)[j]

    def eval_all(self, x, n=None):
        """Matrix with entry ``(i, j) = P_j(x_i)`` for ``j = 0..n-1``."""
        n = self.max_degree + 1 if n is None else n
        self._check(n - 1)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return _legendre_table(n, x)[:n].T.copy()

    def integral(self, j, x):
        """``int_0^x P_j(tau) dtau`` via the antiderivative identity.

        For ``j >= 1`` this is ``xi_{j+1} P_{j+1}(x) - xi_j P_{j-1}(x)``; for
        ``j = 0`` it is ``xi_0 P_0(x) + xi_1 P_1(x) = x``.
        """
        self._check(j)
        tab = _legendre_table(j + 1, x)
        if j == 0:
            return xi(0) * tab[0] + xi(1) * tab[1]
        return xi(j + 1) * tab[j + 1] - xi(j) * tab[j - 1]

    def integral_all(self, x, n=None):
        """Matrix with entry ``(i, j) = int_0^{x_i} P_j``, ``j = 0..n-1``."""
        n = self.max_degree + 1 if n is None else n
        self._check(n - 1)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tab = _legendre_table(n, x)
        out = np.empty((x.size, n))
        out[:, 0] = xi(0) * tab[0] + xi(1) * tab[1]
        for j in range(1, n):
            out[:, j] = xi(j + 1) * tab[j + 1] - xi(j) * tab[j - 1]
        return out


def eval_legendre(j, x, max_degree=None):
    """Evaluate ``P_j(x)``; ``max_degree`` defaults to ``j``."""
    return LegendreBasis(j if max_degree is None else max_degree).eval(j, x)


def integral_legendre(j, x, max_degree=None):
    """Evaluate ``int_0^x P_j``; ``max_degree`` defaults to ``j``."""
    return LegendreBasis(j if max_degree is None else max_degree).integral(j, x)


@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre rule on [0, 1] (nodes ascending, weights summing to 1)."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self):
        return self.nodes.size

    def integrate(self, f):
        """Apply the rule to a callable vectorized over its argument."""
        return np.dot(self.weights, f(self.nodes))


def gauss_rule(n):
    """Gauss-Legendre nodes and weights on [0, 1] with ``n`` points.

    Nodes are refined by Newton's method on ``L_n`` starting from Chebyshev
    points; weights follow the Christoffel formula
    ``w_j = 1 / sum_{l<n} P_l(c_j)^2``.
    """
    if int(n) != n or n < 1:
        raise InvalidConfigurationError(f"number of nodes must be a positive integer, got {n!r}")
    n = int(n)
    k = np.arange(1, n + 1)
    t = np.cos((2 * k - 1) * np.pi / (2 * n))
    for _ in range(NEWTON_MAX_ITER):
        lm1, l0 = np.ones_like(t), t
        for j in range(1, n):
            lm1, l0 = l0, ((2 * j + 1) * t * l0 - j * lm1) / (j + 1)
        dl = n * (t * l0 - lm1) / (t * t - 1.0)
        dt = l0 / dl
        t = t - dt
        if np.max(np.abs(dt)) <= NEWTON_TOL:
            break
    else:
        raise NumericalFailureError(f"Newton refinement of Gauss nodes did not converge for n={n}")
    t = np.sort(t)
    t = 0.5 * (t - t[::-1])
    nodes = 0.5 * (t + 1.0)
    tab = _legendre_table(n - 1, nodes)
    weights = 1.0 / np.sum(tab * tab, axis=0)
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussRule(nodes, weights)


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def integration_matrix(s):
    """The ``s x s`` matrix ``X_s`` with ``I_s = P_s X_s`` at the Gauss nodes."""
    X = np.zeros((s, s))
    X[0, 0] = xi(0)
    for j in range(1, s):
        X[j, j - 1] = xi(j)
        X[j - 1, j] = -xi(j)
    return X


@dataclass(frozen=True)
class HbvmTableau:
    """Matrices of an HBVM(k, s) method.

    ``P_s[i, j] = P_j(c_i)`` and ``I_s[i, j] = int_0^{c_i} P_j`` on the
    s-point stage grid; the ``*_hat`` counterparts live on the k-point
    quadrature grid. ``PtO = P_s^T diag(b)`` and ``PtO_hat`` are cached
    because every iteration applies them.
    """

    s: int
    k: int
    stage_rule: GaussRule
    quad_rule: GaussRule
    P_s: np.ndarray
    I_s: np.ndarray
    P_hat: np.ndarray
    I_hat: np.ndarray
    X_s: np.ndarray
    PtO: np.ndarray = field(repr=False)
    PtO_hat: np.ndarray = field(repr=False)
    butcher: np.ndarray = field(repr=False)
    end_values: np.ndarray = field(repr=False)

    @property
    def Omega(self):
        return self.stage_rule.weights

    @property
    def Omega_hat(self):
        return self.quad_rule.weights

    @property
    def c(self):
        return self.stage_rule.nodes

    @property
    def c_hat(self):
        return self.quad_rule.nodes


def build_tableau(s, k=None):
    """Assemble the HBVM(k, s) tableau (``k`` defaults to ``s``)."""
    k = s if k is None else k
    if int(s) != s or s < 1:
        raise InvalidConfigurationError(f"s must be a positive integer, got {s!r}")
    if int(k) != k or k < s:
        raise InvalidConfigurationError(f"need k >= s, got k={k!r}, s={s!r}")
    s, k = int(s), int(k)
    basis = LegendreBasis(s)
    stage = gauss_rule(s)
    quad = stage if k == s else gauss_rule(k)
    P_s = basis.eval_all(stage.nodes, s)
    I_s = basis.integral_all(stage.nodes, s)
    P_hat = basis.eval_all(quad.nodes, s)
    I_hat = basis.integral_all(quad.nodes, s)
    PtO = P_s.T * stage.weights
    PtO_hat = P_hat.T * quad.weights
    return HbvmTableau(
        s=s,
        k=k,
        stage_rule=stage,
        quad_rule=quad,
        P_s=_frozen(P_s),
        I_s=_frozen(I_s),
        P_hat=_frozen(P_hat),
        I_hat=_frozen(I_hat),
        X_s=_frozen(integration_matrix(s)),
        PtO=_frozen(PtO),
        PtO_hat=_frozen(PtO_hat),
        butcher=_frozen(I_s @ PtO),
        # P_j(1) = sqrt(2j+1)
        end_values=_frozen(np.sqrt(2.0 * np.arange(s) + 1.0)),
    )


def butcher_matrix(tableau):
    """Butcher matrix ``A = I_s P_s^T Omega`` of the s-stage Gauss method."""
    return tableau.I_s @ (tableau.P_s.T * tableau.Omega)


def lagrange_end_weights(tableau):
    """Values ``l_i(1)`` of the Lagrange cardinal polynomials on the nodes.

    Uses ``sum_i l_i(1) v_i = sum_{j<s} P_j(1) sum_i b_i P_j(c_i) v_i``.
    """
    return tableau.end_values @ tableau.PtO
