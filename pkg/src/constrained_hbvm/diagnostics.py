"""Error metrics, reference trajectories and empirical convergence rates."""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, HbvmError, InvalidConfigurationError
from .hbvm import propagate
from .model import _exact_lambda
from .polybasis import build_tableau

ROUNDOFF = "***"
EPS = np.finfo(float).eps
REFERENCE_K = 16
REFERENCE_S = 8
REFERENCE_REFINEMENT = 8
METRIC_NAMES = ("e_y", "e_lambda", "e_hid", "e_g", "e_H")
END_METRIC_NAMES = ("e_y_end", "e_lambda_end", "e_hid_end")
RATE_METRICS = ("e_y", "e_lambda", "e_hid", "e_H")


@dataclass(frozen=True)
class ErrorMetrics:
    """Max-norm errors over all steps; the ``*_end`` fields hold the same
    quantities at the final time only."""

    e_y: float
    e_lambda: float
    e_hid: float
    e_g: float
    e_H: float
    e_y_end: float = 0.0
    e_lambda_end: float = 0.0
    e_hid_end: float = 0.0

    def __post_init__(self):
        for name in METRIC_NAMES + END_METRIC_NAMES:
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")

    def as_dict(self, include_end=True):
        names = METRIC_NAMES + (END_METRIC_NAMES if include_end else ())
        return {name: getattr(self, name) for name in names}


@dataclass
class ReferenceTrajectory:
    """States of a high-accuracy run at every multiple of ``h``."""

    h: float
    q: np.ndarray
    p: np.ndarray
    k: int
    s: int

    @property
    def times(self):
        return self.h * np.arange(self.q.shape[0])

    def indices(self, times, rtol=1e-9):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.rint(times / self.h).astype(int)
        if np.any(np.abs(idx * self.h - times) > rtol * max(1.0, np.max(np.abs(times), initial=0.0))):
            raise GridMismatchError("requested times are not multiples of the reference step")
        if np.any(idx < 0) or np.any(idx >= self.q.shape[0]):
            raise GridMismatchError("requested times fall outside the reference interval")
        return idx

    def at(self, times):
        """``(q, p)`` arrays at ``times`` (each must be a step multiple)."""
        idx = self.indices(times)
        return self.q[idx], self.p[idx]


def reference_solution(
    system,
    state0,
    t_end,
    grid,
    *,
    k=REFERENCE_K,
    s=REFERENCE_S,
    refinement=REFERENCE_REFINEMENT,
    config=None,
):
    """High-accuracy trajectory on ``[0, t_end]`` resolving every point of ``grid``.

    Runs HBVM(k, s) with step ``h_min / refinement``, ``h_min`` being the
    smallest spacing of ``grid``; the step is adjusted so that ``t_end`` is
    an exact multiple. Grid points must be multiples of the reference step.
    """
    grid = np.unique(np.asarray(grid, dtype=float))
    if t_end < 0 or (grid.size and (grid[0] < 0 or grid[-1] > t_end * (1 + 1e-12))):
        raise GridMismatchError("grid must lie within [0, t_end]")
    if t_end == 0:
        return ReferenceTrajectory(1.0, state0.q[None, :].copy(), state0.p[None, :].copy(), k, s)
    spacing = np.diff(np.concatenate([[0.0], grid]))
    spacing = spacing[spacing > 0]
    h_min = spacing.min() if spacing.size else t_end
    n_ref = int(math.ceil(t_end / (h_min / refinement) - 1e-9))
    h_ref = t_end / n_ref
    try:
        traj = propagate(system, state0, build_tableau(s, k), h_ref, n_ref, config)
    except HbvmError as exc:
        raise HbvmError(f"reference solution failed: {exc}") from exc
    ref = ReferenceTrajectory(h_ref, traj.q, traj.p, k, s)
    ref.indices(grid)
    return ref


def compute_metrics(system, trajectory, reference, lambda_series=None):
    """Max-norm errors of a trajectory against reference states.

    ``reference`` is either a ``ReferenceTrajectory`` or a pair ``(q_ref,
    p_ref)`` aligned with ``trajectory.q`` (including the initial row).
    ``lambda_series`` defaults to the per-step end-point multipliers.
    """
    if isinstance(reference, ReferenceTrajectory):
        q_ref, p_ref = reference.at(trajectory.times - trajectory.times[0])
    else:
        q_ref, p_ref = (np.asarray(a, dtype=float) for a in reference)
    if q_ref.shape != trajectory.q.shape or p_ref.shape != trajectory.p.shape:
        raise GridMismatchError(
            f"reference shape {q_ref.shape} does not match trajectory shape {trajectory.q.shape}"
        )
    lam = trajectory.lambda_bar if lambda_series is None else np.asarray(lambda_series, dtype=float)
    if lam.shape[0] != trajectory.n_steps:
        raise GridMismatchError("lambda series length differs from the number of steps")
    dy = np.maximum(np.max(np.abs(trajectory.q - q_ref), axis=1), np.max(np.abs(trajectory.p - p_ref), axis=1))[1:]
    lam_ref = np.array([_exact_lambda(system, q, p) for q, p in zip(q_ref[1:], p_ref[1:])]).reshape(lam.shape)
    dlam = np.max(np.abs(lam - lam_ref), axis=1) if lam.size else np.zeros(0)
    hid = trajectory.hidden_residual

    def last(a):
        return float(a[-1]) if a.size else 0.0

    return ErrorMetrics(
        e_y=float(np.max(dy, initial=0.0)),
        e_lambda=float(np.max(dlam, initial=0.0)),
        e_hid=float(np.max(hid, initial=0.0)),
        e_g=float(np.max(trajectory.g_residual, initial=0.0)),
        e_H=float(np.max(np.abs(trajectory.energy - trajectory.initial_energy), initial=0.0)),
        e_y_end=last(dy),
        e_lambda_end=last(dlam),
        e_hid_end=last(hid),
    )


def convergence_rates(h, errors, floor=None):
    """Observed orders ``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)``.

    The first entry is ``None``. A rate whose errors are missing is
    ``None``; one where either error is below ``floor`` is ``ROUNDOFF``.
    """
    rates = [None]
    for i in range(1, len(h)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 is None or e1 is None:
            rates.append(None)
        elif floor is not None and (e0 < floor or e1 < floor):
            rates.append(ROUNDOFF)
        elif e0 <= 0 or e1 <= 0:
            rates.append(ROUNDOFF)
        else:
            rates.append(math.log(e0 / e1) / math.log(h[i - 1] / h[i]))
    return rates


def roundoff_floor(scale=1.0, factor=50.0):
    return factor * EPS * scale


@dataclass
class ConvergenceRow:
    i: int
    h: float
    metrics: ErrorMetrics | None
    rates: dict = field(default_factory=dict)
    mean_iterations: float | None = None
    elapsed: float | None = None
    error: str | None = None


@dataclass
class ConvergenceTable:
    problem: str
    k: int
    s: int
    t_end: float
    rows: list

    def metric(self, name):
        return [None if r.metrics is None else getattr(r.metrics, name) for r in self.rows]

    def rate(self, name):
        return [r.rates.get(name) for r in self.rows]


def _run_row(system, state0, k, s, h, n_steps, config):
    import time

    t0 = time.perf_counter()
    traj = propagate(system, state0, build_tableau(s, k), h, n_steps, config)
    return traj, time.perf_counter() - t0


def _steps(t_end, h):
    n = int(round(t_end / h))
    if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise GridMismatchError(f"t_end={t_end!r} is not a multiple of h={h!r}")
    return n


def convergence_study(
    system,
    state0,
    k,
    s,
    h_schedule,
    t_end,
    *,
    indices=None,
    reference=None,
    config=None,
    reference_kwargs=None,
    floor=None,
    jobs=1,
    problem="",
):
    """Run HBVM(k, s) for each step in ``h_schedule`` and tabulate errors.

    ``h_schedule`` must be strictly decreasing with at least two entries, each
    dividing ``t_end``. A reference trajectory is computed unless supplied.
    Failed runs become rows with ``metrics=None`` and an error message.
    """
    h_schedule = [float(h) for h in h_schedule]
    if len(h_schedule) < 2:
        raise InvalidConfigurationError("a convergence study needs at least two timesteps")
    if any(b >= a for a, b in zip(h_schedule, h_schedule[1:])):
        raise InvalidConfigurationError("timesteps must be strictly decreasing")
    indices = list(range(len(h_schedule))) if indices is None else list(indices)
    steps = [_steps(t_end, h) for h in h_schedule]
    if reference is None:
        grid = h_schedule[-1] * np.arange(steps[-1] + 1)
        reference = reference_solution(system, state0, t_end, grid, config=config, **(reference_kwargs or {}))
    floor = roundoff_floor(max(1.0, abs(system.hamiltonian(state0.q, state0.p)))) if floor is None else floor

    args = [(system, state0, k, s, h, n, config) for h, n in zip(h_schedule, steps)]
    outcomes = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_row, *a) for a in args]
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except HbvmError as exc:
                    outcomes.append(exc)
    else:
        for a in args:
            try:
                outcomes.append(_run_row(*a))
            except HbvmError as exc:
                outcomes.append(exc)

    rows = []
    for i, h, out in zip(indices, h_schedule, outcomes):
        if isinstance(out, Exception):
            step = getattr(out, "step_index", None)
            rows.append(ConvergenceRow(i, h, None, error=f"{type(out).__name__} at step {step}: {out}"))
            continue
        traj, elapsed = out
        rows.append(
            ConvergenceRow(i, h, compute_metrics(system, traj, reference), mean_iterations=traj.mean_iterations,
                           elapsed=elapsed)
        )
    for name in RATE_METRICS + END_METRIC_NAMES:
        errs = [None if r.metrics is None else getattr(r.metrics, name) for r in rows]
        for row, rate in zip(rows, convergence_rates(h_schedule, errs, floor)):
            row.rates[name] = rate
    return ConvergenceTable(problem or system.name, k, s, float(t_end), rows)


def dyadic_schedule(i_min, i_max, base_h=1.0):
    """Steps ``base_h * 2^-i`` for ``i = i_min..i_max``."""
    if i_max <= i_min:
        raise InvalidConfigurationError("dyadic schedule needs i_max > i_min")
    idx = list(range(i_min, i_max + 1))
    return idx, [base_h * 2.0**-i for i in idx]
