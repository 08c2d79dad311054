"""Command line experiment runner.

    hbvm list
    hbvm version
    hbvm run --config exp.json [--problem NAME --k K --s S --h H --t-end T
                                --dyadic I0:I1 --base-h B --out DIR --jobs N]

A config is one JSON document::

    {"problem": "simple-pendulum", "problem_args": {},
     "k": 1, "s": 1,
     "schedule": {"kind": "dyadic", "i_min": 0, "i_max": 8, "base_h": 1.0},
     "t_end": 10.0, "outputs": "out",
     "reference": {"k": 16, "s": 8, "refinement": 8},
     "solver": {"max_iterations": 100}}

``base_h`` may be the string ``"period/5"`` for problems with a known period.
A fixed run uses ``{"kind": "fixed", "h": 0.1, "t_end": 1000}``. Command
line flags override file fields. Exit status is 0 on success, 1 on a
numerical failure and 2 on a configuration error.
"""

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import PROBLEMS, get_problem, known_lambda
from .diagnostics import convergence_study, dyadic_schedule, reference_solution
from .errors import HbvmError, InvalidConfigurationError, StepFailureError
from .hbvm import SolverConfig, propagate
from .model import exact_lambda
from .polybasis import build_tableau

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
DEFAULT_OUT = "hbvm-out"

TABLE_COLUMNS = (
    "i", "h",
    "e_y", "rate_y", "e_lambda", "rate_lambda", "e_hid", "rate_hid", "e_g", "e_H", "rate_H",
    "e_y_end", "rate_y_end", "e_lambda_end", "rate_lambda_end", "e_hid_end", "rate_hid_end",
    "mean_iterations", "status",
)
_RATE_COLUMNS = {
    "rate_y": "e_y", "rate_lambda": "e_lambda", "rate_hid": "e_hid", "rate_H": "e_H",
    "rate_y_end": "e_y_end", "rate_lambda_end": "e_lambda_end", "rate_hid_end": "e_hid_end",
}
NO_RATE = "---"

_TOP_KEYS = {"problem", "problem_args", "k", "s", "schedule", "t_end", "outputs", "reference", "solver"}


class ConfigError(InvalidConfigurationError):
    """A configuration problem, reported with the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    k: int
    s: int
    kind: str
    t_end: float | None = None
    i_min: int | None = None
    i_max: int | None = None
    base_h: float | str = 1.0
    h: float | None = None
    outputs: str = DEFAULT_OUT
    problem_args: dict = dataclasses.field(default_factory=dict)
    reference: dict = dataclasses.field(default_factory=dict)
    solver: dict = dataclasses.field(default_factory=dict)

    def echo(self):
        return dataclasses.asdict(self)


def fmt(x):
    """Shortest round-trip text for a float (at most 17 significant digits)."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


# --- configuration ----------------------------------------------------------


def _int(d, key, field):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(field, f"expected an integer, got {v!r}")
    return v


def _real(v, field):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(field, f"expected a finite number, got {v!r}")
    return float(v)


def load_config_text(text, source="<config>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(None, f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(None, f"{source}: top level must be a JSON object")
    return doc


def merge_overrides(doc, args):
    """Apply command line flags on top of a config document (a copy)."""
    doc = json.loads(json.dumps(doc))
    for key, attr in (("problem", "problem"), ("k", "k"), ("s", "s"), ("outputs", "out")):
        v = getattr(args, attr, None)
        if v is not None:
            doc[key] = v
    if getattr(args, "h", None) is not None and getattr(args, "dyadic", None) is not None:
        raise ConfigError("schedule", "--h and --dyadic are mutually exclusive")
    sched = doc.get("schedule") if isinstance(doc.get("schedule"), dict) else {}
    if getattr(args, "h", None) is not None:
        sched = {"kind": "fixed", "h": args.h}
    if getattr(args, "dyadic", None) is not None:
        try:
            i0, i1 = (int(x) for x in args.dyadic.split(":"))
        except ValueError:
            raise ConfigError("--dyadic", f"expected I0:I1, got {args.dyadic!r}") from None
        sched = {"kind": "dyadic", "i_min": i0, "i_max": i1, "base_h": sched.get("base_h", 1.0)}
    if getattr(args, "base_h", None) is not None:
        try:
            sched["base_h"] = float(args.base_h)
        except ValueError:
            sched["base_h"] = args.base_h
    if sched:
        doc["schedule"] = sched
    if getattr(args, "t_end", None) is not None:
        doc["t_end"] = args.t_end
        if isinstance(doc.get("schedule"), dict):
            doc["schedule"].pop("t_end", None)
    return doc


def parse_config(doc, default_out=None):
    """Validate a config document and return an ``ExperimentConfig``."""
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    if "problem" not in doc:
        raise ConfigError("problem", "missing")
    problem = doc["problem"]
    if problem not in PROBLEMS:
        raise ConfigError("problem", f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")
    k = _int(doc, "k", "k") if "k" in doc else None
    s = _int(doc, "s", "s") if "s" in doc else None
    if k is None and s is None:
        raise ConfigError("k", "missing")
    k = s if k is None else k
    s = 1 if s is None else s
    if not (k >= s >= 1):
        raise ConfigError("k", f"need k >= s >= 1, got k={k}, s={s}")

    sched = doc.get("schedule")
    if not isinstance(sched, dict) or not sched:
        raise ConfigError("schedule", "missing or empty")
    kind = sched.get("kind")
    fields = {}
    t_end = doc.get("t_end", sched.get("t_end"))
    if t_end is not None:
        t_end = _real(t_end, "t_end")
        if t_end <= 0:
            raise ConfigError("t_end", "must be positive")
    if kind == "dyadic":
        extra = set(sched) - {"kind", "i_min", "i_max", "base_h", "t_end"}
        if extra:
            raise ConfigError(f"schedule.{sorted(extra)[0]}", "unknown field")
        for key in ("i_min", "i_max"):
            if key not in sched:
                raise ConfigError(f"schedule.{key}", "missing")
            fields[key] = _int(sched, key, f"schedule.{key}")
        if fields["i_min"] < 0 or fields["i_max"] <= fields["i_min"]:
            raise ConfigError("schedule", "need 0 <= i_min < i_max")
        base = sched.get("base_h", 1.0)
        if base != "period/5":
            base = _real(base, "schedule.base_h")
            if base <= 0:
                raise ConfigError("schedule.base_h", "must be positive")
        fields["base_h"] = base
    elif kind == "fixed":
        extra = set(sched) - {"kind", "h", "t_end"}
        if extra:
            raise ConfigError(f"schedule.{sorted(extra)[0]}", "unknown field")
        if "h" not in sched:
            raise ConfigError("schedule.h", "missing")
        fields["h"] = _real(sched["h"], "schedule.h")
        if fields["h"] <= 0:
            raise ConfigError("schedule.h", "must be positive")
    else:
        raise ConfigError("schedule.kind", f"expected 'dyadic' or 'fixed', got {kind!r}")

    problem_args = doc.get("problem_args", {})
    if not isinstance(problem_args, dict):
        raise ConfigError("problem_args", "expected an object")
    reference = doc.get("reference", {})
    if not isinstance(reference, dict) or set(reference) - {"k", "s", "refinement"}:
        raise ConfigError("reference", "expected an object with keys among k, s, refinement")
    for key in reference:
        if _int(reference, key, f"reference.{key}") < 1:
            raise ConfigError(f"reference.{key}", "must be >= 1")
    solver = doc.get("solver", {})
    names = {f.name for f in dataclasses.fields(SolverConfig)}
    if not isinstance(solver, dict) or set(solver) - names:
        raise ConfigError("solver", f"expected an object with keys among {', '.join(sorted(names))}")
    try:
        SolverConfig(**solver)
    except (TypeError, InvalidConfigurationError) as exc:
        raise ConfigError("solver", str(exc)) from None

    outputs = doc.get("outputs", default_out or DEFAULT_OUT)
    if not isinstance(outputs, str) or not outputs:
        raise ConfigError("outputs", "expected a directory path")
    return ExperimentConfig(
        problem=problem, k=k, s=s, kind=kind, t_end=t_end, outputs=outputs,
        problem_args=problem_args, reference=reference, solver=solver, **fields,
    )


# --- serialization ----------------------------------------------------------


def table_records(table):
    """Rows of a ``ConvergenceTable`` as ordered dicts of CSV cell values."""
    records = []
    for row in table.rows:
        rec = {"i": row.i, "h": row.h}
        for col in TABLE_COLUMNS[2:-2]:
            if col in _RATE_COLUMNS:
                r = row.rates.get(_RATE_COLUMNS[col])
                rec[col] = NO_RATE if r is None else r
            else:
                rec[col] = None if row.metrics is None else getattr(row.metrics, col)
        rec["mean_iterations"] = row.mean_iterations
        rec["status"] = "ok" if row.error is None else "failed"
        records.append(rec)
    return records


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([c if isinstance(c, (str, int)) and not isinstance(c, bool) else fmt(c) for c in r])
    Path(path).write_text(buf.getvalue())


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")


def _stem(cfg):
    if cfg.kind == "dyadic":
        return f"{cfg.problem}_k{cfg.k}_s{cfg.s}_dyadic{cfg.i_min}-{cfg.i_max}"
    return f"{cfg.problem}_k{cfg.k}_s{cfg.s}_h{fmt(cfg.h)}"


# --- commands ---------------------------------------------------------------


def _resolve_t_end(cfg, problem):
    return problem.default_horizon if cfg.t_end is None else cfg.t_end


def run_dyadic(cfg, problem, out, jobs, log):
    base = cfg.base_h
    if base == "period/5":
        period = problem.known_facts.get("period")
        if period is None:
            raise ConfigError("schedule.base_h", f"{problem.name} has no known period")
        base = period / 5.0
    idx, hs = dyadic_schedule(cfg.i_min, cfg.i_max, base)
    t_end = _resolve_t_end(cfg, problem)
    for h in hs:
        n = round(t_end / h)
        if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
            raise ConfigError("t_end", f"{t_end!r} is not a multiple of h={h!r}")
    solver = SolverConfig(**cfg.solver)
    t0 = time.perf_counter()
    ref_kw = {"k": cfg.reference.get("k", 16), "s": cfg.reference.get("s", 8),
              "refinement": cfg.reference.get("refinement", 8)}
    grid = hs[-1] * np.arange(round(t_end / hs[-1]) + 1)
    reference = reference_solution(problem.system, problem.initial_state, t_end, grid, config=solver, **ref_kw)
    t_ref = time.perf_counter() - t0
    table = convergence_study(
        problem.system, problem.initial_state, cfg.k, cfg.s, hs, t_end,
        indices=idx, reference=reference, config=solver, jobs=jobs, problem=problem.name,
    )
    records = table_records(table)
    stem = _stem(cfg)
    write_csv(out / f"{stem}.csv", TABLE_COLUMNS, [[r[c] for c in TABLE_COLUMNS] for r in records])
    write_json(out / f"{stem}.json", {
        "config": cfg.echo(),
        "t_end": t_end,
        "reference": ref_kw | {"h": reference.h},
        "columns": list(TABLE_COLUMNS),
        "rows": records,
        "errors": {str(r.i): r.error for r in table.rows if r.error},
    })
    write_json(out / f"{stem}_timings.json", {
        "reference_seconds": t_ref,
        "rows": {str(r.i): r.elapsed for r in table.rows},
    })
    log(f"wrote {out / stem}.csv")
    failed = [r for r in table.rows if r.error]
    for r in failed:
        print(f"error: run failed at h={fmt(r.h)}: {r.error}", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


def run_fixed(cfg, problem, out, log):
    sys_ = problem.system
    t_end = _resolve_t_end(cfg, problem)
    n = round(t_end / cfg.h)
    if n < 1 or abs(n * cfg.h - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("t_end", f"{t_end!r} is not a multiple of h={cfg.h!r}")
    t0 = time.perf_counter()
    try:
        traj = propagate(sys_, problem.initial_state, build_tableau(cfg.s, cfg.k), cfg.h, n,
                         SolverConfig(**cfg.solver))
    except StepFailureError as exc:
        print(f"error: step failure at h={fmt(exc.h)}, step {exc.step_index}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    elapsed = time.perf_counter() - t0
    m, nu = sys_.m, sys_.nu
    header = (["t"] + [f"q{j + 1}" for j in range(m)] + [f"p{j + 1}" for j in range(m)]
              + ["H", "g_inf", "hidden"] + [f"lambda{j + 1}" for j in range(nu)] + ["iterations"])
    lam0 = exact_lambda(sys_, problem.initial_state)
    h0 = traj.initial_energy
    g0 = np.max(np.abs(np.atleast_1d(sys_.constraints(traj.q[0]))))
    hid0 = np.max(np.abs(sys_.hidden_constraints(traj.q[0], traj.p[0])))
    rows = [[traj.times[0], *traj.q[0], *traj.p[0], h0, g0, hid0, *lam0, 0]]
    for j in range(traj.n_steps):
        rows.append([traj.times[j + 1], *traj.q[j + 1], *traj.p[j + 1], traj.energy[j], traj.g_residual[j],
                     traj.hidden_residual[j], *traj.lambda_bar[j], int(traj.iterations[j])])
    stem = _stem(cfg) + "_series"
    write_csv(out / f"{stem}.csv", header, rows)
    write_json(out / f"{stem}.json", {
        "config": cfg.echo(),
        "t_end": t_end,
        "n_steps": traj.n_steps,
        "initial_energy": h0,
        "max_energy_drift": float(np.max(np.abs(traj.energy - h0))),
        "max_g_residual": float(np.max(traj.g_residual)),
        "max_hidden_residual": float(np.max(traj.hidden_residual)),
        "mean_iterations": traj.mean_iterations,
    })
    write_json(out / f"{stem}_timings.json", {"seconds": elapsed})
    log(f"wrote {out / stem}.csv")
    return EXIT_OK


def run(cfg, jobs=1, log=print):
    """Execute a validated config; returns the exit status."""
    try:
        problem = get_problem(cfg.problem, **cfg.problem_args)
    except TypeError as exc:
        raise ConfigError("problem_args", str(exc)) from None
    out = Path(cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "dyadic":
        return run_dyadic(cfg, problem, out, jobs, log)
    return run_fixed(cfg, problem, out, log)


def list_problems():
    """One line per benchmark problem, in a fixed order."""
    lines = []
    for name in PROBLEMS:
        pb = get_problem(name)
        lam = pb.known_facts.get("constant_lambda")
        lam = known_lambda(pb) if lam is None else np.atleast_1d(lam)
        lam_txt = fmt(lam[0]) if lam.size == 1 else "[" + ", ".join(fmt(x) for x in lam) + "]"
        parts = [name, f"m={pb.system.m}", f"ν={pb.system.nu}", f"horizon={fmt(pb.default_horizon)}",
                 f"H0={fmt(pb.system.hamiltonian(pb.initial_state.q, pb.initial_state.p))}"]
        if "period" in pb.known_facts:
            parts.append(f"period={fmt(pb.known_facts['period'])}")
        parts.append(f"λ = {lam_txt}")
        lines.append(" ".join(parts))
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(prog="hbvm", description="HBVM experiments on constrained Hamiltonian problems")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list benchmark problems")
    sub.add_parser("version", help="print the package version")
    r = sub.add_parser("run", help="run a propagation or a convergence study")
    r.add_argument("--config", help="JSON experiment file")
    r.add_argument("--problem")
    r.add_argument("--k", type=int)
    r.add_argument("--s", type=int)
    r.add_argument("--h", type=float, help="fixed timestep")
    r.add_argument("--t-end", type=float, dest="t_end")
    r.add_argument("--dyadic", metavar="I0:I1", help="timesteps base_h * 2^-i for i = I0..I1")
    r.add_argument("--base-h", dest="base_h", help="dyadic base step, a number or 'period/5'")
    r.add_argument("--out", help="output directory (default $HBVM_OUT or ./hbvm-out)")
    r.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel schedule rows")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "list":
        print(list_problems())
        return EXIT_OK

    try:
        doc = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
            doc = load_config_text(text, args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        cfg = parse_config(merge_overrides(doc, args), default_out=os.environ.get("HBVM_OUT"))
        return run(cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HbvmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
