"""Command-line runner: JSON run specs in, CSV/JSON artifacts out.

``sdeopt run spec.json [--out DIR] [--seed N]`` solves one benchmark problem
and writes three artifacts into the output directory:

- ``convergence.csv``  per-iteration ``iteration, J, J_stderr, grad_norm,
  E_c`` (the squared-L2 control error, present only when the problem has a
  reference control) and ``wall_ms``;
- ``control.csv``      final control values per grid node, ``t, u_1..u_k``
  plus ``u^a_1..u^a_k`` when a reference control exists;
- ``summary.json``     final objective and control error aggregated over
  repetitions, termination reason, mean per-iteration runtime, the seed,
  the validated spec echo and the library version.

``sdeopt compare a.json b.json ... [--out DIR]`` runs several specs that
share one problem and grid, writes each run's artifacts into a numbered
subdirectory, and produces ``compare.csv`` with one row per spec.

Repetitions rerun the solve with ``master_seed + repetition`` and are
aggregated in ``summary.json``; the CSV curves come from repetition 0.
Artifacts are reproducible byte for byte from the spec alone, except for
the wall-clock columns and runtime fields.

Exit status: 0 success, 2 spec/argument validation error, 3 solver
instability, 4 filesystem error.

Setting the environment variable ``SDEOPT_NUM_THREADS`` to a positive
integer caps the numerical backend's thread pools (it fills the usual
``*_NUM_THREADS`` variables before the numerical libraries are loaded;
variables already set explicitly win).
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

_THREAD_VAR = "SDEOPT_NUM_THREADS"


def _apply_thread_override():
    """Propagate the thread cap before any numerical library is imported."""
    raw = os.environ.get(_THREAD_VAR, "").strip()
    if raw.isdigit() and int(raw) > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, raw)


_apply_thread_override()


class SpecError(ValueError):
    """A run spec (or the combination of specs) failed validation."""


@dataclasses.dataclass(frozen=True)
class RunSpec:
    """One validated solver run.

    Mirrors the flat JSON spec format; ``load_spec`` fills defaults and
    rejects unknown or ill-typed fields.  ``schedule`` is either ``None``
    (constant rate) or ``{"start": a, "end": b}`` for a linear decay of the
    step size over ``max_iterations``.  ``horizon`` defaults to the
    problem's own horizon; ``problem_options`` is forwarded to the
    benchmark constructor (e.g. ``dim``/``seed`` for "lq").
    """

    problem: str
    problem_options: dict = dataclasses.field(default_factory=dict)
    method: str = "mal-gpro"
    horizon: Optional[float] = None
    steps: int = 100
    batch: int = 100
    rate: float = 1e-2
    schedule: Optional[dict] = None
    max_iterations: int = 500
    gradient_tolerance: float = 1e-4
    objective_stall_tolerance: float = 1e-8
    stall_window: int = 10
    master_seed: int = 0
    output_dir: str = "."
    repetitions: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)


_METHODS = ("mal-gpro", "ad-sgd")
_FIELDS = {f.name for f in dataclasses.fields(RunSpec)}


def _expect_int(data, name, minimum):
    value = data[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecError(f"field {name!r} must be an integer, got {value!r}")
    if value < minimum:
        raise SpecError(f"field {name!r} must be >= {minimum}, got {value}")
    return value


def _expect_number(data, name, positive=False):
    value = data[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"field {name!r} must be a number, got {value!r}")
    value = float(value)
    if positive and value <= 0:
        raise SpecError(f"field {name!r} must be positive, got {value}")
    if value < 0:
        raise SpecError(f"field {name!r} must be nonnegative, got {value}")
    return value


def make_spec(data):
    """Validate a flat dict of spec fields and fill the defaults."""
    if not isinstance(data, dict):
        raise SpecError("spec must be a flat JSON object")
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise SpecError("unknown spec fields: " + ", ".join(unknown))
    if "problem" not in data:
        raise SpecError("field 'problem' is required")

    merged = {}
    for field in dataclasses.fields(RunSpec):
        if field.default is not dataclasses.MISSING:
            merged[field.name] = field.default
        elif field.default_factory is not dataclasses.MISSING:
            merged[field.name] = field.default_factory()
    merged.update(data)

    problem = merged["problem"]
    if not isinstance(problem, str):
        raise SpecError(f"field 'problem' must be a string, got {problem!r}")
    from .benchmarks import REGISTRY
    if problem not in REGISTRY:
        raise SpecError(
            f"unknown problem id {problem!r}; known ids: "
            + ", ".join(REGISTRY))

    options = merged["problem_options"]
    if not isinstance(options, dict) or not all(
            isinstance(key, str) for key in options):
        raise SpecError("field 'problem_options' must be an object with "
                        "string keys")

    method = merged["method"]
    if method not in _METHODS:
        raise SpecError(f"field 'method' must be one of {_METHODS}, "
                        f"got {method!r}")

    if merged["horizon"] is not None:
        merged["horizon"] = _expect_number(merged, "horizon", positive=True)
    merged["steps"] = _expect_int(merged, "steps", minimum=1)
    merged["batch"] = _expect_int(merged, "batch", minimum=1)
    merged["rate"] = _expect_number(merged, "rate", positive=True)

    schedule = merged["schedule"]
    if schedule is not None:
        if (not isinstance(schedule, dict)
                or set(schedule) != {"start", "end"}):
            raise SpecError("field 'schedule' must be an object with "
                            "exactly the keys 'start' and 'end'")
        schedule = {"start": _expect_number(schedule, "start", positive=True),
                    "end": _expect_number(schedule, "end", positive=True)}
        merged["schedule"] = schedule

    merged["max_iterations"] = _expect_int(merged, "max_iterations", 0)
    merged["gradient_tolerance"] = _expect_number(merged,
                                                  "gradient_tolerance")
    merged["objective_stall_tolerance"] = _expect_number(
        merged, "objective_stall_tolerance")
    merged["stall_window"] = _expect_int(merged, "stall_window", minimum=1)
    merged["master_seed"] = _expect_int(merged, "master_seed", minimum=0)
    if not isinstance(merged["output_dir"], str):
        raise SpecError("field 'output_dir' must be a string")
    merged["repetitions"] = _expect_int(merged, "repetitions", minimum=1)
    return RunSpec(**merged)


def load_spec(path):
    """Read and validate one JSON spec file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return make_spec(data)
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _fmt(value):
    """Full-precision, round-trippable decimal for CSV cells."""
    return repr(float(value))


def _write_csv(path, header, rows):
    import csv
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _build_benchmark(spec):
    from .benchmarks import get_benchmark
    from .sde_core import ConfigurationError
    try:
        return get_benchmark(spec.problem, **spec.problem_options)
    except (TypeError, ValueError, ConfigurationError) as exc:
        raise SpecError(f"problem_options rejected by {spec.problem!r}: "
                        f"{exc}") from exc


def _final_objective(problem, grid, result, spec, rep):
    """Objective of the returned control on the first unused substream."""
    from .sde_core import sample_wiener, simulate_forward, evaluate_cost
    increments = sample_wiener(grid, problem.noise_dim,
                               problem.wiener_covariance, spec.batch,
                               spec.master_seed + rep,
                               stream=result.iterations)
    paths = simulate_forward(problem, result.control, increments, grid,
                             on_divergence="mask")
    value, stderr = evaluate_cost(problem, paths, result.control)
    return value, stderr


def _execute(spec, out_dir):
    """Run one spec, write its artifacts into ``out_dir``, return summary."""
    import numpy as np
    from . import __version__, adjoint_baseline, malgpro
    from .benchmarks import control_error
    from .sde_core import build_time_grid

    bench = _build_benchmark(spec)
    problem = bench.problem
    horizon = spec.horizon if spec.horizon is not None else problem.horizon
    grid = build_time_grid(horizon, spec.steps)
    reference = bench.analytical_control
    solver = (malgpro.solve if spec.method == "mal-gpro"
              else adjoint_baseline.adsgd_solve)
    schedule = (None if spec.schedule is None
                else (spec.schedule["start"], spec.schedule["end"]))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results, final_j, final_ec = [], [], []
    for rep in range(spec.repetitions):
        result = solver(
            problem, grid, batch=spec.batch, rate=spec.rate,
            rate_schedule=schedule, max_iterations=spec.max_iterations,
            gradient_tolerance=spec.gradient_tolerance,
            objective_stall_tolerance=spec.objective_stall_tolerance,
            stall_window=spec.stall_window,
            master_seed=spec.master_seed + rep,
            reference_control=reference)
        results.append(result)
        value, _ = _final_objective(problem, grid, result, spec, rep)
        final_j.append(value)
        if reference is not None:
            final_ec.append(control_error(result.control, reference, grid))

    first = results[0]
    header = ["iteration", "J", "J_stderr", "grad_norm"]
    if reference is not None:
        header.append("E_c")
    header.append("wall_ms")
    rows = []
    for i in range(first.iterations):
        row = [str(i), _fmt(first.objective_trace[i]),
               _fmt(first.objective_stderr_trace[i]),
               _fmt(first.gradient_norm_trace[i])]
        if reference is not None:
            row.append(_fmt(first.control_error_trace[i]))
        row.append(_fmt(first.wall_times[i] * 1e3))
        rows.append(row)
    _write_csv(out / "convergence.csv", header, rows)

    k = problem.control_dim
    header = ["t"] + [f"u_{c + 1}" for c in range(k)]
    values = first.control.values
    columns = [grid.nodes[:-1]] + [values[:, c] for c in range(k)]
    if reference is not None:
        header += [f"u^a_{c + 1}" for c in range(k)]
        ref_values = np.asarray(reference(grid.nodes[:-1]), dtype=float)
        if ref_values.ndim == 1:
            ref_values = ref_values[:, None]
        columns += [ref_values[:, c] for c in range(k)]
    _write_csv(out / "control.csv", header,
               [[_fmt(col[j]) for col in columns]
                for j in range(grid.steps)])

    walls = np.concatenate([r.wall_times for r in results])
    summary = {
        "spec": spec.to_dict(),
        "grid": {"horizon": grid.horizon, "steps": grid.steps,
                 "dt": grid.dt},
        "library_version": __version__,
        "master_seed": spec.master_seed,
        "repetitions": spec.repetitions,
        "iterations": first.iterations,
        "termination_reason": first.termination_reason,
        "mean_iteration_seconds": (float(walls.mean()) if walls.size
                                   else None),
        "final_objective": {
            "mean": float(np.mean(final_j)),
            "std": float(np.std(final_j)),
            "values": [float(v) for v in final_j],
        },
        "final_control_error": (None if reference is None else {
            "mean": float(np.mean(final_ec)),
            "std": float(np.std(final_ec)),
            "values": [float(v) for v in final_ec],
        }),
        "num_threads": os.environ.get(_THREAD_VAR),
        "problem_notes": bench.notes,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2)
        handle.write("\n")
    return summary


def run(spec, out_dir=None):
    """Execute one validated spec; returns the summary dict."""
    return _execute(spec, out_dir if out_dir is not None
                    else spec.output_dir)


def compare(specs, out_dir="."):
    """Run several specs sharing one problem; returns the table rows.

    Each spec's artifacts go into ``<out_dir>/<index>-<method>/``;
    ``compare.csv`` collects one row per spec.
    """
    if not specs:
        raise SpecError("compare needs at least one spec")
    head = specs[0]
    for other in specs[1:]:
        same = (other.problem == head.problem
                and other.problem_options == head.problem_options
                and other.steps == head.steps
                and other.horizon == head.horizon)
        if not same:
            raise SpecError(
                "compare requires one shared problem and grid; got "
                f"{head.problem!r} (steps={head.steps}) vs "
                f"{other.problem!r} (steps={other.steps})")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, spec in enumerate(specs):
        label = f"{index:02d}-{spec.method}"
        summary = _execute(spec, out / label)
        error = summary["final_control_error"]
        rows.append({
            "run": label,
            "method": spec.method,
            "final_E_c": "" if error is None else _fmt(error["mean"]),
            "final_J": _fmt(summary["final_objective"]["mean"]),
            "mean_iteration_seconds": (
                "" if summary["mean_iteration_seconds"] is None
                else _fmt(summary["mean_iteration_seconds"])),
            "iterations": str(summary["iterations"]),
        })
    header = ["run", "method", "final_E_c", "final_J",
              "mean_iteration_seconds", "iterations"]
    _write_csv(out / "compare.csv", header,
               [[row[name] for name in header] for row in rows])
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sdeopt",
        description="Run stochastic optimal control solvers from JSON "
                    "specs and write CSV/JSON artifacts.")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser(
        "run", help="run one spec and write its artifacts")
    run_cmd.add_argument("spec", help="path to a JSON run spec")
    run_cmd.add_argument("--out", default=None,
                         help="output directory (default: the spec's "
                              "output_dir)")
    run_cmd.add_argument("--seed", type=int, default=None,
                         help="override the spec's master_seed")

    cmp_cmd = commands.add_parser(
        "compare", help="run several specs on one problem and tabulate")
    cmp_cmd.add_argument("specs", nargs="+",
                         help="paths to JSON run specs sharing one problem")
    cmp_cmd.add_argument("--out", default=".",
                         help="output directory for the comparison")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = load_spec(args.spec)
            if args.seed is not None:
                if args.seed < 0:
                    raise SpecError("--seed must be nonnegative")
                spec = dataclasses.replace(spec, master_seed=args.seed)
            out_dir = args.out if args.out is not None else spec.output_dir
            summary = run(spec, out_dir=out_dir)
            error = summary["final_control_error"]
            line = (f"{spec.problem} [{spec.method}] "
                    f"iterations={summary['iterations']} "
                    f"({summary['termination_reason']}) "
                    f"J={summary['final_objective']['mean']:.6g}")
            if error is not None:
                line += f" E_c={error['mean']:.6g}"
            print(line)
            print(f"artifacts written to {Path(out_dir).resolve()}")
        else:
            specs = [load_spec(path) for path in args.specs]
            rows = compare(specs, out_dir=args.out)
            for row in rows:
                print(f"{row['run']}: J={row['final_J']}"
                      + (f" E_c={row['final_E_c']}" if row["final_E_c"]
                         else ""))
            print(f"comparison written to {Path(args.out).resolve()}")
        return 0
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # solver instability; classes imported lazily
        from .malgpro import NonFiniteGradientError, UnstableProblemError
        from .sde_core import DivergedPathError
        if isinstance(exc, (NonFiniteGradientError, UnstableProblemError,
                            DivergedPathError)):
            print(f"error: solver instability: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
