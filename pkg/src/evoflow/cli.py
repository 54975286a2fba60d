"""Command-line interface: run scenarios, sweep parameters, export and plot.

Exit codes: 0 success, 2 validation or usage failure (every violated
assumption check is named), 3 integration failure. A run writes
``<prefix>_trajectory.csv`` (17 significant digits, round-trip exact for
doubles) and ``<prefix>_summary.json`` into the output directory, which is
``--output-dir``, the scenario's own setting, ``$EVOFLOW_OUTPUT_DIR``, or
the working directory, in that order. ``--plot`` additionally renders the
standard figures next to the CSV.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .environment import BestResponseEnvironment, OutMigrationEnvironment
from .errors import (
    ConfigurationError,
    EvoflowError,
    IntegrationError,
    UsageError,
    ValidationFailure,
)
from .model import MatrixGame
from .scenarios import (
    Scenario,
    builtin_names,
    builtin_scenario,
    load_scenario,
    scenario_digest,
    scenario_from_dict,
    scenario_to_dict,
)
from .solver import (
    Trajectory,
    check_trajectory_invariants,
    detect_convergence,
    integrate,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INTEGRATION = 3
OUTPUT_DIR_ENV = "EVOFLOW_OUTPUT_DIR"

CONVERGENCE_EPS = 1e-4
CONVERGENCE_WINDOW = 50.0


# ---------------------------------------------------------------------------
# Documents and overrides
# ---------------------------------------------------------------------------

def _resolve_document(spec: str) -> dict:
    """Scenario document for ``builtin:NAME`` or a JSON file path."""
    if spec.startswith("builtin:"):
        return scenario_to_dict(builtin_scenario(spec[len("builtin:"):]))
    path = Path(spec)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"malformed scenario document {path} at line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}") from exc


_SEGMENT = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)$")


def _apply_override(doc: dict, path: str, value) -> None:
    """Assign ``value`` to an existing scalar field addressed by ``path``.

    Paths are dotted keys with optional list indexers, e.g.
    ``game.payoff[0][1]`` or ``integrator.t_end``.
    """
    node = doc
    steps = []
    for chunk in path.split("."):
        m = _SEGMENT.match(chunk)
        if not m:
            raise UsageError(f"cannot parse path segment {chunk!r} in {path!r}")
        steps.append(m.group(1))
        steps.extend(int(i) for i in re.findall(r"\[(\d+)\]", m.group(2)))
    try:
        for step in steps[:-1]:
            node = node[step]
        old = node[steps[-1]]
    except (KeyError, IndexError, TypeError):
        raise UsageError(f"unknown field path {path!r}") from None
    if isinstance(old, (list, dict)):
        raise UsageError(f"path {path!r} addresses a non-scalar field")
    node[steps[-1]] = value


def _parse_sweep_spec(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise UsageError(f"sweep spec {spec!r} must look like path=v1,v2,...")
    path, _, values = spec.partition("=")
    path = path.strip()
    if not path:
        raise UsageError(f"sweep spec {spec!r} has an empty path")
    parsed = []
    for raw in values.split(","):
        raw = raw.strip()
        if not raw:
            continue
        try:
            parsed.append(json.loads(raw))
        except json.JSONDecodeError:
            parsed.append(raw)
    return path, parsed


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Header: t, y_<action>..., eta_<community>..., x_<action>_<community>...,
    plus phi_<from>_<to>... when the response matrix is part of the state."""
    n, na, nh = traj.xs.shape
    header = ["t"]
    header += [f"y_{i}" for i in range(na)]
    header += [f"eta_{h}" for h in range(nh)]
    header += [f"x_{i}_{h}" for i in range(na) for h in range(nh)]
    if traj.phis is not None:
        header += [f"phi_{h}_{k}" for h in range(nh) for k in range(nh)]
    y = traj.y
    eta = traj.eta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for s in range(n):
            row = [_fmt(traj.times[s])]
            row += [_fmt(v) for v in y[s]]
            row += [_fmt(v) for v in eta[s]]
            row += [_fmt(v) for v in traj.xs[s].ravel()]
            if traj.phis is not None:
                row += [_fmt(v) for v in traj.phis[s].ravel()]
            fh.write(",".join(row) + "\n")


def _verdict_dict(v) -> dict:
    return {
        "status": v.status,
        "terminal": np.asarray(v.terminal).tolist(),
        "max_variation": float(v.max_variation),
        "period": None if v.period is None else float(v.period),
    }


def build_run_summary(doc: dict, scenario: Scenario, traj: Trajectory,
                      wall_seconds: float) -> dict:
    span = float(traj.times[-1] - traj.times[0])
    window = min(CONVERGENCE_WINDOW, span / 2.0)
    conv = detect_convergence(traj, window, CONVERGENCE_EPS)
    terminal = traj.xs[-1]
    eq = analysis.equilibrium_report(terminal, scenario.game, tol=1e-6)
    summary = {
        "digest": scenario_digest(doc),
        "t_end": float(traj.times[-1]),
        "samples": traj.n_samples,
        "wall_clock_seconds": wall_seconds,
        "convergence": {
            "y": _verdict_dict(conv.y),
            "eta": _verdict_dict(conv.eta),
            "x": _verdict_dict(conv.x),
        },
        "equilibrium": {
            "is_restricted_nash": eq.is_restricted_nash,
            "support": list(eq.support),
            "max_reward_gap_on_support": eq.max_reward_gap_on_support,
            "balance_residual": eq.balance_residual,
            "excluded_communities": eq.excluded_communities,
        },
        "events": traj.event_counts(),
        "ess": None,
        "ideal_free": None,
    }
    game = scenario.game
    if isinstance(game, MatrixGame) and game.n_actions == 2:
        res = analysis.ess_2x2(game.payoff)
        block = {"kind": res.kind}
        if res.interior is not None:
            block["interior"] = res.interior.tolist()
            block["terminal_gap"] = float(
                np.abs(traj.y[-1] - res.interior).max())
        summary["ess"] = block
    env = scenario.environment
    if isinstance(env, BestResponseEnvironment):
        ifd = analysis.ifd_check(traj.eta[-1], env.alpha, env.kappa, tol=1e-2)
        summary["ideal_free"] = {
            "is_ideal_free": ifd.is_ideal_free,
            "payoff_spread": ifd.payoff_spread,
            "capacities_sum_to_one": ifd.capacities_sum_to_one,
            "deviation_from_capacity": ifd.deviation_from_capacity,
        }
    return summary


def _resolve_outdir(args_outdir, scenario: Scenario) -> Path:
    if args_outdir:
        return Path(args_outdir)
    if scenario.output.dir:
        return Path(scenario.output.dir)
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


def _report_validation_failure(exc: ValidationFailure) -> None:
    print("validation failed:", file=sys.stderr)
    for item in exc.report.failures():
        print(f"  assumption violated [{item.name}]: {item.detail}",
              file=sys.stderr)
    for warning in exc.report.warnings:
        print(f"  warning: {warning}", file=sys.stderr)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _apply_flag_overrides(doc: dict, args) -> None:
    integ = doc.setdefault("integrator", {})
    if args.t_end is not None:
        integ["t_end"] = args.t_end
    if args.dt is not None:
        integ["dt"] = args.dt
    if args.method is not None:
        integ["method"] = args.method
    if args.record_every is not None:
        integ["record_every"] = args.record_every


def _execute(doc: dict, outdir: Path | None, check_invariants: bool,
             plot: bool) -> tuple[int, dict | None]:
    """Run one scenario document; returns (exit code, summary or None)."""
    try:
        scenario = scenario_from_dict(doc)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION, None
    outdir = outdir if outdir is not None else _resolve_outdir(None, scenario)
    t0 = time.perf_counter()
    try:
        traj = integrate(scenario)
    except ValidationFailure as exc:
        _report_validation_failure(exc)
        return EXIT_VALIDATION, None
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION, None
    wall = time.perf_counter() - t0

    outdir.mkdir(parents=True, exist_ok=True)
    prefix = scenario.output.prefix
    csv_path = outdir / f"{prefix}_trajectory.csv"
    write_trajectory_csv(traj, csv_path)
    summary = build_run_summary(doc, scenario, traj, wall)
    summary_path = outdir / f"{prefix}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    conv = summary["convergence"]
    print(f"wrote {csv_path} and {summary_path}")
    print(f"  y: {conv['y']['status']}  eta: {conv['eta']['status']}  "
          f"balance residual: {summary['equilibrium']['balance_residual']:.3g}  "
          f"wall: {wall:.2f}s")

    if plot:
        figures = _render_figures(scenario, traj, outdir, prefix)
        for p in figures:
            print(f"wrote {p}")

    if check_invariants:
        problems = check_trajectory_invariants(traj, scenario)
        if problems:
            for p in problems:
                print(f"invariant violated: {p}", file=sys.stderr)
            return 1, summary
        print("  trajectory invariants: ok")
    return EXIT_OK, summary


def _render_figures(scenario: Scenario, traj: Trajectory, outdir: Path,
                    prefix: str) -> list[Path]:
    from . import plotting  # deferred so headless runs never touch matplotlib

    ess = None
    game = scenario.game
    if isinstance(game, MatrixGame) and game.n_actions == 2:
        res = analysis.ess_2x2(game.payoff)
        ess = res.interior
    kappa_curves = None
    env = scenario.environment
    if isinstance(env, OutMigrationEnvironment):
        kappa_curves = np.array([env.capacity.at(t) for t in traj.times])
    return plotting.render_figures(traj.times, traj.y, traj.eta, traj.xs,
                                   outdir, prefix, ess=ess,
                                   kappa_curves=kappa_curves)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_case(payload: tuple) -> dict:
    """One sweep run in its own output directory; safe for process pools."""
    case_idx, doc, overrides, outdir_str = payload
    outdir = Path(outdir_str)
    row: dict = {"case": case_idx}
    row.update({path: value for path, value in overrides})
    try:
        scenario = scenario_from_dict(doc)
        traj = integrate(scenario)
    except (ConfigurationError, ValidationFailure):
        row["status"] = "validation_failed"
        return row
    except IntegrationError:
        row["status"] = "integration_failed"
        return row
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, outdir / f"{scenario.output.prefix}_trajectory.csv")
    summary = build_run_summary(doc, scenario, traj, 0.0)
    with open(outdir / f"{scenario.output.prefix}_summary.json", "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    row["status"] = "ok"
    for i, v in enumerate(traj.y[-1]):
        row[f"terminal_y_{i}"] = float(v)
    row["balance_residual"] = summary["equilibrium"]["balance_residual"]
    row["y_status"] = summary["convergence"]["y"]["status"]
    row["eta_status"] = summary["convergence"]["eta"]["status"]
    return row


def _run_sweep(doc: dict, specs: list[str], jobs: int, outdir: Path) -> int:
    parsed = [_parse_sweep_spec(s) for s in specs]
    paths = [p for p, _ in parsed]
    value_lists = [v for _, v in parsed]
    # validate the paths once up front so typos fail fast
    probe = copy.deepcopy(doc)
    for path, values in parsed:
        if values:
            _apply_override(probe, path, values[0])
        else:
            _apply_override(probe, path, 0)

    combos = list(itertools.product(*value_lists))
    payloads = []
    for idx, combo in enumerate(combos):
        case_doc = copy.deepcopy(doc)
        overrides = list(zip(paths, combo))
        for path, value in overrides:
            _apply_override(case_doc, path, value)
        payloads.append((idx, case_doc, overrides, str(outdir / f"sweep_{idx:03d}")))

    if jobs > 1 and payloads:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_case, payloads))
    else:
        rows = [_sweep_case(p) for p in payloads]

    outdir.mkdir(parents=True, exist_ok=True)
    table_path = outdir / "sweep_summary.csv"
    columns: list[str] = ["case"]
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    if not rows:
        columns = ["case"] + paths + ["status"]
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for col in columns:
                v = row.get(col, "")
                cells.append(_fmt(v) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")
    print(f"wrote {table_path} ({len(rows)} rows)")
    for row in rows:
        print("  " + "  ".join(f"{k}={row[k]}" for k in columns if k in row))
    if any(row.get("status") == "integration_failed" for row in rows):
        return EXIT_INTEGRATION
    if any(row.get("status") == "validation_failed" for row in rows):
        return EXIT_VALIDATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    doc = _resolve_document(args.scenario)
    _apply_flag_overrides(doc, args)
    if args.sweep:
        outdir = Path(args.output_dir) if args.output_dir else Path(
            os.environ.get(OUTPUT_DIR_ENV, "."))
        return _run_sweep(doc, args.sweep, args.jobs, outdir)
    outdir = Path(args.output_dir) if args.output_dir else None
    code, _ = _execute(doc, outdir, args.check_invariants, args.plot)
    return code


def _cmd_list_builtins(args) -> int:
    for name, desc in sorted(builtin_names().items()):
        print(f"builtin:{name}\t{desc}")
    return EXIT_OK


def _cmd_export(args) -> int:
    doc = _resolve_document(args.scenario)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from . import plotting

    outdir = Path(args.output_dir) if args.output_dir else Path(
        os.environ.get(OUTPUT_DIR_ENV, "."))
    paths = plotting.render_csv_figures(args.csv, outdir, prefix=args.prefix)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoflow",
        description="simulate population games on community networks with "
                    "migration under environmental feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate a scenario and write artifacts")
    run.add_argument("--scenario", required=True,
                     help="path to a scenario JSON or builtin:NAME")
    run.add_argument("--t-end", type=float, default=None)
    run.add_argument("--dt", type=float, default=None)
    run.add_argument("--method", choices=["rk4", "rk45"], default=None)
    run.add_argument("--output-dir", default=None)
    run.add_argument("--record-every", type=int, default=None)
    run.add_argument("--check-invariants", action="store_true",
                     help="verify trajectory invariants, nonzero exit on violation")
    run.add_argument("--plot", action="store_true",
                     help="render figures next to the CSV")
    run.add_argument("--sweep", action="append", default=[],
                     metavar="PATH=V1,V2,...",
                     help="sweep a scalar field; repeat for a product")
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel sweep workers")

    lsb = sub.add_parser("list-builtins", help="show built-in scenarios")
    lsb.set_defaults(func=_cmd_list_builtins)

    exp = sub.add_parser("export", help="write a scenario document")
    exp.add_argument("--scenario", required=True)
    exp.add_argument("--output", "-o", required=True)
    exp.set_defaults(func=_cmd_export)

    plot = sub.add_parser("plot", help="render figures from a trajectory CSV")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--output-dir", default=None)
    plot.add_argument("--prefix", default=None)
    plot.set_defaults(func=_cmd_plot)

    run.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvoflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
