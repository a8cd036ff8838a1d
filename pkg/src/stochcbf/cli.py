"""Command-line front end.

Exit codes: 0 success, 1 usage / IO / parse error, 2 bound not satisfied
(``run``) or a failed check (``verify``), 3 tainted trials under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core_types import ContractViolation, scenario_from_json, scenario_to_json
from .exit_bounds import bound_grid, grid_to_csv, scenario_bound
from .safety_filter import Infeasible, NoConvergence, SolverOptions
from .scenarios import PRESET_IDS, list_presets, preset
from .sim_harness import run_monte_carlo, summary_json, trajectory_csv
from .verify import VerifyTolerances, run_checks

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_ERROR", "EXIT_BOUND", "EXIT_TAINT"]

EXIT_OK, EXIT_ERROR, EXIT_BOUND, EXIT_TAINT = 0, 1, 2, 3

# default heatmap axes per preset: (lo, hi, n) for the first one or two coordinates
DEFAULT_GRIDS = {
    "affine_1d": [(0.0, 3.0, 301)],
    "pendulum_linear": [(-0.6, 0.6, 61), (-0.6, 0.6, 61)],
    "pendulum_poly": [(-0.6, 0.6, 61), (-0.6, 0.6, 61)],
    "pendulum_expquad": [(-0.6, 0.6, 61), (-0.6, 0.6, 61)],
    "integrator_hyperbola": [(-3.0, 3.0, 61), (-1.5, 1.5, 31)],
    "integrator_multi": [(-3.0, 3.0, 61), (-1.5, 1.5, 31)],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stochcbf", description="Stochastic CBF safety filters and exit-probability bounds.")
    p.add_argument("--version", action="version", version=f"stochcbf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(sp, fmt="json"):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--preset", help=f"one of: {', '.join(PRESET_IDS)}")
        g.add_argument("--scenario", metavar="FILE", help="scenario JSON file")
        sp.add_argument("--horizon", type=int, help="override the scenario horizon K")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default=fmt)

    r = sub.add_parser("run", help="Monte-Carlo trials of the filtered closed loop")
    scenario_args(r)
    r.add_argument("--trials", type=int, default=100)
    r.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed + i")
    r.add_argument("--solver-tol", type=float, default=SolverOptions.tol)
    r.add_argument("--multistart", type=int, default=SolverOptions.multistart_extra,
                   help="extra low-discrepancy starts for the multistart solver")
    r.add_argument("--fallback", choices=("error", "max-residual"), default="error")
    r.add_argument("--strict", action="store_true", help="exit 3 if any trial is tainted")
    r.add_argument("--max-records", type=int, default=None,
                   help="cap the number of trajectories written to trajectories.csv")

    b = sub.add_parser("bounds", help="print the exit-probability bound")
    scenario_args(b)

    gr = sub.add_parser("grid", help="bound heatmap as CSV")
    scenario_args(gr, "csv")
    gr.add_argument("--axis", nargs=3, action="append", metavar=("LO", "HI", "N"), type=float,
                    help="grid axis for the next state coordinate (repeat for 2D)")

    v = sub.add_parser("verify", help="run the invariant checks")
    v.add_argument("--fast", action="store_true", help="reduced sample sizes")
    v.add_argument("--seed", type=int, default=0)
    # test hook: overrides every tolerance so that checks must fail
    v.add_argument("--inject-tol", type=float, default=None, help=argparse.SUPPRESS)

    ls = sub.add_parser("list-scenarios", help="list preset ids")
    ls.add_argument("--export", metavar="DIR", help="also write every preset as <id>.json")
    return p


def _load_scenario(args):
    if args.scenario:
        try:
            text = Path(args.scenario).read_text()
        except OSError as err:
            raise UsageError(f"cannot read scenario file: {err}") from None
        try:
            sc = scenario_from_json(text)
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise UsageError(f"cannot parse scenario file: {err}") from None
    else:
        sc = preset(args.preset or "affine_1d").scenario
    if args.horizon is not None:
        if args.horizon < 0:
            raise UsageError("--horizon must be >= 0")
        sc = sc.replace(horizon=args.horizon)
    return sc


def _emit(args, name: str, text: str):
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / name).write_text(text)
        except OSError as err:
            raise UsageError(f"cannot write {out / name}: {err}") from None
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    sc = _load_scenario(args)
    opts = replace(SolverOptions(), tol=args.solver_tol, multistart_extra=args.multistart,
                   fallback="max_residual" if args.fallback == "max-residual" else "error")
    result, records = run_monte_carlo(sc, opts, args.trials, args.seed, keep_records=True)
    summary = summary_json(result) + "\n"
    if args.out:
        _emit(args, "summary.json", summary)
        _emit(args, "trajectories.csv", trajectory_csv(records, args.max_records))
    else:
        sys.stdout.write(summary)
    if args.strict and result.n_tainted > 0:
        return EXIT_TAINT
    return EXIT_OK if result.bound_satisfied else EXIT_BOUND


def cmd_bounds(args) -> int:
    sc = _load_scenario(args)
    rep = scenario_bound(sc)
    if args.format == "json":
        text = json.dumps({"scenario": sc.name, **rep.to_dict()}, indent=2, sort_keys=True) + "\n"
        _emit(args, "bounds.json", text)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "family", "horizon", "bound", "raw", "per_barrier_terms"])
        w.writerow([sc.name, rep.family, rep.horizon, repr(rep.bound), repr(rep.raw),
                    " ".join(repr(t) for t in rep.per_barrier_terms)])
        _emit(args, "bounds.csv", buf.getvalue())
    return EXIT_OK


def cmd_grid(args) -> int:
    sc = _load_scenario(args)
    if args.axis:
        axes = [(lo, hi, int(n)) for lo, hi, n in args.axis]
    else:
        axes = DEFAULT_GRIDS.get(sc.name)
        if axes is None:
            raise UsageError("--axis is required for scenario files")
    if any(n < 1 for _, _, n in axes):
        raise UsageError("grid axes need at least one point")
    coords, values = bound_grid(sc, axes)
    if args.format == "json":
        text = json.dumps({"scenario": sc.name, "horizon": sc.horizon,
                           "axes": [c.tolist() for c in coords],
                           "bound": np.where(np.isnan(values), None,
                                             np.minimum(values, 1.0)).tolist()},
                          indent=None) + "\n"
        _emit(args, "grid.json", text)
    else:
        _emit(args, "grid.csv", grid_to_csv(coords, values))
    return EXIT_OK


def cmd_verify(args) -> int:
    tol = VerifyTolerances()
    if args.inject_tol is not None:
        t = args.inject_tol
        tol = VerifyTolerances(n_sigma=t, solver_agree=t, identity_rel=t, audit=t)
    results = run_checks(fast=args.fast, tolerances=tol, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}" + (f"  [{r.detail}]" if r.detail else ""))
    n_fail = sum(not r.ok for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_BOUND


def cmd_list(args) -> int:
    for pid, ref in list_presets():
        print(f"{pid}\t{ref}")
        if args.export:
            args.out = args.export
            _emit(args, f"{pid}.json", scenario_to_json(preset(pid).scenario) + "\n")
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "bounds": cmd_bounds, "grid": cmd_grid, "verify": cmd_verify,
             "list-scenarios": cmd_list}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ContractViolation, ValueError) as err:
        print(f"stochcbf: error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (Infeasible, NoConvergence) as err:
        where = ""
        if hasattr(err, "step"):
            where = f" (seed {err.seed}, step {err.step}, state {err.state.tolist()})"
        print(f"stochcbf: filter failed{where}: {err}; try --fallback max-residual",
              file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
