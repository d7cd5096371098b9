"""Command-line entry point: ``meshlight run | simulate | yield | list``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import NoProgress, ScenarioError, SingularBarState, SolveFailure
from .objectives import make_grid, unit_excitation

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_NO_PROGRESS = 0, 2, 3, 4


def _resolve(path: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    from .reporting import bundled_scenario

    p = Path(path)
    if p.exists():
        return p
    if p.suffix == ".json" or len(p.parts) > 1:
        raise ScenarioError(f"no such scenario file: {path}")
    return bundled_scenario(path)


def _cmd_run(args) -> int:
    from .reporting import run_scenario, run_summary

    t0 = time.perf_counter()
    out = Path(args.out) if args.out else Path("out") / Path(args.scenario).stem
    bundle = run_scenario(_resolve(args.scenario), out, seed=args.seed, restarts=args.restarts,
                          progress=args.progress, fd_check=args.fd_check, svg=args.svg)
    summary = run_summary(bundle)
    print(f"scenario {summary['scenario']}: best cost {summary['best_cost']:.6g} "
          f"(restart {summary['best_restart']}, {summary['iterations']} iterations, "
          f"{time.perf_counter() - t0:.1f} s)", file=sys.stderr)
    for o in summary["outputs"]:
        print(f"  {o['port']}: {o['min_mag_db']:.3f} .. {o['max_mag_db']:.3f} dB", file=sys.stderr)
    if bundle.fd_report is not None:
        print(f"  FD check normwise error {bundle.fd_report.normwise_error:.3g}", file=sys.stderr)
    print(f"  exports in {out}", file=sys.stderr)
    return EXIT_OK


def _parse_grid(text: str):
    try:
        n, lo, hi = text.split(",")
        return make_grid(int(n), (float(lo), float(hi)))
    except ValueError as exc:
        raise ScenarioError(f"--grid expects 'n,lo,hi', got {text!r}", "--grid") from exc


def _cmd_simulate(args) -> int:
    from .reporting import load_meshstate, simulate_bundle, write_exports

    spec = load_meshstate(args.meshstate)
    grid = _parse_grid(args.grid)
    grid = make_grid(grid.n_grid, (grid.normalized[0], grid.normalized[-1]), spec.constants,
                     float(spec.length_v.flat[0]))
    if not 0 <= args.input < spec.n_ports:
        raise ScenarioError(f"input row {args.input} outside 0..{spec.n_ports - 1}", "--input")
    bundle = simulate_bundle(spec, grid, unit_excitation(spec.n_ports, args.input))
    out = Path(args.out) if args.out else Path("out") / "simulate"
    write_exports(bundle, out, svg=args.svg)
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_yield(args) -> int:
    from .nonideality import VariationModel, monte_carlo_yield
    from .reporting import band_predicate, load_meshstate, load_scenario, synthesize_scenario

    sc = load_scenario(_resolve(args.scenario))
    vm = sc.variation or VariationModel()
    if not sc.yield_checks:
        raise ScenarioError("scenario has no yield.checks entries", "yield.checks")
    pred = band_predicate(sc.yield_checks, sc.outputs)
    if args.state:
        spec = load_meshstate(args.state)
    else:
        spec = synthesize_scenario(sc, seed=args.seed).spec
    report = monte_carlo_yield(spec, vm, sc.grid, sc.excitation, sc.outputs, pred, args.samples,
                               seed=args.seed or 0)
    out = Path(args.out) if args.out else Path("out") / (Path(args.scenario).stem + "_yield")
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "yield.json")
    report.to_csv(out / "envelope.csv")
    print(f"yield {report.yield_fraction:.3f} over {report.n_samples} samples; wrote {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_list(args) -> int:
    from .reporting import list_bundled

    for name in list_bundled():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meshlight", description="Square-mesh photonic circuit synthesis.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="synthesize a scenario and export its results")
    run.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    run.add_argument("--out", help="output directory (default out/<scenario>)")
    run.add_argument("--seed", type=int)
    run.add_argument("--restarts", type=int)
    run.add_argument("--progress", action="store_true", help="stream JSON progress lines to stdout")
    run.add_argument("--fd-check", action="store_true", help="verify the final gradient by finite differences")
    run.add_argument("--svg", action="store_true", help="also write spectrum.svg")
    run.set_defaults(func=_cmd_run)

    sim = sub.add_parser("simulate", help="evaluate a saved mesh state without optimizing")
    sim.add_argument("meshstate")
    sim.add_argument("--grid", default="201,-1,1", help="n,lo,hi in normalized frequency")
    sim.add_argument("--input", type=int, default=1, help="input row on column 0")
    sim.add_argument("--out")
    sim.add_argument("--svg", action="store_true")
    sim.set_defaults(func=_cmd_simulate)

    yl = sub.add_parser("yield", help="Monte Carlo yield under process variation")
    yl.add_argument("scenario")
    yl.add_argument("--samples", type=int, default=100)
    yl.add_argument("--state", help="mesh state to perturb (default: synthesize first)")
    yl.add_argument("--seed", type=int)
    yl.add_argument("--out")
    yl.set_defaults(func=_cmd_yield)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=_cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NoProgress as exc:
        print(f"optimizer made no progress: {exc}", file=sys.stderr)
        return EXIT_NO_PROGRESS
    except (SingularBarState, SolveFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
