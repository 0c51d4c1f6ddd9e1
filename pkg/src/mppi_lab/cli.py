"""Command-line entry point ``mppi-lab``.

Settings are resolved as registry defaults, then ``--config`` file, then
flags.  Exit codes: 0 success, 1 criterion failure, 2 usage error or
unknown scenario, 3 numeric or oracle error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from mppi_lab.acceptance import AcceptanceContext, groups, run_acceptance, select
from mppi_lab.artifacts import write_json
from mppi_lab.errors import ContractViolation, MppiLabError, UnknownScenarioError
from mppi_lab.experiments import cmd_bias_sweep, cmd_compare, cmd_pdf_curve, cmd_solve
from mppi_lab.scenarios import ScenarioSpec, get_scenario, scenario_names

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("solve", "bias-sweep", "pdf-curve", "compare", "accept")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mppi-lab",
        description="Deterministic MPPI experiments with reference oracles.",
        epilog=f"scenarios: {', '.join(scenario_names())}",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("scenario", nargs="?", help="registered scenario name (not used by accept)")
    p.add_argument("--config", type=Path, help="scenario config file ([scenario] name = ...)")
    p.add_argument("--samples", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--shrink-factor", type=float)
    p.add_argument("--lambda0", type=float)
    p.add_argument("--sigma0", help="per-step noise variance, or 'auto' for lambda0 / R")
    p.add_argument("--seed", type=int)
    p.add_argument("--init-control", type=_floats)
    p.add_argument("--beta-list", type=_floats)
    p.add_argument("--mode", choices=("exact", "sampled"))
    p.add_argument("--out-dir", type=Path, default=Path("mppi_out"))
    p.add_argument("--only", help=f"accept: comma-separated groups or keys ({', '.join(groups())})")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_spec(args: argparse.Namespace) -> ScenarioSpec:
    if args.config is not None:
        spec = ScenarioSpec.from_text(args.config.read_text())
        if args.scenario and args.scenario != spec.name:
            raise ContractViolation(f"config is for {spec.name!r} but scenario {args.scenario!r} was given")
    elif args.scenario:
        spec = get_scenario(args.scenario)
    else:
        raise ContractViolation(f"{args.command} needs a scenario; choose from {', '.join(scenario_names())}")
    return spec.merged(
        solver__samples=args.samples,
        solver__iterations=args.iterations,
        solver__shrink_factor=args.shrink_factor,
        solver__lambda0=args.lambda0,
        solver__sigma0=args.sigma0,
        solver__seed=args.seed,
        solver__init_control=args.init_control,
        sweep__beta_list=args.beta_list,
        sweep__mode=args.mode,
    )


def _accept(args: argparse.Namespace) -> int:
    ctx = AcceptanceContext(workers=args.workers)
    if args.config is not None or args.scenario:
        spec = resolve_spec(args)
        ctx.specs[spec.name] = spec
    try:
        select(args.only)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    report = run_acceptance(args.only, ctx)
    path = write_json(args.out_dir / "acceptance.json", report.to_dict())
    n_fail = sum(not r.passed for r in report.results)
    print(f"{len(report.results) - n_fail}/{len(report.results)} criteria passed; report: {path}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _run(args: argparse.Namespace) -> int:
    if args.command == "accept":
        return _accept(args)
    spec = resolve_spec(args)
    out = args.out_dir
    if args.command == "solve":
        res = cmd_solve(spec, out, args.workers)
        h = res.report.history[-1]
        err = "" if res.errors is None else f" error={res.errors[-1]:.3e}"
        print(f"{spec.name}: U={h.control.tolist()} value={res.report.value:.10g}{err}")
    elif args.command == "bias-sweep":
        res = cmd_bias_sweep(spec, out, args.workers)
        for label, fit in (("control", res.control_fit), ("value", res.value_fit)):
            print(f"{label} slope: " + ("n/a" if fit is None else f"{fit.slope:.4f} (rms {fit.residual:.3g})"))
    elif args.command == "pdf-curve":
        res = cmd_pdf_curve(spec, out)
        print(f"wrote {len(res.curves)} density curves to {out}")
    elif args.command == "compare":
        res = cmd_compare(spec, out, args.workers)
        print(json.dumps(res.checks, indent=2))
        if not all(c["passed"] for c in res.checks.values()):
            return EXIT_FAIL
    print(f"outputs: {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except UnknownScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MppiLabError, ArithmeticError) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
