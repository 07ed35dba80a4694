"""Command line interface.

Subcommands:
    simulate      one radius, full pipeline
    sweep         radius list (regression across radii)
    calibrate-ns  state-cap calibration sweep
    converge      realization-count convergence study
    fit           re-fit from saved counter files, no simulation

A JSON config file (--config) mirrors ExperimentSpec; explicit flags
override config values.  Errors print a machine-readable JSON object on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from diskmc.domain import SimConfig
from diskmc.harness import (
    ExperimentSpec,
    convergence_study,
    refit_from_counters,
    run_experiment,
)

_CONFIG_FIELDS = ("side_length", "speed", "dt", "steps", "realizations",
                  "n_states", "base_seed")
_SPEC_FIELDS = ("radius_list", "ns_candidates", "realization_sweep",
                "output_dir", "workers", "burn_in", "chain_convention",
                "rare_event_tolerance", "max_failure_fraction")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--radius", type=float, action="append",
                        help="particle radius (repeatable for sweeps)")
    parser.add_argument("--realizations", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--dt", type=float)
    parser.add_argument("--ns", type=int, help="chain state cap N_s")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--burn-in", type=int, dest="burn_in",
                        help="sampling steps dropped before statistics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diskmc",
        description="Hard-disk gas simulator with a Markov-chain surrogate "
                    "for per-subdomain occupancy statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("simulate", "run one radius through the full pipeline"),
        ("sweep", "run a radius sweep and regress mean occupancy on radius"),
        ("calibrate-ns", "sweep the chain state cap and report stabilization"),
        ("converge", "study statistics vs number of realizations"),
        ("fit", "re-fit chain and densities from saved counters"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common_flags(p)
        if name == "calibrate-ns":
            p.add_argument("--ns-candidates", type=str,
                           help="comma-separated state caps, e.g. 8,9,10,11,12,13")
        if name == "converge":
            p.add_argument("--sweep-counts", type=str,
                           help="comma-separated realization counts")
        if name == "fit":
            p.add_argument("--counters", type=Path, nargs="+", required=True,
                           help="counter JSON files or directories holding "
                                "counters_R*.json")
    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    return doc


def _build_spec(args, doc: dict, *, single_radius: bool) -> ExperimentSpec:
    config_kwargs = {k: doc[k] for k in _CONFIG_FIELDS if k in doc}
    if args.realizations is not None:
        config_kwargs["realizations"] = args.realizations
    if args.steps is not None:
        config_kwargs["steps"] = args.steps
    if args.dt is not None:
        config_kwargs["dt"] = args.dt
    if args.ns is not None:
        config_kwargs["n_states"] = args.ns
    if args.seed is not None:
        config_kwargs["base_seed"] = args.seed

    if args.radius:
        radius_list = tuple(args.radius)
    elif "radius" in doc:
        radius_list = (float(doc["radius"]),)
    elif "radius_list" in doc:
        radius_list = tuple(doc["radius_list"])
    else:
        radius_list = ExperimentSpec.__dataclass_fields__["radius_list"].default
    if single_radius and len(radius_list) != 1:
        raise ValueError("this command takes exactly one --radius")

    config = SimConfig(radius=radius_list[0], **config_kwargs)

    spec_kwargs = {k: doc[k] for k in _SPEC_FIELDS if k in doc}
    spec_kwargs["radius_list"] = radius_list
    if args.workers is not None:
        spec_kwargs["workers"] = args.workers
    if args.out is not None:
        spec_kwargs["output_dir"] = args.out
    if args.burn_in is not None:
        spec_kwargs["burn_in"] = args.burn_in
    return ExperimentSpec(config=config, **spec_kwargs)


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _run(args) -> int:
    doc = _load_config_file(args.config)
    command = args.command

    if command == "simulate":
        spec = _build_spec(args, doc, single_radius=True)
        result = run_experiment(spec)
        _print_summary(result)
        return 0

    if command == "sweep":
        spec = _build_spec(args, doc, single_radius=False)
        result = run_experiment(spec)
        _print_summary(result)
        return 0

    if command == "calibrate-ns":
        spec = _build_spec(args, doc, single_radius=True)
        if args.ns_candidates:
            candidates = _parse_int_list(args.ns_candidates)
        elif spec.ns_candidates:
            candidates = spec.ns_candidates
        else:
            candidates = tuple(range(6, 17))
        spec = dataclasses.replace(spec, ns_candidates=candidates)
        result = run_experiment(spec)
        for radius, cal in result.calibrations:
            flag = "stabilized" if cal.stabilized else "NOT stabilized"
            print(f"R={radius:g} {cal.kind.value}: chosen n_states={cal.chosen} ({flag})")
        return 0

    if command == "converge":
        spec = _build_spec(args, doc, single_radius=False)
        if args.sweep_counts:
            sweep = _parse_int_list(args.sweep_counts)
        elif spec.realization_sweep:
            sweep = spec.realization_sweep
        else:
            sweep = (500, 1000, 2000, 4000, 6000)
        spec = dataclasses.replace(spec, realization_sweep=sweep)
        result = run_experiment(spec)
        for row in result.convergence.rows:
            print(f"R={row['radius']:g} {row['kind']}: n={row['realizations']} "
                  f"mean={row['mean']:.4f} std={row['std']:.4f}")
        return 0

    if command == "fit":
        out = args.out or Path("diskmc-refit")
        files = []
        for entry in args.counters:
            entry = Path(entry)
            if entry.is_dir():
                files.extend(sorted(entry.glob("counters_R*.json")))
            else:
                files.append(entry)
        if not files:
            raise FileNotFoundError("no counter files given or found")
        n_states = args.ns if args.ns is not None else doc.get("n_states", 13)
        convention = doc.get("chain_convention", "arrival")
        refit_from_counters(files, n_states, convention, out)
        print(f"re-fit {len(files)} counter file(s) -> {out}")
        return 0

    raise ValueError(f"unknown command {command!r}")


def _print_summary(result) -> None:
    for radius, rr in sorted(result.radius_results.items()):
        parts = []
        for kind, cell in rr.cells.items():
            if cell.complete:
                parts.append(f"{kind.value}: mu={cell.fit_chain.mu:.4f} "
                             f"sigma={cell.fit_chain.sigma:.4f}")
            else:
                parts.append(f"{kind.value}: FAILED ({cell.error})")
        print(f"R={radius:g}  " + "  ".join(parts))
    for (kind, model), reg in sorted(result.regressions.items()):
        print(f"regression {kind}/{model}: slope={reg.slope:.4f} "
              f"intercept={reg.intercept:.4f} R2={reg.r_squared:.4f}")
    print(f"outputs in {result.spec.output_dir}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
