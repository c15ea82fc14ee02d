"""Command line entry point.

Exit codes: 0 success, 2 config error, 3 solver did not converge,
4 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import ConfigurationError, DivergenceError, PreconditionError, UnsupportedError
from .scenarios import SCENARIO_DESCRIPTIONS, emit_plot_data, load_config, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("bilinear_control")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilinear-control",
        description="Endpoint-constrained quadratic control of bilinear evolution equations.",
    )
    parser.add_argument("--list-scenarios", action="store_true", help="print the scenario registry")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run one or more scenario config files")
    run.add_argument("configs", nargs="+", type=Path, help="TOML config file(s)")
    run.add_argument("--scenario", help="scenario name (overrides the file)")
    run.add_argument("--mode", choices=["penalized", "constrained", "feedback"])
    run.add_argument("--eps-start", type=float)
    run.add_argument("--stages", type=int, dest="n_stages")
    run.add_argument("--out", dest="output_dir", help="output directory (single config only)")
    run.add_argument("--seed", type=int)
    run.add_argument("--jobs", type=int, default=1, help="run independent configs in parallel")
    run.add_argument("--no-plot-data", action="store_true", help="skip the overlay file")
    return parser


def _run_one(path: Path, overrides: dict, plot: bool) -> tuple[int, str]:
    try:
        cfg = load_config(path, **overrides)
    except (ConfigurationError, FileNotFoundError) as exc:
        return EXIT_CONFIG, f"{path}: config error: {exc}"
    try:
        artifacts = run_scenario(cfg)
    except DivergenceError as exc:
        return EXIT_DIVERGED, f"{path} [{cfg.scenario.value}/{cfg.mode.value}]: {exc}"
    except (ConfigurationError, UnsupportedError, PreconditionError) as exc:
        return EXIT_CONFIG, f"{path} [{cfg.scenario.value}/{cfg.mode.value}]: {exc}"
    if plot:
        emit_plot_data(artifacts)
    text = json.dumps(artifacts.summary, indent=2)
    code = EXIT_OK if artifacts.converged else EXIT_NOT_CONVERGED
    return code, text


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.list_scenarios:
        for scenario, text in SCENARIO_DESCRIPTIONS.items():
            print(f"{scenario.value:18s} {text}")
        return EXIT_OK
    if args.command != "run":
        parser.print_help()
        return EXIT_CONFIG

    overrides = {
        "scenario": args.scenario,
        "mode": args.mode,
        "eps_start": args.eps_start,
        "n_stages": args.n_stages,
        "output_dir": args.output_dir,
        "seed": args.seed,
    }
    if args.output_dir is not None and len(args.configs) > 1:
        print("--out needs a single config file; set output_dir in each file", file=sys.stderr)
        return EXIT_CONFIG
    plot = not args.no_plot_data

    if args.jobs > 1 and len(args.configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, args.configs,
                                    [overrides] * len(args.configs), [plot] * len(args.configs)))
    else:
        results = [_run_one(p, overrides, plot) for p in args.configs]

    worst = EXIT_OK
    for code, text in results:
        print(text, file=sys.stdout if code in (EXIT_OK, EXIT_NOT_CONVERGED) else sys.stderr)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
