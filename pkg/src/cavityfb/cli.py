"""Command-line front end: ``cavityfb {run,validate,compare,spectra,lindblad-check}``.

Exit codes: 0 ok, 2 config error, 3 unphysical parameters, 4 numerical
failure, 5 compare threshold exceeded.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .errors import (InvalidArgument, MalformedGenerator, NoUniqueSteadyState, StateInvariantError,
                     StepTooLarge, UnphysicalBath, Unsupported)
from .scenario import ConfigError, parse_scenario, run, write_artifacts

EXIT_OK, EXIT_CONFIG, EXIT_UNPHYSICAL, EXIT_NUMERICAL, EXIT_COMPARE = 0, 2, 3, 4, 5

_FORCED_MODE = {"compare": "compare", "spectra": "spectrum", "lindblad-check": "lindblad-check"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavityfb", description="Cavity feedback scenario runner")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run the scenario in the mode given by its config",
        "validate": "parse and validate only; print the fully defaulted config",
        "compare": "full two-mode model against the reduced generator",
        "spectra": "output squeezing spectra of the linear model",
        "lindblad-check": "test whether the generator is of Lindblad form",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="scenario YAML file")
        if name != "validate":
            s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, help="override mode.seed (trajectories)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for trajectory ensembles")
        s.add_argument("--tolerance", type=float, help="override mode.threshold (compare)")
    return p


def _overrides(args, text: str) -> dict:
    ov = {}
    forced = _FORCED_MODE.get(args.command)
    if forced is not None:
        import yaml

        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError:
            raw = {}
        mode = raw.get("mode") if isinstance(raw, dict) else None
        current = mode.get("type") if isinstance(mode, dict) else mode
        if current != forced:
            ov["mode"] = {"type": forced}
    if args.seed is not None:
        ov["mode.seed"] = args.seed
    if args.tolerance is not None:
        ov["mode.threshold"] = args.tolerance
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sc = parse_scenario(text, _overrides(args, text))
    except UnphysicalBath as e:
        print(f"unphysical: {e}", file=sys.stderr)
        return EXIT_UNPHYSICAL
    except (ConfigError, InvalidArgument, Unsupported) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(json.dumps({"config_sha256": sc.config_sha256, "scenario": sc.config}, indent=2, sort_keys=True))
        return EXIT_OK

    t0 = time.perf_counter()
    try:
        result = run(sc, threads=args.threads)
    except UnphysicalBath as e:
        print(f"unphysical: {e}", file=sys.stderr)
        return EXIT_UNPHYSICAL
    except (NoUniqueSteadyState, StateInvariantError, StepTooLarge, MalformedGenerator,
            np.linalg.LinAlgError, FloatingPointError) as e:
        extra = ""
        if isinstance(e, StateInvariantError):
            extra = f" (step {e.step}, seed {e.seed})"
        print(f"numerical failure: {e}{extra}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgument, Unsupported) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    write_artifacts(result, args.out, timing={"wall_time_seconds": wall, "threads": args.threads})
    print(json.dumps(result.summary.get("results", {}), indent=2, sort_keys=True))
    if result.exit_code == EXIT_COMPARE:
        print("compare: trace distance above threshold", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
