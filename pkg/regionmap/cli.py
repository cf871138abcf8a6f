"""
Command-line entry point: `regionmap run | sweep | verify | serve`.

Exit codes: 0 on success, 1 when a verification check fails, 2 when the
configuration cannot be resolved.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from regionmap import __version__
from regionmap.config import get_settings
from regionmap.exceptions import ConfigurationError, InvalidArgumentError
from regionmap.schemas import Algorithm, ExperimentConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


def _csv(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _add_experiment_options(parser: argparse.ArgumentParser, budget: bool) -> None:
    parser.add_argument("--case", choices=["I", "II", "III"], help="benchmark case")
    if budget:
        parser.add_argument("--algo", choices=[a.value for a in Algorithm], help="global-phase algorithm")
        parser.add_argument("--budget", type=int, help="global evaluation budget")
    parser.add_argument("--repeats", type=int, help="number of seeded runs")
    parser.add_argument("--seed", type=int, help="seed of the first run")
    parser.add_argument("--methods", type=_csv, help="comma list of l2,h1,kriging")
    parser.add_argument("--epsilon", type=float, help="level of the region approximation")
    parser.add_argument("--out", help="output directory (default: REGIONMAP_OUTPUT_ROOT)")
    parser.add_argument("--jobs", type=int, help="concurrent runs (default: REGIONMAP_JOBS)")
    parser.add_argument("--config", help="JSON file with an experiment configuration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regionmap",
        description="Discover and approximate insensitivity regions of the benchmark objectives.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides REGIONMAP_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write its output directory")
    _add_experiment_options(run, budget=True)

    sweep = sub.add_parser("sweep", help="run one experiment per (algorithm, budget) pair")
    _add_experiment_options(sweep, budget=False)
    sweep.add_argument("--budgets", required=True, help="START:STOP:STEP or a comma list")
    sweep.add_argument("--algos", type=_csv, default=["hms", "nea2"], help="comma list of hms,nea2")

    verify = sub.add_parser("verify", help="run the property and acceptance checks")
    verify.add_argument("--full", action="store_true", help="full strength, including the benchmark replications")

    serve = sub.add_parser("serve", help="serve the HTTP API with uvicorn")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the JSON file, then the flags that were given."""
    data: Dict[str, Any] = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"cannot read {args.config}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"{args.config}: top level must be an object")

    overrides = {
        "case": args.case,
        "algorithm": getattr(args, "algo", None),
        "budget": getattr(args, "budget", None),
        "repeats": args.repeats,
        "seed": args.seed,
        "methods": args.methods,
        "epsilon": args.epsilon,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    # the per-algorithm budget follows the top-level one
    if "budget" in data and isinstance(data.get("hms"), dict):
        nested = data["hms"].pop("budget", None)
        if nested is not None and nested != data["budget"]:
            logger.warning("hms.budget %s ignored, using budget %s", nested, data["budget"])

    jobs = args.jobs if args.jobs is not None else data.get("jobs", get_settings().JOBS)
    data["jobs"] = jobs
    return ExperimentConfig.model_validate(data)


def _cmd_run(args: argparse.Namespace) -> int:
    from regionmap.services.experiment_service import run_experiment

    config = resolve_config(args)
    out_dir = Path(args.out or get_settings().OUTPUT_ROOT)
    report = run_experiment(config, out_dir, config.jobs)
    print(f"{len(report.runs)} runs written to {out_dir} ({len(report.failures)} failed)")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    from regionmap.services.experiment_service import parse_budgets, sweep

    config = resolve_config(args)
    try:
        budgets = parse_budgets(args.budgets)
        algorithms = [Algorithm(a) for a in args.algos]
    except ValueError as e:
        raise InvalidArgumentError(str(e)) from e
    if not budgets or any(b <= 0 for b in budgets):
        raise InvalidArgumentError(f"budgets must be positive, got {args.budgets!r}")
    out_root = Path(args.out or get_settings().OUTPUT_ROOT)
    cells = sweep(config, budgets, algorithms, out_root, config.jobs)
    print(f"{len(cells)} experiments written to {out_root}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    from regionmap.services.verify_service import format_table, run_checks

    results = run_checks(full=args.full)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("regionmap.main:app", host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "serve": _cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=(args.log_level or get_settings().LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"invalid configuration:\n{e}", file=sys.stderr)
    except (ConfigurationError, InvalidArgumentError, json.JSONDecodeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
