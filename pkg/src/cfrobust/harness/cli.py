"""
Command-line entry point::

    cfrobust run mock3 --out runs/mock3 --workers 4
    cfrobust tables runs/mock3
    cfrobust validate experiments/adult.toml

Exit status: 0 when every combination passed the completeness gate, 1 when some were
excluded, 2 on a configuration or stage error.
"""
from __future__ import annotations

import argparse
import logging
from typing import Sequence

from cfrobust.errors import CfRobustError, ConfigError, ExperimentError
from cfrobust.harness.config import load_config, preset_names
from cfrobust.harness.runner import RunManifest, run_experiment
from cfrobust.harness.tables import emit_tables, load_results

logger = logging.getLogger(__name__)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfrobust")
    ap.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default INFO).",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment and write its tables.")
    run.add_argument(
        "config",
        help="A TOML configuration file "
             f"or a preset name ({', '.join(preset_names())}).",
    )
    run.add_argument(
        "--out",
        help="Run directory (default: <output_dir>/<name>-<UTC timestamp>).",
    )
    run.add_argument(
        "--workers",
        type=int,
        help="Processes for counterfactual generation "
             "(default: $CFROBUST_WORKERS or 1).",
    )

    tables = sub.add_parser("tables", help="Re-emit every table of a finished run.")
    tables.add_argument("run_dir", help="Directory written by 'cfrobust run'.")

    validate = sub.add_parser("validate", help="Check a configuration without running it.")
    validate.add_argument("config", help="A TOML configuration file or a preset name.")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "tables":
        try:
            results = load_results(args.run_dir)
            written = emit_tables(results, args.run_dir)
            manifest = RunManifest.read(args.run_dir)
        except (FileNotFoundError, CfRobustError) as e:
            print(f"Cannot re-emit tables of {args.run_dir}: {e}")
            return 2
        print(f"Wrote {len(written)} table(s) to {args.run_dir}")
        return manifest.exit_code

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"Invalid configuration: {e}")
        return 2

    if args.command == "validate":
        combos = ", ".join(f"{m.kind}-{k.kind}" for m, k in cfg.combos())
        print(f"{cfg.name}: OK ({cfg.noise.n_levels} levels; {combos}) sha256 {cfg.config_hash()}")
        return 0

    try:
        manifest, _ = run_experiment(cfg, args.out, workers=args.workers)
    except ConfigError as e:
        print(f"Invalid configuration: {e}")
        return 2
    except ExperimentError as e:
        print(f"Run failed in stage {e.stage!r}: {e.cause}")
        return 2

    excluded = ", ".join(e["combo"] for e in manifest.exclusions) or "none"
    print(f"Wrote {len(manifest.artifacts)} artifact(s) to {manifest.run_dir} "
          f"(status {manifest.status}; excluded: {excluded})")
    return manifest.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
