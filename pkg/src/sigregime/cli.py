"""Command-line entry point: ``sigregime {clouds,regimes,generic}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import ConfigError, ExperimentConfig, emit_report, run, write_experiment_paths

logger = logging.getLogger("sigregime")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigregime",
        description="Multiscale spectral clustering of point clouds and signature-encoded market regimes.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, help_text in (
        ("clouds", "Gaussian clouds in the plane"),
        ("regimes", "synthetic GBM regimes clustered by signature MMD"),
        ("generic", "cluster a user-supplied distance matrix or coordinate table"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config; keys mirror ExperimentConfig fields")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="threads for regime-point generation")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "generic":
            p.add_argument("--input", type=Path, required=True, help="CSV distance matrix or coordinates")
    return parser


def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if data.get("experiment", args.experiment) != args.experiment:
        raise ConfigError(f"config is for {data['experiment']!r}, not {args.experiment!r}")
    data["experiment"] = args.experiment
    return ExperimentConfig.from_dict(data, seed=args.seed)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        report = run(cfg, getattr(args, "input", None), workers=max(1, args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        # Bad input files surface as ValueError from the CSV reader.
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    paths = emit_report(report, args.out)
    if cfg.experiment == "regimes" and cfg.write_paths:
        paths.append(write_experiment_paths(cfg, args.out))
    for s in report.suggestions:
        flag = " (trivial)" if s["trivial"] else ""
        logger.info("k=%d separation=%.4f t=%d%s", s["k"], s["separation"], s["t_revealing"], flag)
    print("\n".join(str(p) for p in paths))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
