"""``bbm-yaglom <experiment> --config <path> [--seed N] [--replicas N] [--out DIR] [--threads N]``.

Exit status: 0 when every verdict passes, 1 when any verdict fails, 2 for
an unusable command line or config file. The output directory is taken
from ``--out``, then ``BBM_YAGLOM_OUT``, then the config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import run

OUT_ENV = "BBM_YAGLOM_OUT"

log = logging.getLogger("bbm_yaglom")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbm-yaglom", description="Run a branching Brownian motion experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--replicas", type=int, help="replica count (overrides the config)")
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    p.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("replicas", args.replicas), ("threads", args.threads))
                     if v is not None}
        if overrides:
            cfg = type(cfg).model_validate({**cfg.model_dump(), **overrides})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # pydantic errors from command-line overrides
        print(f"invalid option: {exc}", file=sys.stderr)
        return 2
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir
    try:
        manifest = run(cfg, args.experiment, out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for v in manifest.verdicts:
        log.info("%-4s %-28s %s %s", v.status, v.name, v.threshold, v.detail)
    log.info("manifest: %s", os.path.join(out, "manifest.json"))
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
