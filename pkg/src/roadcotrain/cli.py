"""Command line: ``roadcotrain {project,split,train,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 a
NaN or infinity appeared during computation. ``COTRAIN_LOG_LEVEL`` sets the
log level (default ``WARNING``); logs go to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import projection, runner
from .config import ExperimentConfig
from .data import SplitError
from .models import ConfigError
from .numgrad import FormatError, NonFiniteError, serialize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("roadcotrain")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _experiment(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.seed is None:
        raise UsageError("either --config or --seed is required")
    else:
        cfg = ExperimentConfig(seed=args.seed)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def cmd_project(args) -> int:
    cloud = projection.read_velodyne(args.cloud)
    calib = projection.read_calib(args.calib)
    xyz = projection.build_xyz_image(cloud, calib, args.width, args.height)
    serialize.save(args.out, xyz.channels)
    if args.coverage:
        serialize.save(args.coverage, xyz.coverage)
    if args.pgm:
        projection.write_pgm(args.pgm, projection.visualization(xyz))
    log.info("projected %d points, %d pixels covered", len(cloud), int(xyz.coverage.sum()))
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _experiment(args)
    paths = runner.write_splits(cfg)
    print(f"wrote {len(paths)} split manifests to {Path(cfg.output_dir) / 'splits'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    done = runner.train(cfg, args.method, jobs=args.jobs)
    print(f"{args.method}: {len(done)} cells trained")
    if args.method != "supervised":
        print(runner.report(Path(cfg.output_dir), method=args.method))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.results_dir or args.out or "")
    if not (out / "results").is_dir():
        raise FileNotFoundError(f"no results directory under {out}")
    print(runner.report(out, method=args.method, baseline=args.baseline), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roadcotrain", description="Lidar-camera co-training for road segmentation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jobs=False):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="master seed; overrides the config")
        sp.add_argument("--out", help="output directory; overrides the config")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="cells run in parallel")

    sp = sub.add_parser("project", help="project a lidar scan into an XYZ image")
    sp.add_argument("cloud", help="velodyne scan (float32 x, y, z, intensity records)")
    sp.add_argument("calib", help="calibration file with P2, R0_rect and Tr_velo_to_cam")
    sp.add_argument("--out", required=True, help="output tensor file, shape [3,H,W]")
    sp.add_argument("--width", type=int, default=1242)
    sp.add_argument("--height", type=int, default=375)
    sp.add_argument("--coverage", help="also write the [H,W] coverage mask here")
    sp.add_argument("--pgm", help="also write an 8-bit visualisation here")
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("split", help="generate split manifests")
    common(sp)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train every pending (split, N) cell")
    common(sp, jobs=True)
    sp.add_argument("--method", choices=runner.TRAIN_METHODS, default="cotrain")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("report", help="aggregate finished cells into a table")
    sp.add_argument("results_dir", nargs="?", help="experiment output directory")
    sp.add_argument("--out", help="same as results_dir")
    sp.add_argument("--method", default="cotrain")
    sp.add_argument("--baseline", default="supervised")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("COTRAIN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("roadcotrain: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"roadcotrain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"roadcotrain: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, SplitError, OSError, ValueError) as exc:
        print(f"roadcotrain: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
