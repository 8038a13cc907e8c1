"""``morphfit`` command line: partition, prewarp, register, compare, sample.

Exit codes: 0 success, 2 I/O or file format, 3 validation, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import MeshIOError, MorphfitError
from .pipeline import compare_metrics, format_comparison, run_partition, run_prewarp, run_register

logger = logging.getLogger("morphfit")


def _add_common(p, target=False, spec_required=False):
    p.add_argument("--template", required=True, help="template mesh (OBJ or PLY)")
    if target:
        p.add_argument("--target", required=True,
                       help="target mesh, or a face-less PLY point cloud with normals")
    p.add_argument("--landmarks", required=spec_required,
                   help="landmark file (morphfit-landmarks v1)")
    p.add_argument("--partition-spec", required=spec_required,
                   help="partition spec (morphfit-partition v1)")
    p.add_argument("--out-dir", required=True, help="directory for all outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphfit",
        description="Partition-based nonrigid registration of a landmarked template mesh.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more log output (repeat for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="split the template into parts along landmark chains")
    _add_common(p, spec_required=True)

    p = sub.add_parser("prewarp", help="per-part affine scaling with boundary smoothing")
    _add_common(p, spec_required=True)
    p.add_argument("--config", help="registration config (morphfit-config v1); uses [smoothing]")
    p.add_argument("--paper-literal-smooth", action="store_true",
                   help="swap the own/other blend weights (discontinuous at the band edge)")

    p = sub.add_parser("register", help="pre-warp (with a spec) and register to the target")
    _add_common(p, target=True)
    p.add_argument("--config", help="registration config (morphfit-config v1)")
    p.add_argument("--baseline", action="store_true",
                   help="skip the pre-warp even if a partition spec is given")
    p.add_argument("--paper-literal-smooth", action="store_true",
                   help="swap the own/other blend weights (discontinuous at the band edge)")
    p.add_argument("--no-normal-term", action="store_true",
                   help="drop the normal term (three-term energy)")
    p.add_argument("--ground-truth",
                   help="mesh whose vertex i is the true match of template vertex i")

    p = sub.add_parser("compare", help="compare two metrics.json files")
    p.add_argument("metrics_a")
    p.add_argument("metrics_b")
    p.add_argument("--json", dest="json_out", help="also write the comparison as JSON here")

    p = sub.add_parser("sample", help="write the bundled sample inputs")
    p.add_argument("--out-dir", required=True)
    return parser


def _configure_logging(verbose, quiet):
    level = logging.ERROR if quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("morphfit: %(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


def _dispatch(args):
    if args.command == "partition":
        run = run_partition(args.template, args.landmarks, args.partition_spec, args.out_dir)
        print(f"{run.metrics['n_parts']} parts, {run.metrics['n_boundaries']} boundaries, "
              f"sizes {run.metrics['part_sizes']}")
    elif args.command == "prewarp":
        run = run_prewarp(args.template, args.landmarks, args.partition_spec, args.out_dir,
                          args.config, args.paper_literal_smooth)
        m = run.metrics
        print(f"landmark rms {m['landmark_rms_before']:.6g} -> {m['landmark_rms_after']:.6g}, "
              f"band vertices {m['blend_band_vertices']}")
    elif args.command == "register":
        run = run_register(args.template, args.target, args.out_dir, landmarks=args.landmarks,
                           partition_spec=args.partition_spec, config=args.config,
                           baseline=args.baseline, paper_literal_smooth=args.paper_literal_smooth,
                           no_normal_term=args.no_normal_term, ground_truth=args.ground_truth)
        m = run.metrics
        line = f"rms distance {m['rms_distance']:.6g}, iterations {m['iterations']}"
        if m["ground_truth_rms"] is not None:
            line += f", ground-truth rms {m['ground_truth_rms']:.6g}"
        print(line)
    elif args.command == "compare":
        report = compare_metrics(args.metrics_a, args.metrics_b)
        print(format_comparison(report))
        if args.json_out:
            try:
                with open(args.json_out, "w", newline="\n") as fh:
                    json.dump(report, fh, indent=1)
                    fh.write("\n")
            except OSError as exc:
                raise MeshIOError(f"cannot write {args.json_out}: {exc}") from None
    elif args.command == "sample":
        from .synthetic import write_samples

        try:
            paths = write_samples(args.out_dir)
        except OSError as exc:
            raise MeshIOError(f"cannot write samples to {args.out_dir}: {exc}") from None
        for p in paths.values():
            print(p)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        return _dispatch(args)
    except MorphfitError as exc:
        print(f"morphfit: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
