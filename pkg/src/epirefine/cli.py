"""Command-line entry point: ``epirefine {synth,refine,eval-depth,eval-odom,selftest}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .depth import downsample_depth
from .errors import RefineError
from .image import WORKING_FACTOR, extract_features
from .io import (
    SceneFile,
    format_intrinsics,
    read_image,
    read_intrinsics,
    read_pfm,
    read_poses,
    read_scene,
    write_pfm,
    write_pgm,
    write_poses,
)
from .matcher import coarse_depth_and_mask
from .metrics import depth_metrics, odometry_metrics
from .selftest import run_selftest
from .solver import IterationTrace, PairInputs, RefinementState, refine
from .synth import (
    ACCEPTANCE_K,
    ALIGNMENT_K,
    BASELINE,
    BASELINE_LEFT,
    NO_ROTATION,
    YAW_DEG,
    acceptance_scene,
    alignment_scene,
    perturb,
    render_pair,
    shift_scene,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


BUILTIN_SCENES = {
    "acceptance": lambda: SceneFile(acceptance_scene(), ACCEPTANCE_K, YAW_DEG, BASELINE),
    "alignment": lambda: SceneFile(alignment_scene(), ALIGNMENT_K, YAW_DEG, BASELINE_LEFT),
    "shift": lambda: SceneFile(shift_scene(), ACCEPTANCE_K, NO_ROTATION, BASELINE),
}


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    if (args.scene is None) == (args.builtin is None):
        raise UsageError("synth: give exactly one of --scene or --builtin")
    sf = read_scene(args.scene) if args.scene else BUILTIN_SCENES[args.builtin]()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pair = render_pair(sf.scene, sf.pose, sf.K, sf.supersample)
    init = perturb(pair.depth, pair.pose, cfg.noise_spec(), cfg.d_min, cfg.d_max)
    (out / "scene.txt").write_text(sf.dumps())
    (out / "intrinsics.txt").write_text(format_intrinsics(sf.K))
    write_pgm(out / "target.pgm", pair.target)
    write_pgm(out / "source.pgm", pair.source)
    write_pfm(out / "gt_depth.pfm", pair.depth)
    write_poses(out / "gt_pose.txt", [pair.pose])
    write_pfm(out / "init_depth.pfm", init.depth)
    write_poses(out / "init_pose.txt", [init.pose])
    print(f"wrote {out} working={pair.K_working.width}x{pair.K_working.height} "
          f"clamp_fraction={init.clamp_fraction:.6g}")
    return EXIT_OK


def _working_depth(depth: np.ndarray, K_full, K_work) -> np.ndarray:
    if depth.shape == (K_work.height, K_work.width):
        return depth
    if depth.shape == (K_full.height, K_full.width):
        return downsample_depth(depth, WORKING_FACTOR)
    raise RefineError(f"initial depth is {depth.shape[1]}x{depth.shape[0]}; expected the working "
                      f"{K_work.width}x{K_work.height} or input {K_full.width}x{K_full.height} size")


def _single_pose(path):
    poses = read_poses(path)
    if len(poses) != 1:
        raise RefineError(f"{path}: expected exactly one pose, found {len(poses)}")
    return poses[0]


def cmd_refine(args) -> int:
    cfg = _config(args.config)
    K = read_intrinsics(args.intrinsics)
    Kw = K.downscaled(WORKING_FACTOR)
    target = read_image(args.target)
    if target.shape[:2] != (K.height, K.width):
        raise RefineError(f"target is {target.shape[1]}x{target.shape[0]}, intrinsics say {K.width}x{K.height}")
    depth0 = _working_depth(read_pfm(args.init_depth).astype(np.float64), K, Kw)
    if not np.all(np.isfinite(depth0)) or np.any(depth0 <= 0):
        raise RefineError("initial depth must be finite and positive")
    pose0 = _single_pose(args.init_pose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.source is None:
        # No second view: echo the initial estimates.
        depth, pose, trace, consistent = depth0, pose0, IterationTrace(), None
    else:
        source = read_image(args.source)
        if source.shape != target.shape:
            raise RefineError(f"source shape {source.shape} differs from target {target.shape}")
        tp, sp = extract_features(target), extract_features(source)
        pair = PairInputs(tp, sp, Kw)
        result = refine(RefinementState(depth0, pose0), pair, cfg.solver_config())
        depth, pose, trace = result.state.depth, result.state.pose, result.trace
        _, consistent = coarse_depth_and_mask(depth0, tp, sp, pose0, Kw, cfg.wide_radius, cfg.consistency_ratio,
                                              cfg.range_scale, cfg.radius, cfg.d_min, cfg.d_max)
    write_pfm(out / "depth.pfm", depth)
    write_poses(out / "pose.txt", [pose])
    (out / "trace.csv").write_text(trace.to_csv(timing=cfg.trace_timing))
    if consistent is not None:
        write_pgm(out / "consistent.pgm", consistent.astype(np.float64), maxval=255)
    if trace.error:
        print(f"warning: {trace.error}", file=sys.stderr)
    print(f"wrote {out} iterations={len(trace)}")
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    cfg = _config(args.config)
    pred, gt = read_pfm(args.pred).astype(np.float64), read_pfm(args.gt).astype(np.float64)
    print(depth_metrics(pred, gt, cap=cfg.max_depth, median_scale=not args.no_median_scale).summary())
    return EXIT_OK


def cmd_eval_odom(args) -> int:
    print(odometry_metrics(read_poses(args.est), read_poses(args.gt)).summary())
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epirefine", description="Coupled depth and pose refinement for two views.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic pair with ground truth and a noisy initialization")
    p.add_argument("--scene", help="scene file (key = value)")
    p.add_argument("--builtin", choices=sorted(BUILTIN_SCENES), help="use a built-in scene")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("refine", help="refine an initial depth map and relative pose")
    p.add_argument("--target", required=True)
    p.add_argument("--source", help="second view; without it the initial estimates are echoed")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--init-depth", required=True)
    p.add_argument("--init-pose", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval-depth", help="depth error metrics of a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--no-median-scale", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-odom", help="trajectory drift and ATE")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_odom)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("epirefine: missing subcommand")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except (RefineError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
