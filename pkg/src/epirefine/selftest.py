"""Quick invariant checks runnable from the command line."""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from .geometry import CameraIntrinsics, Se3Pose, exp_map, log_map, project, projection_jacobian
from .io import encode_pfm, format_pose, parse_pfm, parse_pose_line
from .metrics import depth_metrics
from .solver import PairInputs, RefinementState, SolverConfig, convergence_metric, fixed_point_iterate, refine
from .synth import Plane, SceneSpec, render_view, shift_pair


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _exp_log() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        w = np.concatenate([rng.uniform(-1, 1, 3) * rng.uniform(0, 3) / np.sqrt(3), rng.normal(size=3)])
        worst = max(worst, float(np.linalg.norm(log_map(exp_map(w)) - w)))
    return worst < 1e-9, f"max |log(exp(w)) - w| = {worst:.2e}"


def _jacobian() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    K = CameraIntrinsics(200.0, 210.0, 80.0, 24.0, 160, 48)
    worst, h = 0.0, 1e-6
    for _ in range(100):
        pose = exp_map(np.concatenate([rng.normal(scale=0.1, size=3), rng.normal(scale=0.3, size=3)]))
        px = rng.uniform([0, 0], [160, 48])
        d = rng.uniform(2, 30)
        jac = projection_jacobian(px, d, pose, K)
        num = np.empty((2, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            up, _, _ = project(px, d, exp_map(e) @ pose, K)
            dn, _, _ = project(px, d, exp_map(-e) @ pose, K)
            num[:, k] = (up - dn) / (2 * h)
        worst = max(worst, float(np.abs(jac - num).max() / np.abs(num).max()))
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _anderson() -> tuple[bool, str]:
    g = lambda x: 0.5 * x + 1.0  # noqa: E731
    x_a, n_a = fixed_point_iterate(g, 100.0, m=3, tol=1e-8)
    _, n_p = fixed_point_iterate(g, 100.0, tol=1e-8, accelerate=False)
    ok = n_a <= 5 and n_p >= 25 and abs(x_a[0] - 2.0) < 1e-8
    return ok, f"anderson {n_a} iterations, picard {n_p}"


def _metrics() -> tuple[bool, str]:
    gt = np.random.default_rng(2).uniform(1, 50, size=(48, 160))
    m = depth_metrics(1.1 * gt, gt, median_scale=False)
    return abs(m.abs_rel - 0.1) < 1e-9, f"abs_rel = {m.abs_rel:.12f}"


def _formats() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    grid = rng.uniform(0.1, 80, size=(48, 160)).astype(np.float32)
    pfm_ok = np.array_equal(parse_pfm(encode_pfm(grid)), grid)
    pose = exp_map(rng.normal(size=6))
    back = parse_pose_line(format_pose(pose))
    dev = float(np.abs(back.matrix - pose.matrix).max())
    return pfm_ok and dev < 1e-15, f"pfm lossless={pfm_ok}, pose deviation {dev:.1e}"


def _renderer() -> tuple[bool, str]:
    n = np.array([0.0, np.sin(0.4), np.cos(0.4)])
    K = CameraIntrinsics(100.0, 100.0, 40.0, 12.0, 80, 24)
    view = render_view(SceneSpec((Plane(tuple(n), 5.0, "noise", 0.5),)), Se3Pose.identity(), K, 1)
    pts = K.unproject(K.pixel_grid(), view.depth)
    err = float(np.abs(pts @ n - 5.0).max())
    return err < 1e-9, f"max plane residual {err:.1e}"


def _fixed_point() -> tuple[bool, str]:
    scene = shift_pair()
    tp, sp = scene.pyramids()
    start = RefinementState(scene.depth, scene.pose)
    res = refine(start, PairInputs(tp, sp, scene.K_working), SolverConfig(tol_depth=0.0, tol_pose=0.0))
    dd, dp = convergence_metric(start, res.last)
    return dd < 1e-3 and dp < 1e-5, f"depth change {dd:.2e}, pose change {dp:.2e}"


CHECKS: tuple[tuple[str, Callable[[], tuple[bool, str]]], ...] = (
    ("exp/log roundtrip", _exp_log),
    ("projection jacobian", _jacobian),
    ("anderson scalar map", _anderson),
    ("depth metrics oracle", _metrics),
    ("file formats", _formats),
    ("renderer plane equation", _renderer),
    ("ground truth is a fixed point", _fixed_point),
)


def run_selftest() -> list[CheckResult]:
    results = []
    for name, check in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), f"{detail} ({time.perf_counter() - t0:.2f}s)"))
    return results
