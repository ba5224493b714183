"""Alternating depth/pose refinement toward a fixed point."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .depth import (
    CostHistory,
    cost_statistics,
    depth_update,
    evolving_confidence,
    init_history,
    static_confidence,
    update_history,
)
from .errors import InsufficientOverlapError, InvalidArgumentError
from .geometry import CameraIntrinsics, Se3Pose, log_map
from .image import FeaturePyramid, warp_image
from .matcher import D_MAX, D_MIN, RANGE_SCALE, clamp_depth, depth_candidates, sample_cost_map
from .metrics import LossConfig, photometric_loss
from .pose import damped_pose_step

ACCELERATION_MODES = ("off", "depth-only")
WEIGHT_MODES = ("both", "static", "evolving", "none")
TRACE_COLUMNS = ("iter", "depth_rel", "pose_norm", "mean_min_cost", "photo_loss", "ms")


@dataclass(frozen=True)
class SolverConfig:
    """Every knob of the refinement loop.

    ``max_iters``..``acceleration`` control the iteration itself; the rest
    parametrize the depth, confidence and pose sub-steps.
    """

    max_iters: int = 6
    tol_depth: float = 1e-3
    tol_pose: float = 1e-5
    anderson_m: int = 3
    anderson_beta: float = 1.0
    acceleration: str = "off"
    radius: int = 8
    range_scale: float = RANGE_SCALE
    levels: int = 3
    tau_d: float = 0.0005
    tau_w: float = 0.1
    alpha_h: float = 0.5
    kappa: float = 10.0
    g0: float = 0.05
    damping: float = 1e-4
    weights: str = "both"
    update_pose: bool = True
    d_min: float = D_MIN
    d_max: float = D_MAX
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if self.anderson_m < 0:
            raise InvalidArgumentError("anderson_m must be >= 0")
        if self.acceleration not in ACCELERATION_MODES:
            raise InvalidArgumentError(f"acceleration must be one of {ACCELERATION_MODES}")
        if self.weights not in WEIGHT_MODES:
            raise InvalidArgumentError(f"weights must be one of {WEIGHT_MODES}")
        if self.tau_d <= 0 or self.tau_w <= 0:
            raise InvalidArgumentError("temperatures must be positive")
        if not 0 <= self.alpha_h <= 1:
            raise InvalidArgumentError("alpha_h must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class RefinementState:
    depth: np.ndarray
    pose: Se3Pose
    history: CostHistory | None = None
    iteration: int = 0


@dataclass(frozen=True, eq=False)
class PairInputs:
    """Feature pyramids of the target and source views at working resolution."""

    target: FeaturePyramid
    source: FeaturePyramid
    K: CameraIntrinsics

    def __post_init__(self):
        if self.target.shape != self.source.shape or self.target.shape != (self.K.height, self.K.width):
            raise InvalidArgumentError("target, source and intrinsics disagree on working resolution")


@dataclass
class TraceRow:
    iter: int
    depth_rel: float
    pose_norm: float
    mean_min_cost: float
    photo_loss: float
    ms: float
    max_step_ratio: float = 0.0
    clamp_events: int = 0
    escalations: int = 0


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)
    error: str | None = None
    depth_fixed_iter: int = 0
    pose_fixed_iter: int = 0

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, timing: bool = True) -> str:
        """CSV with the fixed trace columns; ``timing=False`` writes ``ms`` as 0."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.rows:
            writer.writerow([r.iter, repr(r.depth_rel), repr(r.pose_norm), repr(r.mean_min_cost),
                             repr(r.photo_loss), f"{r.ms:.3f}" if timing else "0"])
        return buf.getvalue()


def convergence_metric(prev: RefinementState, nxt: RefinementState) -> tuple[float, float]:
    """``(median |dD| / D, |log(T_next @ T_prev^-1)|)``."""
    depth_rel = float(np.median(np.abs(nxt.depth - prev.depth) / prev.depth))
    pose_norm = float(np.linalg.norm(log_map(nxt.pose @ prev.pose.inverse())))
    return depth_rel, pose_norm


def anderson_step(residual_history, iterate_history, m: int, beta: float = 1.0,
                  ridge: float = 1e-10) -> np.ndarray:
    """Next Anderson iterate from the last ``m + 1`` states and residuals.

    ``residual_history[i] = g(x_i) - x_i`` for ``iterate_history[i] = x_i``.
    Mixing weights minimize ``|sum_i a_i f_i|`` subject to ``sum_i a_i = 1``;
    a degenerate solve falls back to the damped Picard step on the newest
    iterate.
    """
    if len(residual_history) != len(iterate_history) or not residual_history:
        raise InvalidArgumentError("histories must be non-empty and of equal length")
    fs = [np.ravel(f) for f in residual_history[-(m + 1):]]
    xs = [np.ravel(x) for x in iterate_history[-(m + 1):]]
    if len({v.size for v in fs + xs}) != 1:
        raise InvalidArgumentError("all residuals and iterates must have the same size")
    F = np.array(fs, dtype=np.float64)
    X = np.array(xs, dtype=np.float64)
    picard = X[-1] + beta * F[-1]
    if len(F) == 1:
        return picard
    gram = F @ F.T
    scale = max(float(np.max(np.diag(gram))), 1e-300)
    try:
        a = np.linalg.solve(gram / scale + ridge * np.eye(len(F)), np.ones(len(F)))
    except np.linalg.LinAlgError:
        return picard
    total = a.sum()
    if not np.all(np.isfinite(a)) or abs(total) < 1e-12:
        return picard
    alpha = a / total
    return alpha @ (X + beta * F)


def fixed_point_iterate(g, x0, m: int = 3, beta: float = 1.0, tol: float = 1e-8,
                        max_iter: int = 200, accelerate: bool = True):
    """Iterate ``x <- g(x)`` (optionally Anderson-mixed) until ``|g(x) - x| <= tol``.

    Returns ``(x, iterations)``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    xs, fs = [], []
    for k in range(max_iter):
        f = np.atleast_1d(g(x)) - x
        if np.linalg.norm(f) <= tol:
            return x, k
        if not accelerate:
            x = x + beta * f
            continue
        xs.append(x)
        fs.append(f)
        xs, fs = xs[-(m + 1):], fs[-(m + 1):]
        x = anderson_step(fs, xs, m, beta)
    return x, max_iter


def _weights(cfg: SolverConfig, w_static: np.ndarray, history: CostHistory) -> np.ndarray:
    if cfg.weights == "none":
        return np.ones_like(w_static)
    if cfg.weights == "static":
        return w_static
    w_h = evolving_confidence(history, cfg.tau_w)
    return w_h if cfg.weights == "evolving" else w_static * w_h


def _photo_loss(pair: PairInputs, depth: np.ndarray, pose: Se3Pose) -> float:
    warped, mask = warp_image(pair.source.gray, depth, pose, pair.K)
    try:
        return photometric_loss(pair.target.gray, [(warped, mask)], 1.0 / depth)
    except Exception:  # noqa: BLE001 - the loss is informational only
        return float("nan")


@dataclass(frozen=True, eq=False)
class RefineResult:
    """Selected fixed point, the last iterate, and the per-iteration trace."""

    state: RefinementState
    last: RefinementState
    trace: IterationTrace


def refine(initial: RefinementState, pair: PairInputs, config: SolverConfig = SolverConfig(),
           callback: Callable[[RefinementState, RefinementState], None] | None = None) -> RefineResult:
    """Alternate depth and pose updates until both stop moving.

    Each iteration samples costs along the epipolar lines of the current
    pose, updates the cost history and depth, then takes one damped
    Gauss-Newton pose step using the updated depth. Depth and pose fixed
    points are selected independently as the iterates with the smallest
    update. ``callback(previous, current)`` sees every accepted iterate.
    """
    cfg = config
    K = pair.K
    tgt, src = pair.target, pair.source
    depth = clamp_depth(np.asarray(initial.depth, dtype=np.float64), cfg.d_min, cfg.d_max)
    pose = initial.pose
    history = initial.history
    w_static = static_confidence(tgt.base, src.base, depth, pose, K, cfg.kappa, cfg.g0)
    trace = IterationTrace()
    xs, fs = [], []
    best_depth = (np.inf, depth, 0)
    best_pose = (np.inf, pose, 0)
    state = RefinementState(depth, pose, history, initial.iteration)

    for k in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        cands = depth_candidates(depth, cfg.radius, cfg.range_scale, cfg.levels, cfg.d_min, cfg.d_max)
        costs = sample_cost_map(tgt.base, src, cands, pose, K, cfg.workers)
        if history is None:
            history = init_history(costs, cfg.alpha_h)
        else:
            history = update_history(history, costs)
        new_depth = depth_update(costs, cands, depth, cfg.tau_d, cfg.d_min, cfg.d_max)
        clamp_events = 0
        if cfg.acceleration == "depth-only":
            xs.append(depth.ravel())
            fs.append((new_depth - depth).ravel())
            xs, fs = xs[-(cfg.anderson_m + 1):], fs[-(cfg.anderson_m + 1):]
            accel = anderson_step(fs, xs, cfg.anderson_m, cfg.anderson_beta).reshape(depth.shape)
            bound = 2.0 * cands.radius * cands.step
            lo, hi = depth - bound, depth + bound
            clamped = (accel < lo) | (accel > hi)
            clamp_events = int(clamped.sum())
            new_depth = clamp_depth(np.clip(accel, lo, hi), cfg.d_min, cfg.d_max)
        step_ratio = float(np.max(np.abs(new_depth - depth) / (cands.radius * cands.step)))

        escalations = 0
        new_pose = pose
        if cfg.update_pose:
            weights = _weights(cfg, w_static, history)
            try:
                step = damped_pose_step(tgt.base, src.base, new_depth, pose, K, weights, cfg.damping)
            except InsufficientOverlapError as exc:
                trace.error = f"iteration {k}: {exc}"
                break
            new_pose, escalations = step.pose, step.escalations

        nxt = RefinementState(new_depth, new_pose, history, state.iteration + 1)
        depth_rel, pose_norm = convergence_metric(state, nxt)
        min_cost, _, ok = cost_statistics(costs)
        trace.rows.append(TraceRow(
            iter=k,
            depth_rel=depth_rel,
            pose_norm=pose_norm,
            mean_min_cost=float(min_cost[ok].mean()) if ok.any() else float("nan"),
            photo_loss=_photo_loss(pair, new_depth, new_pose),
            ms=1000.0 * (time.perf_counter() - t0),
            max_step_ratio=step_ratio,
            clamp_events=clamp_events,
            escalations=escalations,
        ))
        if depth_rel < best_depth[0]:
            best_depth = (depth_rel, new_depth, k)
        if pose_norm < best_pose[0]:
            best_pose = (pose_norm, new_pose, k)
        if callback is not None:
            callback(state, nxt)
        state, depth, pose = nxt, new_depth, new_pose
        if depth_rel < cfg.tol_depth and pose_norm < cfg.tol_pose:
            break

    trace.depth_fixed_iter, trace.pose_fixed_iter = best_depth[2], best_pose[2]
    chosen = replace(state, depth=best_depth[1], pose=best_pose[1])
    return RefineResult(chosen, state, trace)
