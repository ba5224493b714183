"""Depth and odometry evaluation, plus the photometric monitoring loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import EmptyGroundTruthError, EmptyRegionError, InvalidArgumentError
from .geometry import Se3Pose, umeyama_align

MIN_DEPTH = 1e-3
MAX_DEPTH = 80.0
SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def summary(self) -> str:
        return format_summary(asdict(self))


@dataclass(frozen=True)
class OdomMetrics:
    """``t_err`` in percent and ``r_err`` in deg/100 m; ``None`` if the track is under 100 m."""

    t_err: float | None
    r_err: float | None
    ate: float

    def summary(self) -> str:
        return format_summary(asdict(self))


@dataclass(frozen=True)
class LossConfig:
    lambda_p: float = 1.0
    lambda_s: float = 1e-3
    alpha_ssim: float = 0.85

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_s, self.alpha_ssim) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")


def format_summary(values: dict) -> str:
    """Single line of space-separated ``key=value`` pairs."""
    parts = []
    for k, v in values.items():
        parts.append(f"{k}={'nan' if v is None else format(v, '.6g')}")
    return " ".join(parts)


def depth_metrics(pred: np.ndarray, gt: np.ndarray, cap: float = MAX_DEPTH,
                  median_scale: bool = True) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = np.isfinite(gt) & (gt > 0)
    if not mask.any():
        raise EmptyGroundTruthError("no valid ground-truth pixels")
    p, g = pred[mask], gt[mask]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, MIN_DEPTH, cap)
    g = np.clip(g, MIN_DEPTH, cap)
    thresh = np.maximum(g / p, p / g)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(g - p) / g)),
        sq_rel=float(np.mean((g - p) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - p) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25**2)),
        delta3=float(np.mean(thresh < 1.25**3)),
    )


def _path_distances(poses) -> np.ndarray:
    pos = np.array([p.translation for p in poses])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def segment_errors(est, gt, lengths=SEGMENT_LENGTHS):
    """``(length, translation error / length, rotation angle / length)`` per segment.

    Every frame is a segment start; the segment ends at the first frame whose
    ground-truth path distance reaches ``start + length``.
    """
    dist = _path_distances(gt)
    out = []
    for i in range(len(gt)):
        for length in lengths:
            j = int(np.searchsorted(dist, dist[i] + length - 1e-9))
            if j >= len(gt):
                continue
            rel_gt = gt[i].inverse() @ gt[j]
            rel_est = est[i].inverse() @ est[j]
            err = rel_est.inverse() @ rel_gt
            out.append((length, np.linalg.norm(err.translation) / length, err.rotation_angle() / length))
    return out


def align_trajectory(est, gt):
    """Apply the 7-DoF similarity that best maps ``est`` positions onto ``gt``."""
    sim = umeyama_align([p.translation for p in est], [p.translation for p in gt])
    return [Se3Pose(sim.rotation @ p.rotation, sim.scale * sim.rotation @ p.translation + sim.translation)
            for p in est]


def odometry_metrics(est, gt) -> OdomMetrics:
    """ATE after similarity alignment and KITTI-style segment drift rates.

    Poses are camera-to-world, one per frame, matched by index.
    """
    if len(est) != len(gt) or len(gt) < 2:
        raise InvalidArgumentError("trajectories must have equal length >= 2")
    est_pos = np.array([p.translation for p in est])
    gt_pos = np.array([p.translation for p in gt])
    sim = umeyama_align(est_pos, gt_pos)
    ate = float(np.sqrt(np.mean(np.sum((sim.apply(est_pos) - gt_pos) ** 2, axis=1))))
    segs = segment_errors(align_trajectory(est, gt), gt)
    if not segs:
        return OdomMetrics(None, None, ate)
    t_err = 100.0 * float(np.mean([s[1] for s in segs]))
    r_err = 100.0 * float(np.rad2deg(np.mean([s[2] for s in segs])))
    return OdomMetrics(t_err, r_err, ate)


SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def ssim_loss(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel ``(1 - SSIM) / 2`` over 3x3 windows, clipped to [0, 1]."""
    size = (3, 3) + (1,) * (x.ndim - 2)

    def pool(a):
        return uniform_filter(a, size=size, mode="mirror")

    mu_x, mu_y = pool(x), pool(y)
    sx = pool(x * x) - mu_x**2
    sy = pool(y * y) - mu_y**2
    sxy = pool(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sx + sy + SSIM_C2)
    return np.clip((1 - num / den) / 2, 0, 1)


def photometric_error(target: np.ndarray, warped: np.ndarray, alpha: float = 0.85) -> np.ndarray:
    l1 = np.abs(target - warped)
    ssim = ssim_loss(target, warped)
    err = alpha * ssim + (1 - alpha) * l1
    return err.mean(axis=-1) if err.ndim == 3 else err


def smoothness_loss(disparity: np.ndarray, image: np.ndarray) -> float:
    """Edge-aware first-order smoothness of mean-normalized disparity."""
    d = disparity / np.mean(disparity)
    img = image if image.ndim == 2 else image.mean(axis=-1)
    dx = np.abs(np.diff(d, axis=1)) * np.exp(-np.abs(np.diff(img, axis=1)))
    dy = np.abs(np.diff(d, axis=0)) * np.exp(-np.abs(np.diff(img, axis=0)))
    return float(dx.mean() + dy.mean())


def photometric_loss(target: np.ndarray, warped_sources, disparity: np.ndarray,
                     cfg: LossConfig = LossConfig()) -> float:
    """``lambda_p * L_p + lambda_s * L_s`` with a per-pixel minimum over sources."""
    if not warped_sources:
        raise InvalidArgumentError("need at least one warped source")
    target = np.asarray(target, dtype=np.float64)
    errs = []
    for warped, mask in warped_sources:
        e = photometric_error(target, np.asarray(warped, dtype=np.float64), cfg.alpha_ssim)
        errs.append(np.where(mask, e, np.inf))
    best = np.min(errs, axis=0)
    ok = np.isfinite(best)
    if not ok.any():
        raise EmptyRegionError("no pixel is valid in any warped source")
    lp = float(best[ok].mean())
    ls = smoothness_loss(np.asarray(disparity, dtype=np.float64), target)
    return cfg.lambda_p * lp + cfg.lambda_s * ls
