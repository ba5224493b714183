"""Bounded depth updates and the confidence weights used by pose alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics, Se3Pose
from .image import downsample_area, upsample_bilinear, warp_image
from .matcher import D_MAX, D_MIN, CandidateSet, CostMap, clamp_depth

CONFIDENCE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class CostHistory:
    """Running summary of matching costs per pixel.

    ``min_cost`` tracks the best cost, ``peakiness`` the gap between the best
    cost and the best competitor outside its immediate neighbourhood.
    """

    min_cost: np.ndarray
    peakiness: np.ndarray
    decay: float = 0.5


def cost_statistics(costs: CostMap):
    """Per-pixel ``(min_cost, peakiness, any_valid)`` over all levels.

    Peakiness is averaged over levels; at each level it is the second-best
    cost among candidates not adjacent to the best one, minus the best.
    """
    c = np.where(costs.valid, costs.costs, np.inf)
    levels, ncand = c.shape[:2]
    any_valid = costs.valid.any(axis=(0, 1))
    min_cost = np.where(any_valid, c.min(axis=(0, 1)), 0.0)
    idx = np.arange(ncand)[:, None, None]
    peaks = np.zeros((levels,) + c.shape[2:])
    for li in range(levels):
        best = np.argmin(c[li], axis=0)
        best_val = np.take_along_axis(c[li], best[None], axis=0)[0]
        competitors = np.where(np.abs(idx - best) > 1, c[li], np.inf)
        second = competitors.min(axis=0)
        with np.errstate(invalid="ignore"):
            gap = second - best_val
        peaks[li] = np.where(np.isfinite(gap), gap, 0.0)
    return min_cost, peaks.mean(axis=0), any_valid


def init_history(costs: CostMap, decay: float = 0.5) -> CostHistory:
    min_cost, peak, _ = cost_statistics(costs)
    return CostHistory(min_cost, peak, decay)


def update_history(history: CostHistory, costs: CostMap) -> CostHistory:
    """Exponential moving average; pixels with no valid candidate keep their history."""
    a = history.decay
    min_cost, peak, ok = cost_statistics(costs)
    new_min = np.where(ok, a * history.min_cost + (1 - a) * min_cost, history.min_cost)
    new_peak = np.where(ok, a * history.peakiness + (1 - a) * peak, history.peakiness)
    return CostHistory(new_min, new_peak, a)


def soft_argmin(costs: np.ndarray, valid: np.ndarray, depths: np.ndarray, temperature: float):
    """Expected candidate depth under ``softmax(-cost / temperature)``.

    Operates along axis 0. Returns ``(target, any_valid)``.
    """
    c = np.where(valid, costs, np.inf)
    cmin = c.min(axis=0)
    any_valid = np.isfinite(cmin)
    with np.errstate(invalid="ignore"):
        wts = np.where(valid, np.exp(-(c - np.where(any_valid, cmin, 0.0)) / temperature), 0.0)
    total = wts.sum(axis=0)
    target = (wts * depths).sum(axis=0) / np.where(any_valid, total, 1.0)
    return np.where(any_valid, target, depths[depths.shape[0] // 2]), any_valid


def depth_update(costs: CostMap, candidates: CandidateSet, depth: np.ndarray, temperature: float = 0.0005,
                 d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    """Move each depth toward the soft-argmin of its level-1 candidates.

    The step is squashed by ``tanh`` so that ``|D_new - D| < r * D / C``.
    """
    if temperature <= 0:
        raise InvalidArgumentError("soft-argmin temperature must be positive")
    depth = np.asarray(depth, dtype=np.float64)
    target, ok = soft_argmin(costs.costs[0], costs.valid[0], candidates.depths[0], temperature)
    bound = candidates.radius * candidates.step
    step = bound * np.tanh((target - depth) / bound)
    return clamp_depth(np.where(ok, depth + step, depth), d_min, d_max)


def texture_confidence(gradient_magnitude: np.ndarray, kappa: float = 10.0, g0: float = 0.05) -> np.ndarray:
    return 1.0 / (1.0 + kappa * np.maximum(0.0, g0 - gradient_magnitude))


def static_confidence(target_feats: np.ndarray, source_feats: np.ndarray, depth: np.ndarray,
                      pose: Se3Pose, K: CameraIntrinsics, kappa: float = 10.0, g0: float = 0.05) -> np.ndarray:
    """Texture-based confidence of the pair, computed once.

    Each image gets ``1 / (1 + kappa * max(0, g0 - |grad|))``; the source map
    is warped into the target frame and the two are multiplied.
    """
    w_t = texture_confidence(np.hypot(target_feats[..., 1], target_feats[..., 2]), kappa, g0)
    w_s = texture_confidence(np.hypot(source_feats[..., 1], source_feats[..., 2]), kappa, g0)
    w_s_warped, _ = warp_image(w_s, depth, pose, K)
    return w_t * w_s_warped


def evolving_confidence(history: CostHistory, temperature: float = 0.1) -> np.ndarray:
    """Confidence from the cost history: low best cost and a distinct minimum."""
    if temperature <= 0:
        raise InvalidArgumentError("confidence temperature must be positive")
    w = np.exp(-history.min_cost / temperature) * -np.expm1(-history.peakiness / temperature)
    return np.clip(w, CONFIDENCE_FLOOR, 1.0)


def upsample_depth(depth: np.ndarray, full_w: int, full_h: int) -> np.ndarray:
    """Bilinear upsampling to input resolution."""
    return upsample_bilinear(np.asarray(depth, dtype=np.float64), full_w, full_h)


def downsample_depth(depth: np.ndarray, factor: int = 4) -> np.ndarray:
    return downsample_area(np.asarray(depth, dtype=np.float64), factor)
