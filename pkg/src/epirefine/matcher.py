"""Depth candidates along epipolar lines and their matching costs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics, Se3Pose, project
from .image import FeaturePyramid, bilinear_sample, interior, level_coords

SENTINEL_COST = 1e9
D_MIN = 0.1
D_MAX = 1000.0
# Candidate spacing is D / RANGE_SCALE per radius step at level 1.
RANGE_SCALE = 100.0


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """``depths[level-1, i + r, y, x]`` is ``D[y, x] + i * n * D[y, x] / C``, clamped."""

    depths: np.ndarray
    step: np.ndarray
    radius: int
    range_scale: float

    @property
    def levels(self) -> int:
        return self.depths.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.depths[0, self.radius]


@dataclass(frozen=True, eq=False)
class CostMap:
    """Matching costs aligned with a :class:`CandidateSet`.

    Masked entries hold :data:`SENTINEL_COST` and ``valid`` is false there.
    """

    costs: np.ndarray
    valid: np.ndarray


def clamp_depth(depth, d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    """Clamp into the open interval ``(d_min, d_max)``."""
    return np.clip(depth, np.nextafter(d_min, np.inf), np.nextafter(d_max, -np.inf))


def depth_candidates(depth: np.ndarray, r: int = 8, C: float = RANGE_SCALE, levels: int = 3,
                     d_min: float = D_MIN, d_max: float = D_MAX) -> CandidateSet:
    if r < 1 or C <= 0 or levels < 1:
        raise InvalidArgumentError(f"need r >= 1, C > 0, levels >= 1 (got {r}, {C}, {levels})")
    depth = np.asarray(depth, dtype=np.float64)
    step = depth / C
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    scales = np.arange(1, levels + 1, dtype=np.float64)
    rel = scales[:, None, None, None] * offsets[None, :, None, None]
    cands = depth + rel * step
    cands[:, r] = depth  # exact, independent of rounding in the product
    return CandidateSet(clamp_depth(cands, d_min, d_max), step, r, float(C))


def _cost_block(target, source: FeaturePyramid, cands, rows, pose, K):
    y0, y1 = rows
    levels, ncand = cands.shape[:2]
    grid = K.pixel_grid()[y0:y1]
    t = target[y0:y1]
    inner = interior(grid, K.width, K.height)
    costs = np.empty((levels, ncand, y1 - y0, grid.shape[1]))
    valid = np.empty(costs.shape, dtype=bool)
    for li in range(levels):
        d = cands[li, :, y0:y1]
        u, _, in_front = project(np.broadcast_to(grid, d.shape + (2,)), d, pose, K)
        sampled, oob = bilinear_sample(source.level(li + 1), level_coords(u, li + 1))
        c = np.abs(sampled - t).mean(axis=-1)
        ok = in_front & ~oob & interior(u, K.width, K.height) & inner
        costs[li] = np.where(ok, c, SENTINEL_COST)
        valid[li] = ok
    return costs, valid


def sample_cost_map(target: np.ndarray, source: FeaturePyramid, candidates: CandidateSet,
                    pose: Se3Pose, K: CameraIntrinsics, workers: int = 1) -> CostMap:
    """Absolute feature differences between target pixels and source samples.

    Each candidate depth is projected into the source under ``pose``; level
    ``n`` candidates sample source pyramid level ``n``. The cost is the mean
    absolute difference over feature channels.
    """
    target = np.asarray(target, dtype=np.float64)
    h, w = candidates.depths.shape[2:]
    if target.shape[:2] != (h, w) or source.shape != (h, w) or (K.height, K.width) != (h, w):
        raise InvalidArgumentError(
            f"resolution mismatch: target {target.shape[:2]}, source {source.shape}, "
            f"candidates {(h, w)}, intrinsics {(K.height, K.width)}"
        )
    if candidates.levels > len(source.levels):
        raise InvalidArgumentError("source pyramid has fewer levels than the candidate set")
    cands = candidates.depths
    if workers <= 1:
        costs, valid = _cost_block(target, source, cands, (0, h), pose, K)
        return CostMap(costs, valid)
    bounds = np.linspace(0, h, min(workers, h) + 1).astype(int)
    blocks = list(zip(bounds[:-1], bounds[1:]))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda b: _cost_block(target, source, cands, b, pose, K), blocks))
    return CostMap(np.concatenate([p[0] for p in parts], axis=2),
                   np.concatenate([p[1] for p in parts], axis=2))


def coarse_depth_and_mask(teacher_depth: np.ndarray, target: FeaturePyramid, source: FeaturePyramid,
                          pose: Se3Pose, K: CameraIntrinsics, wide_radius: int = 24,
                          ratio: float = 0.15, C: float = RANGE_SCALE, r: int = 8,
                          d_min: float = D_MIN, d_max: float = D_MAX):
    """Best-matching depth in a wide window around the teacher, and agreement mask.

    Returns ``(coarse_depth, consistent)``. Pixels with no valid candidate
    keep the teacher depth and are marked inconsistent.
    """
    if wide_radius < r:
        raise InvalidArgumentError(f"wide radius {wide_radius} smaller than sampling radius {r}")
    teacher_depth = np.asarray(teacher_depth, dtype=np.float64)
    cands = depth_candidates(teacher_depth, wide_radius, C, 1, d_min, d_max)
    cm = sample_cost_map(target.base, source, cands, pose, K)
    best = np.argmin(cm.costs[0], axis=0)
    coarse = np.take_along_axis(cands.depths[0], best[None], axis=0)[0]
    any_valid = cm.valid[0].any(axis=0)
    coarse = np.where(any_valid, coarse, teacher_depth)
    consistent = any_valid & (np.abs(coarse - teacher_depth) <= ratio * teacher_depth)
    return coarse, consistent
