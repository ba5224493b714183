"""Feature-metric Gauss-Newton pose alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InsufficientOverlapError, InvalidArgumentError, SingularSystemError
from .geometry import CameraIntrinsics, Se3Pose, exp_map, point_jacobian, project
from .image import bilinear_sample_grad, interior

MIN_VALID_PIXELS = 50
MAX_ESCALATIONS = 5


@dataclass(frozen=True, eq=False)
class ResidualMap:
    """``residual = m_s<u'> - m_t[u]`` with the source feature gradient at ``u'``.

    ``grad`` has shape ``(H, W, C, 2)`` holding d/dx and d/dy of each channel.
    """

    residual: np.ndarray
    grad: np.ndarray
    valid: np.ndarray

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


@dataclass(frozen=True, eq=False)
class NormalEquations:
    H: np.ndarray
    b: np.ndarray
    valid_count: int


def feature_residuals(target: np.ndarray, source: np.ndarray, depth: np.ndarray, pose: Se3Pose,
                      K: CameraIntrinsics) -> ResidualMap:
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if target.shape != source.shape or depth.shape != target.shape[:2] or depth.shape != (K.height, K.width):
        raise InvalidArgumentError(
            f"shape mismatch: target {target.shape}, source {source.shape}, depth {depth.shape}"
        )
    u, _, in_front = project(K.pixel_grid(), depth, pose, K)
    sampled, grad, oob = bilinear_sample_grad(source, u)
    grid = K.pixel_grid()
    valid = in_front & ~oob & interior(u, K.width, K.height) & interior(grid, K.width, K.height)
    residual = np.where(valid[..., None], sampled - target, 0.0)
    return ResidualMap(residual, grad, valid)


def residual_jacobian(residuals: ResidualMap, depth: np.ndarray, pose: Se3Pose, K: CameraIntrinsics) -> np.ndarray:
    """d(residual)/d(delta) per pixel and channel, ``(H, W, C, 6)``; zero where invalid."""
    pts = pose.transform(K.unproject(K.pixel_grid(), depth))
    z_ok = pts[..., 2] > 1e-6
    pts = np.where(z_ok[..., None], pts, np.array([0.0, 0.0, 1.0]))
    jp = point_jacobian(pts, K)
    jac = np.einsum("hwcj,hwjk->hwck", residuals.grad, jp)
    return np.where(residuals.valid[..., None, None], jac, 0.0)


def normal_equations(residuals: ResidualMap, depth: np.ndarray, pose: Se3Pose, K: CameraIntrinsics,
                     weights: np.ndarray | None = None) -> NormalEquations:
    valid = residuals.valid
    w = np.ones(valid.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    jac = residual_jacobian(residuals, depth, pose, K)[valid]
    r = residuals.residual[valid]
    wv = w[valid]
    jw = jac * wv[:, None, None]
    H = np.einsum("ncj,nck->jk", jw, jac)
    b = -np.einsum("ncj,nc->j", jw, r)
    return NormalEquations(0.5 * (H + H.T), b, int(valid.sum()))


def solve_damped(eq: NormalEquations, damping: float = 1e-4) -> np.ndarray:
    """Solve ``(H + lambda diag(H)) delta = b``, escalating lambda on failure."""
    lam = damping
    diag = np.diag(np.diag(eq.H))
    for _ in range(MAX_ESCALATIONS + 1):
        try:
            factor = cho_factor(eq.H + lam * diag, lower=True, check_finite=True)
            delta = cho_solve(factor, eq.b)
            if np.all(np.isfinite(delta)):
                return delta
        except (LinAlgError, ValueError):
            pass
        lam *= 10.0
    raise SingularSystemError(f"normal equations singular after damping up to {lam / 10:g}")


def gauss_newton_step(residuals: ResidualMap, depth: np.ndarray, pose: Se3Pose, K: CameraIntrinsics,
                      weights: np.ndarray | None = None, damping: float = 1e-4) -> np.ndarray:
    """One damped Gauss-Newton twist for the weighted feature residuals."""
    eq = normal_equations(residuals, depth, pose, K, weights)
    if eq.valid_count < MIN_VALID_PIXELS:
        raise InsufficientOverlapError(f"only {eq.valid_count} valid pixels (< {MIN_VALID_PIXELS})")
    if not np.any(eq.b):
        return np.zeros(6)
    return solve_damped(eq, damping)


def apply_pose_update(pose: Se3Pose, delta) -> Se3Pose:
    """Left-compose ``exp(delta)`` onto ``pose``."""
    return exp_map(delta) @ pose


def weighted_energy(residuals: ResidualMap, weights: np.ndarray | None = None) -> float:
    """Weight-normalized squared residual over valid pixels."""
    valid = residuals.valid
    w = np.ones(valid.shape) if weights is None else weights
    wv = w[valid]
    if wv.sum() <= 0:
        return float("inf")
    return float((wv * (residuals.residual[valid] ** 2).sum(-1)).sum() / wv.sum())


@dataclass(frozen=True, eq=False)
class PoseStep:
    pose: Se3Pose
    delta: np.ndarray
    energy_before: float
    energy_after: float
    damping: float
    escalations: int


def damped_pose_step(target: np.ndarray, source: np.ndarray, depth: np.ndarray, pose: Se3Pose,
                     K: CameraIntrinsics, weights: np.ndarray | None = None, damping: float = 1e-4) -> PoseStep:
    """Levenberg-style step: raise damping x10 while the weighted energy grows.

    If no damping level up to ``damping * 10**5`` lowers the energy the pose
    is returned unchanged with a zero twist.
    """
    res = feature_residuals(target, source, depth, pose, K)
    e0 = weighted_energy(res, weights)
    eq = normal_equations(res, depth, pose, K, weights)
    if eq.valid_count < MIN_VALID_PIXELS:
        raise InsufficientOverlapError(f"only {eq.valid_count} valid pixels (< {MIN_VALID_PIXELS})")
    lam = damping
    for esc in range(MAX_ESCALATIONS + 1):
        if not np.any(eq.b):
            break
        delta = solve_damped(eq, lam)
        candidate = apply_pose_update(pose, delta)
        e1 = weighted_energy(feature_residuals(target, source, depth, candidate, K), weights)
        if e1 <= e0:
            return PoseStep(candidate, delta, e0, e1, lam, esc)
        lam *= 10.0
    return PoseStep(pose, np.zeros(6), e0, e0, lam, MAX_ESCALATIONS)
