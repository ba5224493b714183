"""Pinhole camera, SE(3) algebra, projection and trajectory alignment.

Twists are plain ``(6,)`` arrays ordered ``(wx, wy, wz, vx, vy, vz)``.
Pose updates are applied on the left: ``T <- exp(delta) @ T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    BranchAmbiguityError,
    DegenerateConfigurationError,
    InvalidArgumentError,
)

BEHIND_CAMERA_EPS = 1e-6
# Below this angle the closed forms lose digits to cancellation; the series
# (through theta^6) are accurate to machine precision up to it.
_SMALL_ANGLE = 1e-2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def downscaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics for an image box-downsampled by an integer factor.

        Pixel centres are kept consistent: working pixel ``x`` covers input
        pixels ``factor*x .. factor*x + factor - 1``.
        """
        w = -(-self.width // factor)
        h = -(-self.height // factor)
        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
            width=w,
            height=h,
        )

    def pixel_grid(self) -> np.ndarray:
        """``(H, W, 2)`` array of integer pixel coordinates ``(x, y)``."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([xs, ys], axis=-1).astype(np.float64)

    def unproject(self, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Back-project pixels ``(..., 2)`` at depths ``(...)`` to camera points."""
        pixels = np.asarray(pixels, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        x = (pixels[..., 0] - self.cx) / self.fx
        y = (pixels[..., 1] - self.cy) / self.fy
        return np.stack([x * depth, y * depth, depth], axis=-1)


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid transform mapping points ``X -> R @ X + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("pose has non-finite entries")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
            raise InvalidArgumentError("rotation is not orthonormal")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray, tol: float = 1e-9) -> "Se3Pose":
        """Build from a 3x4 or 4x4 matrix, re-orthonormalizing within ``tol``."""
        m = np.asarray(m, dtype=np.float64)
        r = m[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1) > tol:
            raise InvalidArgumentError("rotation block is not orthonormal")
        return cls(orthonormalize(r), m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        r = orthonormalize(self.rotation @ other.rotation)
        t = self.rotation @ other.translation + self.translation
        return Se3Pose(r, t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape ``(..., 3)``."""
        return points @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(_so3_log(self.rotation)))


def _check_twist(twist) -> np.ndarray:
    w = np.asarray(twist, dtype=np.float64).reshape(-1)
    if w.shape != (6,):
        raise InvalidArgumentError(f"twist must have 6 components, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("twist has non-finite components")
    return w


def _exp_coefficients(theta: float) -> tuple[float, float, float]:
    """(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3) with small-angle series."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        t4 = t2 * t2
        return (1 - t2 / 6 + t4 / 120 - t4 * t2 / 5040,
                0.5 - t2 / 24 + t4 / 720 - t4 * t2 / 40320,
                1 / 6 - t2 / 120 + t4 / 5040 - t4 * t2 / 362880)
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1 - c) / theta**2, (theta - s) / theta**3


def exp_map(twist) -> Se3Pose:
    """SE(3) exponential of a twist ``(omega, v)``."""
    w = _check_twist(twist)
    omega, v = w[:3], w[3:]
    theta = float(np.linalg.norm(omega))
    a, b, c = _exp_coefficients(theta)
    om = hat(omega)
    om2 = om @ om
    rotation = np.eye(3) + a * om + b * om2
    v_mat = np.eye(3) + b * om + c * om2
    return Se3Pose(orthonormalize(rotation), v_mat @ v)


def _so3_log(r: np.ndarray) -> np.ndarray:
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    skew = vee(r - r.T) / 2.0  # = sin(t) * axis
    sin_t = float(np.linalg.norm(skew))
    theta = float(np.arctan2(sin_t, cos_t))
    if theta < _SMALL_ANGLE:
        return skew * (1 + theta**2 / 6 + 7 * theta**4 / 360 + 31 * theta**6 / 15120)
    if theta < np.pi / 2:
        return skew * (theta / sin_t)
    # Near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part and fix its sign from the antisymmetric one.
    aat = ((r + r.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(aat)))
    axis = aat[:, k] / np.sqrt(aat[k, k])
    if axis @ skew < 0:
        axis = -axis
    return axis * theta


def log_map(pose: Se3Pose) -> np.ndarray:
    """Inverse of :func:`exp_map` on the principal branch."""
    r = pose.rotation
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arctan2(np.linalg.norm(vee(r - r.T)) / 2.0, cos_t))
    if theta >= np.pi - 1e-6:
        raise BranchAmbiguityError(f"rotation angle {theta:.9f} too close to pi")
    omega = _so3_log(r)
    theta = float(np.linalg.norm(omega))
    om = hat(omega)
    if theta < _SMALL_ANGLE:
        coef = 1 / 12 + theta**2 / 720 + theta**4 / 30240
    else:
        coef = (1 - theta * np.sin(theta) / (2 * (1 - np.cos(theta)))) / theta**2
    v_inv = np.eye(3) - 0.5 * om + coef * (om @ om)
    return np.concatenate([omega, v_inv @ pose.translation])


def project(pixels, depth, pose: Se3Pose, K: CameraIntrinsics):
    """Project target pixels at given depths into the other view.

    Vectorized over leading dimensions of ``pixels (..., 2)`` and
    ``depth (...)``. Returns ``(u_prime, z_prime, valid)`` where ``valid`` is
    false for points with ``z' <= 1e-6`` (their ``u_prime`` is meaningless).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise InvalidArgumentError("depth must be positive")
    pts = pose.transform(K.unproject(pixels, depth))
    return _pinhole(pts, K)


def _pinhole(pts: np.ndarray, K: CameraIntrinsics):
    z = pts[..., 2]
    valid = z > BEHIND_CAMERA_EPS
    zs = np.where(valid, z, 1.0)
    u = np.stack(
        [K.fx * pts[..., 0] / zs + K.cx, K.fy * pts[..., 1] / zs + K.cy], axis=-1
    )
    return u, z, valid


def point_jacobian(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(delta) for points already in the destination camera frame.

    ``points`` is ``(..., 3)``; result is ``(..., 2, 6)`` for the left
    perturbation ``exp(delta) @ T``.
    """
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    iz = 1.0 / z
    iz2 = iz * iz
    zeros = np.zeros_like(z)
    # du/dX' composed with dX'/d(delta) = [-[X']x | I]
    row_u = np.stack(
        [
            -K.fx * x * y * iz2,
            K.fx * (1 + x * x * iz2),
            -K.fx * y * iz,
            K.fx * iz,
            zeros,
            -K.fx * x * iz2,
        ],
        axis=-1,
    )
    row_v = np.stack(
        [
            -K.fy * (1 + y * y * iz2),
            K.fy * x * y * iz2,
            K.fy * x * iz,
            zeros,
            K.fy * iz,
            -K.fy * y * iz2,
        ],
        axis=-1,
    )
    return np.stack([row_u, row_v], axis=-2)


def projection_jacobian(pixels, depth, pose: Se3Pose, K: CameraIntrinsics) -> np.ndarray:
    """Jacobian of :func:`project` w.r.t. a left pose perturbation at zero.

    Columns are ordered ``(wx, wy, wz, vx, vy, vz)``.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    pts = pose.transform(K.unproject(pixels, depth))
    if np.any(pts[..., 2] <= BEHIND_CAMERA_EPS):
        raise BehindCameraError("point projects behind the camera")
    return point_jacobian(pts, K)


@dataclass(frozen=True, eq=False)
class Sim3Alignment:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def umeyama_align(est, gt) -> Sim3Alignment:
    """Least-squares similarity mapping ``est`` onto ``gt`` (Umeyama 1991)."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise InvalidArgumentError("point sets must both be (N, 3)")
    n = est.shape[0]
    if n < 3:
        raise DegenerateConfigurationError("need at least 3 points")
    mu_e, mu_g = est.mean(0), gt.mean(0)
    de, dg = est - mu_e, gt - mu_g
    sv_e = np.linalg.svd(de, compute_uv=False)
    sv_g = np.linalg.svd(dg, compute_uv=False)
    if sv_e[1] <= 1e-10 * max(sv_e[0], 1e-300) or sv_g[1] <= 1e-10 * max(sv_g[0], 1e-300):
        raise DegenerateConfigurationError("points are collinear or coincident")
    cov = dg.T @ de / n
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1
    rotation = orthonormalize(u @ s @ vt)
    var_e = (de**2).sum() / n
    scale = float(np.trace(np.diag(d) @ s) / var_e)
    translation = mu_g - scale * rotation @ mu_e
    return Sim3Alignment(scale, rotation, translation)
