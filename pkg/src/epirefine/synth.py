"""Two-view synthetic scenes of textured planes with analytic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, RendererGapError
from .geometry import CameraIntrinsics, Se3Pose, exp_map, orthonormalize, project
from .image import WORKING_FACTOR, downsample_area, features_from_gray, image_gradients, interior
from .matcher import D_MAX, D_MIN

TEXTURES = ("checker", "noise", "stripes")
TEXTURE_THRESHOLD = 0.05


@dataclass(frozen=True)
class Plane:
    """Textured plane ``normal . X = offset`` in world coordinates."""

    normal: tuple
    offset: float
    texture: str = "checker"
    scale: float = 0.25
    angle_deg: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"plane normal must be a unit 3-vector: {self.normal}")
        if self.texture not in TEXTURES:
            raise InvalidArgumentError(f"unknown texture {self.texture!r}")
        if self.scale <= 0:
            raise InvalidArgumentError("texture scale must be positive")

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, dtype=np.float64)
        ref = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(ref, n)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        a = np.deg2rad(self.angle_deg)
        return np.cos(a) * e1 + np.sin(a) * e2, -np.sin(a) * e1 + np.cos(a) * e2


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple = ()
    background_depth: float | None = None


@dataclass(frozen=True)
class NoiseSpec:
    depth_noise: float = 0.0
    pose_rot_noise: float = 0.0
    pose_trans_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.depth_noise, self.pose_rot_noise, self.pose_trans_noise) < 0:
            raise InvalidArgumentError("noise magnitudes must be non-negative")


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Integer lattice hash to [0, 1); identical on every platform."""
    h = (ix.astype(np.int64) * 374761393 + iy.astype(np.int64) * 668265263 + salt * 2246822519) & 0xFFFFFFFF
    h = ((h ^ (h >> 13)) * 1274126177) & 0xFFFFFFFF
    h = h ^ (h >> 16)
    return h.astype(np.float64) / 2.0**32


def value_noise(a: np.ndarray, b: np.ndarray, octaves: int = 3) -> np.ndarray:
    out = np.zeros_like(a)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        f = 2.0**o
        x, y = a * f, b * f
        ix, iy = np.floor(x), np.floor(y)
        fx, fy = x - ix, y - iy
        sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
        v00 = _hash01(ix, iy, o)
        v10 = _hash01(ix + 1, iy, o)
        v01 = _hash01(ix, iy + 1, o)
        v11 = _hash01(ix + 1, iy + 1, o)
        out += amp * ((v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy)
        total += amp
        amp *= 0.5
    return out / total


def texture_value(plane: Plane, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intensity in [0.05, 0.95] at plane-local coordinates (metres).

    The checker is the product of two sinusoids: squares of side ``scale``
    with smooth transitions, so bilinear interpolation at working resolution
    stays accurate and every pixel carries gradient.
    """
    u, v = a / plane.scale, b / plane.scale
    if plane.texture == "checker":
        return 0.5 + 0.45 * np.sin(np.pi * u) * np.sin(np.pi * v)
    if plane.texture == "stripes":
        return 0.5 + 0.45 * np.sin(np.pi * u)
    return 0.1 + 0.8 * value_noise(u, v)


class RenderedView(NamedTuple):
    image: np.ndarray
    depth: np.ndarray
    depth_working: np.ndarray
    K_working: CameraIntrinsics


def _trace(scene: SceneSpec, pose: Se3Pose, K: CameraIntrinsics, pixels: np.ndarray):
    """Depth and intensity along the rays through ``pixels`` (camera ``pose`` = world->camera)."""
    rt = pose.rotation.T
    center = -rt @ pose.translation
    rays_cam = np.stack(
        [(pixels[..., 0] - K.cx) / K.fx, (pixels[..., 1] - K.cy) / K.fy, np.ones(pixels.shape[:-1])],
        axis=-1,
    )
    rays = rays_cam @ rt.T
    depth = np.full(pixels.shape[:-1], np.inf)
    value = np.zeros(pixels.shape[:-1])
    for plane in scene.planes:
        _hit(plane, center, rays, depth, value, only_missing=False)
    if scene.background_depth is not None:
        back = Plane(normal=(0.0, 0.0, 1.0), offset=float(scene.background_depth), texture="noise", scale=1.0)
        _hit(back, center, rays, depth, value, only_missing=True)
    if not np.all(np.isfinite(depth)):
        raise RendererGapError(f"{int((~np.isfinite(depth)).sum())} rays hit nothing")
    return depth, value


def _hit(plane: Plane, center, rays, depth, value, only_missing: bool):
    n = np.asarray(plane.normal)
    denom = rays @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (plane.offset - n @ center) / denom
    ok = np.isfinite(lam) & (lam > D_MIN) & (lam < D_MAX)
    ok &= ~np.isfinite(depth) if only_missing else lam < depth
    if not ok.any():
        return
    pts = center + lam[ok][:, None] * rays[ok]
    e1, e2 = plane.basis()
    rel = pts - plane.offset * n
    depth[ok] = lam[ok]
    value[ok] = texture_value(plane, rel @ e1, rel @ e2)


def render_view(scene: SceneSpec, pose: Se3Pose, K: CameraIntrinsics, supersample: int = 3) -> RenderedView:
    """Render intensity and z-depth for a camera with world->camera ``pose``.

    Intensity is averaged over ``supersample**2`` sub-pixel rays; depth is
    exact at pixel centres, at both input and working resolution.
    """
    ss = supersample
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    grid = K.pixel_grid()
    acc = np.zeros((K.height, K.width))
    for oy in offs:
        for ox in offs:
            _, val = _trace(scene, pose, K, grid + np.array([ox, oy]))
            acc += val
    image = acc / ss**2
    depth, _ = _trace(scene, pose, K, grid)
    Kw = K.downscaled(WORKING_FACTOR)
    depth_w, _ = _trace(scene, pose, Kw, Kw.pixel_grid())
    return RenderedView(image, depth, depth_w, Kw)


class Perturbation(NamedTuple):
    depth: np.ndarray
    pose: Se3Pose
    clamp_fraction: float


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def perturb(depth: np.ndarray, pose: Se3Pose, noise: NoiseSpec,
            d_min: float = D_MIN, d_max: float = D_MAX) -> Perturbation:
    """Seeded multiplicative log-normal depth noise and a left pose perturbation."""
    rng = np.random.default_rng(noise.seed)
    depth = np.asarray(depth, dtype=np.float64)
    noisy = depth * np.exp(noise.depth_noise * rng.standard_normal(depth.shape))
    lo, hi = np.nextafter(d_min, np.inf), np.nextafter(d_max, -np.inf)
    clamped = (noisy < lo) | (noisy > hi)
    noisy = np.clip(noisy, lo, hi)
    axis = random_unit(rng)
    direction = random_unit(rng)
    if noise.pose_rot_noise == 0 and noise.pose_trans_noise == 0:
        return Perturbation(noisy, pose, float(clamped.mean()))
    rot = exp_map(np.concatenate([axis * np.deg2rad(noise.pose_rot_noise), np.zeros(3)])).rotation
    delta = Se3Pose(rot, direction * noise.pose_trans_noise)
    return Perturbation(noisy, delta @ pose, float(clamped.mean()))


@dataclass(frozen=True, eq=False)
class TwoViewScene:
    """A rendered target/source pair with ground truth at working resolution.

    ``pose`` maps target camera coordinates to source camera coordinates.
    """

    target: np.ndarray
    source: np.ndarray
    depth: np.ndarray
    pose: Se3Pose
    K: CameraIntrinsics
    K_working: CameraIntrinsics
    spec: SceneSpec = field(repr=False, default=None)

    def gray_pair(self):
        return (downsample_area(self.target, WORKING_FACTOR), downsample_area(self.source, WORKING_FACTOR))

    def pyramids(self):
        t, s = self.gray_pair()
        return features_from_gray(t), features_from_gray(s)

    def textured(self, threshold: float = TEXTURE_THRESHOLD) -> np.ndarray:
        """Working-resolution pixels whose ``|d/dx| + |d/dy|`` exceeds ``threshold``."""
        gx, gy = image_gradients(self.gray_pair()[0])
        return np.abs(gx) + np.abs(gy) > threshold

    def observable(self, threshold: float = TEXTURE_THRESHOLD) -> np.ndarray:
        """Textured pixels that both views can match.

        Excludes the feature border band of the target and pixels whose
        ground-truth projection leaves the source interior.
        """
        Kw = self.K_working
        grid = Kw.pixel_grid()
        u, _, in_front = project(grid, self.depth, self.pose, Kw)
        return (self.textured(threshold) & in_front & interior(u, Kw.width, Kw.height)
                & interior(grid, Kw.width, Kw.height))


def render_pair(scene: SceneSpec, relative_pose: Se3Pose, K: CameraIntrinsics, supersample: int = 3) -> TwoViewScene:
    """Target camera at the world origin, source camera at ``relative_pose``."""
    tgt = render_view(scene, Se3Pose.identity(), K, supersample)
    src = render_view(scene, relative_pose, K, supersample)
    return TwoViewScene(tgt.image, src.image, tgt.depth_working, relative_pose, K, tgt.K_working, scene)


def pose_from_params(rotvec_deg, translation) -> Se3Pose:
    w = np.deg2rad(np.asarray(rotvec_deg, dtype=np.float64))
    rot = exp_map(np.concatenate([w, np.zeros(3)])).rotation
    return Se3Pose(orthonormalize(rot), np.asarray(translation, dtype=np.float64))


# Wide-angle 640x192 acceptance camera; working resolution is 160x48.
ACCEPTANCE_K = CameraIntrinsics(fx=120.0, fy=120.0, cx=319.5, cy=95.5, width=640, height=192)
ALIGNMENT_K = CameraIntrinsics(fx=200.0, fy=200.0, cx=319.5, cy=95.5, width=640, height=192)
ACCEPTANCE_CREASE_DEPTH = 3.0
ACCEPTANCE_SLANT_DEG = 30.0
YAW_DEG = (0.0, 2.0, 0.0)
NO_ROTATION = (0.0, 0.0, 0.0)
BASELINE = (0.3, 0.0, 0.0)
BASELINE_LEFT = (-0.3, 0.0, 0.0)


def vee_scene(slant_deg: float = ACCEPTANCE_SLANT_DEG, crease_depth: float = ACCEPTANCE_CREASE_DEPTH,
              scale: float = 0.3) -> SceneSpec:
    """Two slanted checker walls meeting in a vertical crease straight ahead.

    The walls come closer toward the image sides, so depth varies across the
    view; a single plane would leave the relative pose only partly observable
    once depth is free per pixel. Both walls share one texture lattice, and
    when ``crease_depth * sin(slant) / scale`` is an integer the pattern is
    continuous across the crease instead of forming a step edge there.
    """
    a = np.deg2rad(slant_deg)
    offset = crease_depth * float(np.cos(a))
    right = (float(np.sin(a)), 0.0, float(np.cos(a)))
    left = (-float(np.sin(a)), 0.0, float(np.cos(a)))
    return SceneSpec(planes=(
        Plane(normal=right, offset=offset, texture="checker", scale=scale),
        Plane(normal=left, offset=offset, texture="checker", scale=scale),
    ))


def acceptance_scene() -> SceneSpec:
    return vee_scene(scale=0.3)


def acceptance_pose() -> Se3Pose:
    """Sideways baseline of 0.3 m with a 2 degree yaw."""
    return pose_from_params(YAW_DEG, BASELINE)


def acceptance_pair(supersample: int = 3) -> TwoViewScene:
    """Wide-angle pair used to exercise the full refinement loop."""
    return render_pair(acceptance_scene(), acceptance_pose(), ACCEPTANCE_K, supersample)


def alignment_scene() -> SceneSpec:
    return vee_scene(scale=0.5)


def alignment_pose() -> Se3Pose:
    """Baseline to the left with the same yaw.

    Moving against the yaw lets the translation's per-wall magnification
    offset the rotation's, which keeps the two views' features alike.
    """
    return pose_from_params(YAW_DEG, BASELINE_LEFT)


def alignment_pair(supersample: int = 3) -> TwoViewScene:
    """Narrower-angle pair with coarser texture for pose alignment with known depth."""
    return render_pair(alignment_scene(), alignment_pose(), ALIGNMENT_K, supersample)


def shift_scene() -> SceneSpec:
    return SceneSpec(planes=(Plane(normal=(0.0, 0.0, 1.0), offset=ACCEPTANCE_CREASE_DEPTH,
                                   texture="checker", scale=0.3),))


def shift_pose() -> Se3Pose:
    return pose_from_params(NO_ROTATION, BASELINE)


def shift_pair(supersample: int = 3) -> TwoViewScene:
    """Fronto-parallel wall under a pure sideways baseline.

    With the acceptance intrinsics the disparity is exactly three working
    pixels, so the source is an integer shift of the target and ground truth
    matches every feature exactly.
    """
    return render_pair(shift_scene(), shift_pose(), ACCEPTANCE_K, supersample)
