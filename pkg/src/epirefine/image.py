"""Image grids, bilinear sampling, warping and handcrafted matching features.

Grids are numpy arrays of shape ``(H, W)`` or ``(H, W, C)``; pixel ``(x, y)``
lives at ``grid[y, x]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InvalidArgumentError, TooSmallError
from .geometry import CameraIntrinsics, Se3Pose, project

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
WORKING_FACTOR = 4
NORM_WINDOW = 7
# Large relative to intensity contrast, so the channel acts as a band-pass of
# gray rather than a contrast-invariant code that amplifies flat regions.
NORM_EPS = 1.0
PYRAMID_LEVELS = 3
# Features this close to the border see the padding of the normalization window.
FEATURE_MARGIN = NORM_WINDOW // 2
# Round-off slack so a reprojected pixel row does not flicker across the margin.
COORD_TOL = 1e-6


def _bilinear_setup(grid, coords):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise InvalidArgumentError("cannot sample an empty grid")
    if grid.ndim == 2:
        grid = grid[..., None]
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise InvalidArgumentError("non-finite sample coordinate")
    h, w = grid.shape[:2]
    x, y = coords[..., 0], coords[..., 1]
    oob = (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]
    corners = grid[y0, x0], grid[y0, x1], grid[y1, x0], grid[y1, x1]
    return corners, ax, ay, oob


def bilinear_sample(grid: np.ndarray, coords: np.ndarray):
    """Bilinearly sample ``grid`` at ``coords (..., 2)`` given as ``(x, y)``.

    Coordinates outside ``[0, W-1] x [0, H-1]`` are clamped to the border.
    Returns ``(values, out_of_bounds)``; ``values`` has shape
    ``coords.shape[:-1] + (C,)`` (``C = 1`` for single-channel grids).
    """
    (f00, f01, f10, f11), ax, ay, oob = _bilinear_setup(grid, coords)
    top = f00 * (1 - ax) + f01 * ax
    bottom = f10 * (1 - ax) + f11 * ax
    return top * (1 - ay) + bottom * ay, oob


def bilinear_sample_grad(grid: np.ndarray, coords: np.ndarray):
    """Like :func:`bilinear_sample` but also returns the interpolant's gradient.

    Returns ``(values, grad, out_of_bounds)`` with ``grad`` of shape
    ``values.shape + (2,)`` ordered ``(d/dx, d/dy)``. The gradient is the exact
    derivative of the bilinear surface inside each cell.
    """
    (f00, f01, f10, f11), ax, ay, oob = _bilinear_setup(grid, coords)
    top = f00 * (1 - ax) + f01 * ax
    bottom = f10 * (1 - ax) + f11 * ax
    values = top * (1 - ay) + bottom * ay
    gx = (f01 - f00) * (1 - ay) + (f11 - f10) * ay
    gy = bottom - top
    return values, np.stack([gx, gy], axis=-1), oob


def interior(coords: np.ndarray, width: int, height: int, margin: float = FEATURE_MARGIN) -> np.ndarray:
    """True where ``coords (..., 2)`` lie at least ``margin`` pixels inside the grid."""
    x, y = coords[..., 0], coords[..., 1]
    lo = margin - COORD_TOL
    return (x >= lo) & (x <= width - 1 - lo) & (y >= lo) & (y <= height - 1 - lo)


def to_luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ LUMA_WEIGHTS
    if image.ndim == 3 and image.shape[2] == 1:
        return image[..., 0]
    if image.ndim == 2:
        return image
    raise InvalidArgumentError(f"expected 1 or 3 channels, got shape {image.shape}")


def downsample_area(image: np.ndarray, factor: int) -> np.ndarray:
    """Box-average downsampling; ragged edges are padded by replication."""
    h, w = image.shape[:2]
    hh, ww = -(-h // factor), -(-w // factor)
    pad = [(0, hh * factor - h), (0, ww * factor - w)] + [(0, 0)] * (image.ndim - 2)
    padded = np.pad(image, pad, mode="edge")
    shape = (hh, factor, ww, factor) + image.shape[2:]
    return padded.reshape(shape).mean(axis=(1, 3))


def upsample_bilinear(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resize to ``width x height`` with pixel-centre-aligned bilinear sampling."""
    h, w = grid.shape[:2]
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    coords = np.stack(np.meshgrid(xs, ys), axis=-1)
    out, _ = bilinear_sample(grid, coords)
    return out[..., 0] if grid.ndim == 2 else out


def half_resize(grid: np.ndarray) -> np.ndarray:
    """Bilinear resize to half size, rounding up."""
    h, w = grid.shape[:2]
    return upsample_bilinear(grid, -(-w // 2), -(-h // 2))


def level_coords(coords: np.ndarray, level: int) -> np.ndarray:
    """Map level-1 pixel coordinates onto pyramid level ``level`` (1-based)."""
    s = 2.0 ** (level - 1)
    return (coords + 0.5) / s - 0.5


def image_gradients(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences (one-sided at the border) along x and y."""
    gy, gx = np.gradient(grid, axis=(0, 1))
    return gx, gy


def local_normalize(gray: np.ndarray, window: int = NORM_WINDOW, eps: float = NORM_EPS) -> np.ndarray:
    mean = uniform_filter(gray, size=window, mode="reflect")
    sq = uniform_filter(gray * gray, size=window, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return (gray - mean) / (std + eps)


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Matching features at the working resolution and two coarser levels.

    ``levels[0]`` is level 1 (1/4 input resolution); each further level is
    a bilinear half-resize of the previous one. Channels are
    (normalized intensity, d/dx, d/dy). ``gray`` is the working-resolution
    luminance the features were computed from.
    """

    levels: tuple
    gray: np.ndarray

    @property
    def base(self) -> np.ndarray:
        return self.levels[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].shape[:2]

    def level(self, n: int) -> np.ndarray:
        return self.levels[n - 1]


def features_from_gray(gray: np.ndarray, num_levels: int = PYRAMID_LEVELS) -> FeaturePyramid:
    """Build the pyramid from an image already at working resolution."""
    gx, gy = image_gradients(gray)
    base = np.stack([local_normalize(gray), gx, gy], axis=-1)
    levels = [base]
    for _ in range(num_levels - 1):
        levels.append(half_resize(levels[-1]))
    return FeaturePyramid(tuple(levels), gray)


def working_gray(image: np.ndarray) -> np.ndarray:
    """Luminance at working (1/4) resolution."""
    gray = to_luminance(image)
    if gray.shape[0] < 8 or gray.shape[1] < 8:
        raise TooSmallError(f"image {gray.shape[1]}x{gray.shape[0]} smaller than 8x8")
    return downsample_area(gray, WORKING_FACTOR)


def extract_features(image: np.ndarray, num_levels: int = PYRAMID_LEVELS) -> FeaturePyramid:
    """Handcrafted matching features for a full-resolution image."""
    return features_from_gray(working_gray(image), num_levels)


def warp_image(source: np.ndarray, depth: np.ndarray, pose: Se3Pose, K: CameraIntrinsics):
    """Resample ``source`` into the target frame using target depth and pose.

    ``pose`` maps target camera coordinates to source camera coordinates.
    Returns ``(warped, valid)``; invalid where the point is behind the source
    camera or lands outside the source image.
    """
    source = np.asarray(source, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (K.height, K.width) or source.shape[:2] != depth.shape:
        raise InvalidArgumentError(
            f"shape mismatch: source {source.shape[:2]}, depth {depth.shape}, "
            f"intrinsics {(K.height, K.width)}"
        )
    u, _, in_front = project(K.pixel_grid(), depth, pose, K)
    values, oob = bilinear_sample(source, u)
    if source.ndim == 2:
        values = values[..., 0]
    return values, in_front & ~oob
