"""Shared constructions for the test suite."""

import numpy as np

from epirefine.geometry import Se3Pose, exp_map, project
from epirefine.image import WORKING_FACTOR, downsample_area, features_from_gray

# Source-image box (input pixels) that the "moving object" occupies.
PATCH_BOX = (60, 132, 280, 400)


def moving_patch_source(pair, shift=(8, 0), box=PATCH_BOX):
    """Source image in which one rectangle moved by ``shift`` input pixels.

    Returns the source feature pyramid and the working-resolution mask of
    target pixels whose true correspondence falls fully inside the moved
    rectangle.
    """
    y0, y1, x0, x1 = box
    sx, sy = shift
    src = pair.source.copy()
    src[y0:y1, x0:x1] = pair.source[y0 - sy:y1 - sy, x0 - sx:x1 - sx]
    pyramid = features_from_gray(downsample_area(src, WORKING_FACTOR))
    K = pair.K_working
    u, _, in_front = project(K.pixel_grid(), pair.depth, pair.pose, K)
    f = WORKING_FACTOR
    lo_x, hi_x = (x0 + f) / f, (x1 - f) / f - 1
    lo_y, hi_y = (y0 + f) / f, (y1 - f) / f - 1
    inside = (u[..., 0] >= lo_x) & (u[..., 0] <= hi_x) & (u[..., 1] >= lo_y) & (u[..., 1] <= hi_y) & in_front
    return pyramid, inside


def pose_errors(scene, depth, pose, mask):
    """Scale-aligned ``(AbsRel, rotation error deg, translation error m)`` on ``mask``."""
    s = np.median(scene.depth[mask] / depth[mask])
    rel = float(np.mean(np.abs(s * depth[mask] - scene.depth[mask]) / scene.depth[mask]))
    err = pose @ scene.pose.inverse()
    return np.array([rel, np.rad2deg(err.rotation_angle()),
                     float(np.linalg.norm(s * pose.translation - scene.pose.translation))])


def yaw_track(n=1001, deg_per_m=0.1):
    """1 m steps along the heading while turning at a constant rate."""
    poses, pos = [], np.zeros(3)
    for i in range(n):
        rot = exp_map([0.0, np.deg2rad(deg_per_m * i), 0.0, 0, 0, 0]).rotation
        poses.append(Se3Pose(rot, pos.copy()))
        pos = pos + rot @ np.array([0.0, 0.0, 1.0])
    return poses


# Acceptance lines collected during the run and repeated in the terminal summary.
ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
