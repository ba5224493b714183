import numpy as np
import pytest

from epirefine.errors import InsufficientOverlapError, InvalidArgumentError, SingularSystemError
from epirefine.geometry import Se3Pose, exp_map
from epirefine.pose import (
    NormalEquations,
    apply_pose_update,
    damped_pose_step,
    feature_residuals,
    gauss_newton_step,
    residual_jacobian,
    solve_damped,
    weighted_energy,
)
from epirefine.synth import random_unit


def perturbed(pose, deg, metres, rng):
    twist = np.concatenate([random_unit(rng) * np.deg2rad(deg), np.zeros(3)])
    return Se3Pose(exp_map(twist).rotation, random_unit(rng) * metres) @ pose


def fd_relative_error(scene, pose, h=1e-6):
    res = feature_residuals(scene.tp.base, scene.sp.base, scene.depth, pose, scene.K)
    jac = residual_jacobian(res, scene.depth, pose, scene.K)
    num = np.zeros_like(jac)
    valid = res.valid.copy()
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        up = feature_residuals(scene.tp.base, scene.sp.base, scene.depth, exp_map(e) @ pose, scene.K)
        dn = feature_residuals(scene.tp.base, scene.sp.base, scene.depth, exp_map(-e) @ pose, scene.K)
        num[..., k] = (up.residual - dn.residual) / (2 * h)
        valid &= up.valid & dn.valid
    return np.linalg.norm((jac - num)[valid]) / np.linalg.norm(num[valid])


def test_feature_jacobian_matches_finite_differences(acceptance):
    rng = np.random.default_rng(0)
    for pose in [acceptance.pose, perturbed(acceptance.pose, 1.0, 0.1, rng)]:
        assert fd_relative_error(acceptance, pose) < 1e-2


def test_residuals_vanish_at_exact_match(shift):
    res = feature_residuals(shift.tp.base, shift.sp.base, shift.depth, shift.pose, shift.K)
    assert res.valid_fraction > 0.8
    assert np.abs(res.residual).max() < 1e-12
    step = gauss_newton_step(res, shift.depth, shift.pose, shift.K)
    assert np.linalg.norm(step) < 1e-9


def test_gauss_newton_recovers_pose(alignment):
    rng = np.random.default_rng(0)
    for _ in range(6):
        pose = perturbed(alignment.pose, 2.0, 0.2, rng)
        for _ in range(10):
            pose = damped_pose_step(alignment.tp.base, alignment.sp.base, alignment.depth, pose, alignment.K).pose
        err = pose @ alignment.pose.inverse()
        assert np.rad2deg(err.rotation_angle()) < 0.01
        assert np.linalg.norm(pose.translation - alignment.pose.translation) < 1e-3


def test_damped_step_never_raises_energy(acceptance):
    rng = np.random.default_rng(1)
    w = np.random.default_rng(2).uniform(0.1, 1.0, acceptance.depth.shape)
    for _ in range(4):
        pose = perturbed(acceptance.pose, 1.5, 0.15, rng)
        step = damped_pose_step(acceptance.tp.base, acceptance.sp.base, acceptance.depth * 1.05, pose,
                                acceptance.K, w)
        assert step.energy_after <= step.energy_before
        after = feature_residuals(acceptance.tp.base, acceptance.sp.base, acceptance.depth * 1.05, step.pose,
                                  acceptance.K)
        assert np.isclose(weighted_energy(after, w), step.energy_after)


def test_step_invariant_to_weight_scale(acceptance):
    pose = perturbed(acceptance.pose, 1.0, 0.1, np.random.default_rng(3))
    res = feature_residuals(acceptance.tp.base, acceptance.sp.base, acceptance.depth, pose, acceptance.K)
    w = np.random.default_rng(4).uniform(0.2, 1.0, acceptance.depth.shape)
    a = gauss_newton_step(res, acceptance.depth, pose, acceptance.K, w)
    b = gauss_newton_step(res, acceptance.depth, pose, acceptance.K, 7.0 * w)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-15)


def test_update_composes_on_the_left():
    pose = exp_map([0.1, 0.0, 0.2, 1.0, 2.0, 0.0])
    delta = np.array([0.0, 0.01, 0.0, 0.02, 0.0, 0.0])
    assert np.allclose(apply_pose_update(pose, delta).matrix, exp_map(delta).matrix @ pose.matrix)


def test_insufficient_overlap(acceptance):
    away = Se3Pose(np.eye(3), [1000.0, 0.0, 0.0])
    res = feature_residuals(acceptance.tp.base, acceptance.sp.base, acceptance.depth, away, acceptance.K)
    with pytest.raises(InsufficientOverlapError):
        gauss_newton_step(res, acceptance.depth, away, acceptance.K)
    with pytest.raises(InsufficientOverlapError):
        damped_pose_step(acceptance.tp.base, acceptance.sp.base, acceptance.depth, away, acceptance.K)


def test_shape_mismatch(acceptance):
    with pytest.raises(InvalidArgumentError):
        feature_residuals(acceptance.tp.base, acceptance.sp.base, np.ones((4, 4)), acceptance.pose, acceptance.K)


def test_singular_system_escalates_then_fails():
    H = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 0.0])
    H[5, 5] = 0.0
    b = np.ones(6)
    with pytest.raises(SingularSystemError):
        solve_damped(NormalEquations(H, b, 100))
    near = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 1e-30])
    delta = solve_damped(NormalEquations(near, b, 100))
    assert np.all(np.isfinite(delta))
