"""Coupled depth and relative-pose refinement for a pair of views.

Depth is refined by matching along epipolar lines, pose by damped
Gauss-Newton on feature residuals; the two alternate until both settle.
"""

from .geometry import CameraIntrinsics, Se3Pose, exp_map, log_map
from .solver import PairInputs, RefinementState, SolverConfig, refine

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "PairInputs",
    "RefinementState",
    "Se3Pose",
    "SolverConfig",
    "exp_map",
    "log_map",
    "refine",
]
