"""Flat ``key = value`` run configuration covering every tunable of the pipeline."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidArgumentError, ParseError
from .matcher import D_MAX, D_MIN, RANGE_SCALE
from .metrics import MAX_DEPTH, LossConfig
from .solver import ACCELERATION_MODES, WEIGHT_MODES, SolverConfig
from .synth import NoiseSpec

_CHOICES = {"acceleration": ACCELERATION_MODES, "weights": WEIGHT_MODES}


@dataclass(frozen=True)
class RunConfig:
    # epipolar sampling and depth update
    radius: int = 8
    range_scale: float = RANGE_SCALE
    levels: int = 3
    tau_d: float = 0.0005
    d_min: float = D_MIN
    d_max: float = D_MAX
    # confidence and pose
    tau_w: float = 0.1
    alpha_h: float = 0.5
    kappa: float = 10.0
    g0: float = 0.05
    damping: float = 1e-4
    weights: str = "both"
    update_pose: bool = True
    # iteration
    max_iters: int = 6
    tol_depth: float = 1e-3
    tol_pose: float = 1e-5
    anderson_m: int = 3
    anderson_beta: float = 1.0
    acceleration: str = "off"
    # coarse depth and consistency mask
    wide_radius: int = 24
    consistency_ratio: float = 0.15
    # synthetic initialization noise
    depth_noise: float = 0.1
    pose_rot_noise: float = 1.0
    pose_trans_noise: float = 0.1
    seed: int = 0
    # monitoring loss and evaluation
    lambda_p: float = 1.0
    lambda_s: float = 1e-3
    alpha_ssim: float = 0.85
    max_depth: float = MAX_DEPTH
    # execution
    threads: int = 1
    trace_timing: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            ok = isinstance(v, bool) if f.type == "bool" else (
                isinstance(v, int) and not isinstance(v, bool) if f.type == "int" else (
                    isinstance(v, (int, float)) and not isinstance(v, bool) if f.type == "float"
                    else isinstance(v, str)))
            if not ok:
                raise InvalidArgumentError(f"config key {f.name!r} expects {f.type}, got {v!r}")
            if f.type == "float" and not math.isfinite(v):
                raise InvalidArgumentError(f"config key {f.name!r} must be finite")
        if self.threads < 0:
            raise InvalidArgumentError("threads must be >= 0 (0 = one per CPU)")
        if self.radius < 1 or self.levels < 1 or self.range_scale <= 0:
            raise InvalidArgumentError("need radius >= 1, levels >= 1, range_scale > 0")
        if self.wide_radius < self.radius:
            raise InvalidArgumentError("wide_radius must be at least radius")
        if not 0 < self.d_min < self.d_max:
            raise InvalidArgumentError("need 0 < d_min < d_max")
        for key, choices in _CHOICES.items():
            if getattr(self, key) not in choices:
                raise InvalidArgumentError(f"config key {key!r} must be one of {', '.join(choices)}")
        # Delegate the remaining range checks to the component configs.
        self.solver_config()
        self.noise_spec()
        self.loss_config()

    @property
    def workers(self) -> int:
        return self.threads or (os.cpu_count() or 1)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iters=self.max_iters, tol_depth=self.tol_depth, tol_pose=self.tol_pose,
            anderson_m=self.anderson_m, anderson_beta=self.anderson_beta, acceleration=self.acceleration,
            radius=self.radius, range_scale=self.range_scale, levels=self.levels, tau_d=self.tau_d,
            tau_w=self.tau_w, alpha_h=self.alpha_h, kappa=self.kappa, g0=self.g0, damping=self.damping,
            weights=self.weights, update_pose=self.update_pose, d_min=self.d_min, d_max=self.d_max,
            workers=self.workers,
        )

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.depth_noise, self.pose_rot_noise, self.pose_trans_noise, self.seed)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lambda_p, self.lambda_s, self.alpha_ssim)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            text = ("true" if value else "false") if f.type == "bool" else (
                repr(float(value)) if f.type == "float" else str(value))
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` comments and blank lines are ignored."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ParseError(f"config line {lineno}: unknown key {key!r}")
            if key in values:
                raise ParseError(f"config line {lineno}: duplicate key {key!r}")
            values[key] = _convert(value, types[key], f"config line {lineno}: {key}")
        try:
            return cls(**values)
        except InvalidArgumentError as exc:
            raise ParseError(f"config: {exc}") from None


def _convert(value: str, kind: str, where: str):
    if kind == "bool":
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ParseError(f"{where} expects true/false, got {value!r}")
    if kind == "int":
        try:
            return int(value)
        except ValueError:
            raise ParseError(f"{where} expects an integer, got {value!r}") from None
    if kind == "float":
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"{where} expects a number, got {value!r}") from None
    return value


def load_config(path) -> RunConfig:
    return RunConfig.loads(Path(path).read_text())
