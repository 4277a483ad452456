"""Observation assembly, command/randomization sampling, PD control math,
and the estimator/autoencoder loss formulas, all as pure functions.

Network architectures and training are out of scope; only the shapes and
the loss arithmetic live here so they can be tested exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .terrain import Robot, TerrainType

JOINT_COUNT = 12
FRAME_DIM = 45  # 3 + 3 + 3 + 12 + 12 + 12
HISTORY_FRAMES = 6  # current frame plus 5 past
HISTORY_DIM = FRAME_DIM * HISTORY_FRAMES
CONTEXT_LATENT_DIM = 16  # z^p, proprioceptive context
ELEVATION_LATENT_DIM = 32  # z^e, terrain context


@dataclass(frozen=True, eq=False)
class ObservationFrame:
    """One 45-dim proprioceptive frame o_t.

    All-zero frames are legal (history padding at episode start); any
    other frame must carry a unit gravity direction.
    """

    omega: np.ndarray
    gravity: np.ndarray
    command: np.ndarray
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    prev_action: np.ndarray

    def __post_init__(self):
        for name, n in (("omega", 3), ("gravity", 3), ("command", 3),
                        ("joint_angles", JOINT_COUNT),
                        ("joint_velocities", JOINT_COUNT),
                        ("prev_action", JOINT_COUNT)):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
            object.__setattr__(self, name, a)
        v = self.flatten()
        if np.any(v) and abs(np.linalg.norm(self.gravity) - 1.0) > 1e-6:
            raise ValueError("gravity must be unit-norm")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.omega, self.gravity, self.command,
                               self.joint_angles, self.joint_velocities,
                               self.prev_action])

    @classmethod
    def zeros(cls) -> "ObservationFrame":
        z3, z12 = np.zeros(3), np.zeros(JOINT_COUNT)
        return cls(z3, z3, z3, z12, z12, z12)


@dataclass(frozen=True, eq=False)
class ObservationHistory:
    """Newest-first window of 6 frames (o_t through o_{t-5})."""

    frames: tuple[ObservationFrame, ...]

    def __post_init__(self):
        if len(self.frames) != HISTORY_FRAMES:
            raise ValueError(f"history must hold {HISTORY_FRAMES} frames")

    def flatten(self) -> np.ndarray:
        return np.concatenate([f.flatten() for f in self.frames])

    @classmethod
    def zeros(cls) -> "ObservationHistory":
        return cls(tuple(ObservationFrame.zeros() for _ in range(HISTORY_FRAMES)))

    def push(self, frame: ObservationFrame) -> "ObservationHistory":
        return ObservationHistory((frame,) + self.frames[:-1])


@dataclass(frozen=True, eq=False)
class PrivilegedState:
    """Value-network input: the frame plus what hardware cannot see."""

    observation: ObservationFrame
    body_velocity: np.ndarray
    disturbance: np.ndarray  # external force, N; carried as data only
    elevation: object  # LocalMap

    def __post_init__(self):
        for name in ("body_velocity", "disturbance"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (3,) or not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, a)


_RANGES = {
    "payload_kg": (-1.0, 2.0),
    "kp_factor": (0.9, 1.1),
    "kd_factor": (0.9, 1.1),
    "motor_strength_factor": (0.9, 1.1),
    "com_shift_mm": (-50.0, 50.0),
    "friction": (0.2, 1.25),
    "system_delay_ms": (0.0, 15.0),
    "map_noise_ratio": (0.0, 0.1),
    "map_noise_magnitude": (-1.0, 2.0),
}


@dataclass(frozen=True, eq=False)
class RandomizationDraw:
    payload_kg: float
    kp_factor: float
    kd_factor: float
    motor_strength_factor: float
    com_shift_mm: np.ndarray
    friction: float
    system_delay_ms: float
    map_noise_ratio: float
    map_noise_magnitude: float

    def __post_init__(self):
        object.__setattr__(self, "com_shift_mm",
                           np.asarray(self.com_shift_mm, dtype=float))
        if self.com_shift_mm.shape != (3,):
            raise ValueError("com_shift_mm must be a 3-vector")
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not np.all((lo <= np.asarray(v)) & (np.asarray(v) <= hi)):
                raise ValueError(f"{name} outside [{lo}, {hi}]")


def sample_randomization(seed: int) -> RandomizationDraw:
    """One deterministic draw of every randomized physical parameter."""
    rng = np.random.default_rng(seed)
    return RandomizationDraw(
        payload_kg=rng.uniform(*_RANGES["payload_kg"]),
        kp_factor=rng.uniform(*_RANGES["kp_factor"]),
        kd_factor=rng.uniform(*_RANGES["kd_factor"]),
        motor_strength_factor=rng.uniform(*_RANGES["motor_strength_factor"]),
        com_shift_mm=rng.uniform(*_RANGES["com_shift_mm"], size=3),
        friction=rng.uniform(*_RANGES["friction"]),
        system_delay_ms=rng.uniform(*_RANGES["system_delay_ms"]),
        map_noise_ratio=rng.uniform(*_RANGES["map_noise_ratio"]),
        map_noise_magnitude=rng.uniform(*_RANGES["map_noise_magnitude"]),
    )


@dataclass(frozen=True)
class PDGains:
    kp: float
    kd: float

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ValueError("gains must be positive")

    @classmethod
    def for_robot(cls, robot: Robot) -> "PDGains":
        if robot is Robot.LITE3:
            return cls(kp=30.0, kd=1.0)
        return cls(kp=120.0, kd=3.0)


def _vec12(v, name):
    a = np.asarray(v, dtype=float)
    if a.shape != (JOINT_COUNT,):
        raise ValueError(f"{name} must have shape ({JOINT_COUNT},)")
    return a


def joint_targets(action, theta_stand) -> np.ndarray:
    """Desired joint angles: standing pose plus the policy action."""
    return _vec12(theta_stand, "theta_stand") + _vec12(action, "action")


def pd_torque(theta_des, theta, theta_dot, gains: PDGains) -> np.ndarray:
    """tau = kp (theta_des - theta) - kd theta_dot, per joint."""
    return (gains.kp * (_vec12(theta_des, "theta_des") - _vec12(theta, "theta"))
            - gains.kd * _vec12(theta_dot, "theta_dot"))


# command ranges: omnidirectional on gentle terrain, forward-only on
# gap/platform terrain where lateral or turning commands are unlearnable
_FULL_RANGE = ((-1.2, 1.2), (-1.2, 1.2), (-2.0, 2.0))
_FORWARD_ONLY = ((0.3, 1.2), (0.0, 0.0), (0.0, 0.0))


def sample_command(terrain_type: TerrainType, seed_or_rng) -> np.ndarray:
    """Draw (v_cmd_x, v_cmd_y, omega_cmd_z) for the terrain type."""
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    ranges = (_FORWARD_ONLY if terrain_type in (TerrainType.GAP, TerrainType.HIGH_PLATFORM)
              else _FULL_RANGE)
    return np.array([lo if lo == hi else rng.uniform(lo, hi) for lo, hi in ranges])


def loss_est(v_est, v_true) -> float:
    """Mean squared error of the body-velocity estimate."""
    a, b = np.asarray(v_est, dtype=float), np.asarray(v_true, dtype=float)
    if a.shape != (3,) or b.shape != (3,):
        raise ValueError("velocity must be a 3-vector")
    return float(np.mean((a - b) ** 2))


def kl_diag_gaussian(mu, logvar) -> float:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), closed form."""
    mu = np.asarray(mu, dtype=float)
    lv = np.asarray(logvar, dtype=float)
    if mu.shape != lv.shape:
        raise ValueError("mu and logvar must have the same shape")
    return float(np.sum(0.5 * (mu**2 + np.exp(lv) - 1.0 - lv)))


def loss_vae(o_next_recon, o_next, mu, logvar, beta: float) -> float:
    """Reconstruction MSE plus beta times the KL to the standard normal."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    a = np.asarray(o_next_recon, dtype=float)
    b = np.asarray(o_next, dtype=float)
    if a.shape != b.shape:
        raise ValueError("reconstruction and target shapes differ")
    return float(np.mean((a - b) ** 2) + beta * kl_diag_gaussian(mu, logvar))


def loss_cenet(est_part: float, vae_part: float) -> float:
    """Joint estimator loss: velocity part plus autoencoder part."""
    if not (math.isfinite(est_part) and math.isfinite(vae_part)):
        raise ValueError("non-finite loss parts")
    return est_part + vae_part


def loss_terrain(e_recon, e_true) -> float:
    """MSE over every cell of the reconstructed elevation patch."""
    a = np.asarray(e_recon, dtype=float)
    b = np.asarray(e_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError("elevation shapes differ")
    return float(np.mean((a - b) ** 2))
