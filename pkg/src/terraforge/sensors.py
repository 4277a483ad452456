"""Synthetic IMU, low-rate pose odometry, and LiDAR scans from analytic
trajectories over a heightfield.

Trajectories have closed-form derivatives, so every stream is exact in the
noise-free case and all randomness is seed-deterministic. The accelerometer
model reports specific force in the body frame: a_meas = R^T (a_world + g_up)
with g_up = (0, 0, 9.81), i.e. (0, 0, 9.81) at rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .geometry import (
    GRAVITY,
    Pose,
    Quaternion,
    quat_from_yaw,
    quat_multiply,
    quat_to_matrix,
    rotate_vec,
    vec3,
)
from .terrain import Heightfield, sample_height, sample_height_vec


class TrajectoryKind(Enum):
    STATIC = "static"
    CONSTANT_VELOCITY = "constant_velocity"
    CIRCLE = "circle"
    SINUSOID = "sinusoid"


@dataclass(frozen=True)
class TrajectorySpec:
    kind: TrajectoryKind
    duration: float  # s
    height_above_ground: float = 0.4  # m, nominal body height
    speed: float = 0.0  # m/s, forward speed (constant_velocity, circle, sinusoid)
    radius: float = 1.0  # m (circle)
    amplitude: float = 0.0  # m, vertical oscillation (sinusoid)
    frequency: float = 1.0  # Hz (sinusoid)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0.0 <= self.speed <= 3.0:
            raise ValueError("speed outside [0, 3] m/s")
        if self.kind is TrajectoryKind.CIRCLE and self.radius <= 0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True, eq=False)
class TrueState:
    pose: Pose
    velocity: np.ndarray  # world, m/s
    angular_velocity: np.ndarray  # body, rad/s
    acceleration: np.ndarray  # world, m/s^2


@dataclass(frozen=True, eq=False)
class ImuSample:
    timestamp_ns: int
    angular_velocity: np.ndarray  # body, rad/s
    linear_acceleration: np.ndarray  # body specific force, m/s^2


@dataclass(frozen=True, eq=False)
class LidarScan:
    timestamp_ns: int
    points: np.ndarray  # (n, 3) sensor frame, m


@dataclass(frozen=True)
class NoiseConfig:
    gyro_std: float = 0.0  # rad/s
    accel_std: float = 0.0  # m/s^2
    odom_pos_std: float = 0.0  # m per axis
    odom_yaw_std: float = 0.0  # rad
    lidar_range_std: float = 0.0  # m along the ray
    map_noise_ratio: float = 0.0  # fraction of local-map cells perturbed
    map_noise_magnitude: tuple[float, float] = (-1.0, 2.0)  # m
    system_delay_ms: float = 0.0  # applied to a stream via apply_delay

    def __post_init__(self):
        for name in ("gyro_std", "accel_std", "odom_pos_std", "odom_yaw_std", "lidar_range_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.map_noise_ratio <= 0.1:
            raise ValueError("map_noise_ratio outside [0, 0.1]")
        if not 0.0 <= self.system_delay_ms <= 15.0:
            raise ValueError("system_delay_ms outside [0, 15]")


@dataclass(frozen=True)
class ScanPattern:
    """Downward-looking cone: full azimuth sweep, elevations below horizon."""

    n_azimuth: int = 64
    n_elevation: int = 32
    elevation_min: float = math.radians(-90.0)  # rad, straight down
    elevation_max: float = math.radians(-10.0)
    max_range: float = 12.0  # m
    ray_step: float = 0.01  # m, march step and hit tolerance


@dataclass(frozen=True, eq=False)
class Delivered:
    """Stream element tagged with its delivery time (timestamps untouched)."""

    delivery_ns: int
    item: object


def true_state(traj: TrajectorySpec, t: float) -> TrueState:
    """Closed-form kinematic state at time t in [0, duration]."""
    if not 0.0 <= t <= traj.duration:
        raise ValueError(f"t {t} outside [0, {traj.duration}]")
    h = traj.height_above_ground
    ts = round(t * 1e9)
    k = traj.kind
    if k is TrajectoryKind.STATIC:
        pose = Pose(vec3(0, 0, h), Quaternion(1, 0, 0, 0), ts)
        return TrueState(pose, np.zeros(3), np.zeros(3), np.zeros(3))
    if k is TrajectoryKind.CONSTANT_VELOCITY:
        v = traj.speed
        pose = Pose(vec3(v * t, 0, h), Quaternion(1, 0, 0, 0), ts)
        return TrueState(pose, vec3(v, 0, 0), np.zeros(3), np.zeros(3))
    if k is TrajectoryKind.CIRCLE:
        v, r = traj.speed, traj.radius
        w = v / r
        th = w * t
        pos = vec3(r * math.sin(th), r * (1.0 - math.cos(th)), h)
        vel = vec3(v * math.cos(th), v * math.sin(th), 0.0)
        acc = vec3(-v * w * math.sin(th), v * w * math.cos(th), 0.0)  # |acc| = v^2/r
        pose = Pose(pos, quat_from_yaw(th), ts)
        return TrueState(pose, vel, vec3(0, 0, w), acc)
    if k is TrajectoryKind.SINUSOID:
        v, a, f = traj.speed, traj.amplitude, traj.frequency
        wf = 2.0 * math.pi * f
        pos = vec3(v * t, 0.0, h + a * math.sin(wf * t))
        vel = vec3(v, 0.0, a * wf * math.cos(wf * t))
        acc = vec3(0.0, 0.0, -a * wf * wf * math.sin(wf * t))
        pose = Pose(pos, Quaternion(1, 0, 0, 0), ts)
        return TrueState(pose, vel, np.zeros(3), acc)
    raise ValueError(f"unhandled trajectory kind {k}")


def _sample_times_ns(duration: float, rate: float) -> list[int]:
    n = int(math.floor(duration * rate)) + 1
    return [round(i * 1e9 / rate) for i in range(n)]


def imu_stream(traj: TrajectorySpec, rate: float = 200.0,
               noise: NoiseConfig | None = None, seed: int = 0) -> list[ImuSample]:
    """Body-frame gyro and specific-force samples at exact 1/rate spacing."""
    if not 100 <= rate <= 1000:
        raise ValueError("imu rate outside [100, 1000] Hz")
    noise = noise or NoiseConfig()
    rng = np.random.default_rng(seed)
    g_up = vec3(0, 0, GRAVITY)
    out = []
    for ts in _sample_times_ns(traj.duration, rate):
        s = true_state(traj, ts * 1e-9)
        rot_wb = quat_to_matrix(s.pose.orientation).T  # world -> body
        accel = rot_wb @ (s.acceleration + g_up)
        omega = s.angular_velocity.copy()
        if noise.gyro_std > 0:
            omega = omega + rng.normal(0.0, noise.gyro_std, 3)
        if noise.accel_std > 0:
            accel = accel + rng.normal(0.0, noise.accel_std, 3)
        out.append(ImuSample(ts, omega, accel))
    return out


def odometry_stream(traj: TrajectorySpec, rate: float = 10.0,
                    noise: NoiseConfig | None = None, seed: int = 0) -> list[Pose]:
    """True poses at 1/rate spacing with Gaussian position / yaw perturbation."""
    if rate < 1:
        raise ValueError("odometry rate must be >= 1 Hz")
    noise = noise or NoiseConfig()
    rng = np.random.default_rng(seed)
    out = []
    for ts in _sample_times_ns(traj.duration, rate):
        s = true_state(traj, ts * 1e-9)
        pos = s.pose.position
        q = s.pose.orientation
        if noise.odom_pos_std > 0:
            pos = pos + rng.normal(0.0, noise.odom_pos_std, 3)
        if noise.odom_yaw_std > 0:
            q = quat_multiply(quat_from_yaw(rng.normal(0.0, noise.odom_yaw_std)), q)
        out.append(Pose(pos, q, ts))
    return out


def _ray_directions(pattern: ScanPattern) -> np.ndarray:
    az = np.linspace(-math.pi, math.pi, pattern.n_azimuth, endpoint=False)
    el = np.linspace(pattern.elevation_min, pattern.elevation_max, pattern.n_elevation)
    azg, elg = np.meshgrid(az, el, indexing="ij")
    ce = np.cos(elg)
    dirs = np.stack([ce * np.cos(azg), ce * np.sin(azg), np.sin(elg)], axis=-1)
    return dirs.reshape(-1, 3)


def lidar_scan(hf: Heightfield, pose: Pose, pattern: ScanPattern | None = None,
               noise: NoiseConfig | None = None, seed: int = 0) -> LidarScan:
    """Ray-cast a scan pattern against the heightfield from the given pose.

    Marches each ray in ray_step increments and refines the crossing by
    linear interpolation, so noise-free hit points sit on the surface to
    within one step. Rays that leave the field without a hit are dropped.
    """
    pattern = pattern or ScanPattern()
    noise = noise or NoiseConfig()
    origin = pose.position
    try:
        if origin[2] <= sample_height(hf, origin[0], origin[1]):
            raise ValueError("sensor underground")
    except ValueError as e:
        if "outside heightfield" not in str(e):
            raise
    if pattern.n_azimuth == 0 or pattern.n_elevation == 0:
        return LidarScan(pose.timestamp_ns, np.zeros((0, 3)))

    rot = quat_to_matrix(pose.orientation)
    dirs_body = _ray_directions(pattern)
    dirs = dirs_body @ rot.T  # world-frame ray directions

    n = dirs.shape[0]
    hit_t = np.full(n, np.nan)
    active = np.arange(n)
    prev_f = np.full(n, np.nan)  # signed clearance above surface at previous step
    step = pattern.ray_step
    n_steps = int(pattern.max_range / step)
    chunk = 64
    for start in range(0, n_steps, chunk):
        if active.size == 0:
            break
        ts = (np.arange(start, min(start + chunk, n_steps)) + 1) * step
        pts = origin[None, None, :] + ts[None, :, None] * dirs[active][:, None, :]
        surf, ok = sample_height_vec(hf, pts[:, :, 0].ravel(), pts[:, :, 1].ravel())
        surf = surf.reshape(len(active), len(ts))
        ok = ok.reshape(len(active), len(ts))
        f = pts[:, :, 2] - surf  # > 0 above surface
        below = ok & (f <= 0.0)
        crossed = below.any(axis=1)
        first = np.where(crossed, below.argmax(axis=1), 0)
        rows = np.arange(len(active))
        # linear interpolation between the last clear step and the crossing step
        f_hit = f[rows, first]
        t_hit = ts[first]
        f_prev = np.where(first > 0, f[rows, np.maximum(first - 1, 0)], prev_f[active])
        t_prev = t_hit - step
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(np.isfinite(f_prev) & (f_prev > 0), f_prev / (f_prev - f_hit), 1.0)
        t_star = t_prev + np.clip(frac, 0.0, 1.0) * step
        hit_rows = active[crossed]
        hit_t[hit_rows] = t_star[crossed]
        # rays that left the field for good stop marching
        exited = ~ok[:, -1] & ~crossed
        prev_f[active] = f[:, -1]
        active = active[~crossed & ~exited]

    mask = np.isfinite(hit_t)
    ranges = hit_t[mask]
    if noise.lidar_range_std > 0:
        rng = np.random.default_rng(seed)
        ranges = ranges + rng.normal(0.0, noise.lidar_range_std, ranges.size)
    points = dirs_body[mask] * ranges[:, None]
    return LidarScan(pose.timestamp_ns, points)


def scan_points_world(scan: LidarScan, pose: Pose) -> np.ndarray:
    """Transform sensor-frame scan points into the world frame."""
    rot = quat_to_matrix(pose.orientation)
    return scan.points @ rot.T + pose.position[None, :]


def apply_delay(stream: Sequence, delay_ms: float) -> list[Delivered]:
    """Shift delivery times by a fixed transport delay; timestamps unchanged."""
    if not 0.0 <= delay_ms <= 15.0:
        raise ValueError("delay outside [0, 15] ms")
    shift = round(delay_ms * 1e6)
    out = []
    for item in stream:
        ts = item.timestamp_ns if hasattr(item, "timestamp_ns") else item.item.timestamp_ns
        out.append(Delivered(ts + shift, item))
    return out
