"""Planar pose algebra, frame transforms and the shared radar/vehicle types.

Heading is counterclockwise-positive with zero along +x. Angles are wrapped
to the half-open interval (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

TWO_PI = 2.0 * math.pi


class ConfigurationError(ValueError):
    """Raised when inputs reference unknown sensors or carry invalid settings."""


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    if isinstance(a, np.ndarray):
        w = np.pi - np.mod(np.pi - a, TWO_PI)
        return np.where(w <= -np.pi, w + TWO_PI, w)
    w = math.pi - math.fmod(math.pi - a, TWO_PI)
    if w > math.pi:
        w -= TWO_PI
    elif w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0  # m
    y: float = 0.0  # m
    psi: float = 0.0  # rad, stored wrapped

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))

    @classmethod
    def identity(cls) -> "Pose2D":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2D":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.psi), math.sin(self.psi)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "Pose2D") -> "Pose2D":
        return compose(self, other)


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Pose of frame ``b`` (given relative to ``a``) expressed in ``a``'s parent frame."""
    c, s = math.cos(a.psi), math.sin(a.psi)
    return Pose2D(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.psi + b.psi)


def invert(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.psi), math.sin(p.psi)
    return Pose2D(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.psi)


def relative(a: Pose2D, b: Pose2D) -> Pose2D:
    """Pose of ``b`` seen from ``a`` (both in the same parent frame)."""
    return compose(invert(a), b)


def transform_points(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Map (N, 2+) points from the frame ``pose`` describes into its parent frame.

    Only the first two columns are transformed; any extra columns are copied.
    """
    pts = np.asarray(points, dtype=float)
    out = pts.copy()
    if pts.shape[0] == 0:
        return out
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    x, y = pts[:, 0], pts[:, 1]
    out[:, 0] = c * x - s * y + pose.x
    out[:, 1] = s * x + c * y + pose.y
    return out


def inverse_transform_points(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Express parent-frame points in the local frame ``pose`` describes."""
    pts = np.asarray(points, dtype=float)
    out = pts.copy()
    if pts.shape[0] == 0:
        return out
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    x, y = pts[:, 0] - pose.x, pts[:, 1] - pose.y
    out[:, 0] = c * x + s * y
    out[:, 1] = -s * x + c * y
    return out


@dataclass(frozen=True)
class RadarDetection:
    dx: float
    dy: float
    dz: float = 0.0
    dv: float = 0.0  # radial velocity, negative = approaching

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dv])

    @property
    def range(self) -> float:
        return math.hypot(self.dx, self.dy)


def transform_detection(d: RadarDetection, t: Pose2D) -> RadarDetection:
    c, s = math.cos(t.psi), math.sin(t.psi)
    return RadarDetection(c * d.dx - s * d.dy + t.x, s * d.dx + c * d.dy + t.y, d.dz, d.dv)


def detections_to_array(dets) -> np.ndarray:
    """Stack RadarDetection objects (or 4-sequences) into an (N, 4) array."""
    rows = [d.as_array() if isinstance(d, RadarDetection) else np.asarray(d, float) for d in dets]
    if not rows:
        return np.zeros((0, 4))
    return np.vstack(rows).reshape(-1, 4)


def array_to_detections(arr: np.ndarray) -> list[RadarDetection]:
    return [RadarDetection(*map(float, row)) for row in np.asarray(arr).reshape(-1, 4)]


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D = field(default_factory=Pose2D)
    v: tuple[float, float] = (0.0, 0.0)  # body-frame translational velocity, m/s
    yaw_rate: float = 0.0  # rad/s

    def __post_init__(self):
        v = tuple(float(c) for c in self.v)
        if len(v) != 2 or not all(map(math.isfinite, v + (self.yaw_rate,))):
            raise ValueError(f"vehicle velocity must be finite 2-vector, got {self.v!r}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "yaw_rate", float(self.yaw_rate))

    def sensor_velocity(self, mount_xy: np.ndarray) -> np.ndarray:
        """Body-frame velocity of points rigidly attached at ``mount_xy`` (N, 2)."""
        m = np.atleast_2d(np.asarray(mount_xy, float))
        vx = self.v[0] - self.yaw_rate * m[:, 1]
        vy = self.v[1] + self.yaw_rate * m[:, 0]
        return np.column_stack([vx, vy])


@dataclass(frozen=True)
class SensorExtrinsics:
    """Mount pose of each radar in the vehicle body frame, keyed by sensor id."""

    mounts: Mapping[str, Pose2D]

    def __getitem__(self, sensor_id: str) -> Pose2D:
        try:
            return self.mounts[sensor_id]
        except KeyError:
            raise ConfigurationError(f"unknown radar sensor_id {sensor_id!r}") from None

    def order(self, sensor_id: str) -> int:
        ids = list(self.mounts)
        if sensor_id not in self.mounts:
            raise ConfigurationError(f"unknown radar sensor_id {sensor_id!r}")
        return ids.index(sensor_id)

    def __iter__(self):
        return iter(self.mounts)

    def __len__(self):
        return len(self.mounts)


def default_extrinsics() -> SensorExtrinsics:
    """Front radar looking along +x, rear radar looking along -x."""
    return SensorExtrinsics({"front": Pose2D(0.2, 0.0, 0.0), "rear": Pose2D(-0.2, 0.0, math.pi)})
