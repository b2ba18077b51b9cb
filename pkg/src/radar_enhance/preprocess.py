"""Multi-radar fusion, near-range filtering, static/dynamic separation and the
sliding-window occupancy grid that produces GNN input nodes."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigurationError,
    Pose2D,
    SensorExtrinsics,
    VehicleState,
    detections_to_array,
    inverse_transform_points,
    transform_points,
)


@dataclass
class RadarFrame:
    timestamp: float
    sensor_id: str
    detections: np.ndarray  # (N, 4) dx, dy, dz, dv in the sensor frame

    def __post_init__(self):
        if not isinstance(self.detections, np.ndarray):
            self.detections = detections_to_array(self.detections)
        self.detections = np.asarray(self.detections, dtype=float).reshape(-1, 4)


@dataclass(frozen=True)
class FusedDetections:
    """Vehicle-frame detections plus the body-frame position of the radar each came from."""

    points: np.ndarray  # (N, 4)
    origins: np.ndarray  # (N, 2)

    @classmethod
    def from_points(cls, points, origins=None) -> "FusedDetections":
        pts = np.asarray(points, dtype=float).reshape(-1, 4)
        if origins is None:
            origins = np.zeros((len(pts), 2))
        return cls(pts, np.asarray(origins, dtype=float).reshape(-1, 2))

    @classmethod
    def empty(cls) -> "FusedDetections":
        return cls(np.zeros((0, 4)), np.zeros((0, 2)))

    def select(self, mask) -> "FusedDetections":
        return FusedDetections(self.points[mask], self.origins[mask])

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]


@dataclass
class FusedFrame:
    timestamp: float
    static_detections: FusedDetections
    dynamic_detections: FusedDetections
    vehicle: VehicleState


def fuse_frames(frames: list[RadarFrame], extrinsics: SensorExtrinsics) -> FusedDetections:
    """Express every sensor's detections in the vehicle frame with dz forced to 0.

    Output is grouped by sensor in extrinsics order (front first, then rear),
    keeping each sensor's detection order.
    """
    ordered = sorted(frames, key=lambda f: extrinsics.order(f.sensor_id))
    pts, origins = [], []
    for frame in ordered:
        mount = extrinsics[frame.sensor_id]
        d = transform_points(frame.detections, mount)
        d[:, 2] = 0.0
        pts.append(d)
        origins.append(np.tile([mount.x, mount.y], (len(d), 1)))
    if not pts:
        return FusedDetections.empty()
    return FusedDetections(np.vstack(pts).reshape(-1, 4), np.vstack(origins).reshape(-1, 2))


def filter_min_range(detections: FusedDetections, min_range: float = 1.5) -> FusedDetections:
    """Drop detections closer than ``min_range`` to the vehicle origin (boundary kept)."""
    if min_range < 0:
        raise ConfigurationError("min_range must be non-negative")
    r = np.hypot(detections.points[:, 0], detections.points[:, 1])
    return detections.select(r >= min_range)


def expected_static_velocity(q, v) -> float:
    """Radial velocity a static reflector at offset ``q`` shows a sensor moving with ``v``."""
    q = np.asarray(q, dtype=float)
    n = math.hypot(q[0], q[1])
    if n == 0.0:
        raise ValueError("detection at the sensor origin has no line of sight")
    return float(-(q[0] * v[0] + q[1] * v[1]) / n)


def static_velocity_residual(detections: FusedDetections, vehicle: VehicleState) -> np.ndarray:
    q = detections.xy - detections.origins
    vs = vehicle.sensor_velocity(detections.origins) if len(detections) else np.zeros((0, 2))
    n = np.hypot(q[:, 0], q[:, 1])
    n = np.where(n > 0, n, np.inf)
    expected = -(q[:, 0] * vs[:, 0] + q[:, 1] * vs[:, 1]) / n
    return np.abs(expected - detections.points[:, 3])


def split_dynamic_static(detections: FusedDetections, vehicle: VehicleState,
                         threshold: float = 0.05) -> tuple[FusedDetections, FusedDetections]:
    """Partition into (static, dynamic) by the Doppler residual against a static world.

    Line of sight is measured from the originating radar, and that radar's
    velocity includes the yaw-rate lever arm of its mount.
    """
    if threshold <= 0:
        raise ConfigurationError("dynamic threshold must be positive")
    dynamic = static_velocity_residual(detections, vehicle) > threshold
    return detections.select(~dynamic), detections.select(dynamic)


def preprocess_frame(frames: list[RadarFrame], vehicle: VehicleState, extrinsics: SensorExtrinsics,
                     min_range: float = 1.5, dynamic_threshold: float = 0.05) -> FusedFrame:
    fused = filter_min_range(fuse_frames(frames, extrinsics), min_range)
    static, dynamic = split_dynamic_static(fused, vehicle, dynamic_threshold)
    t = max((f.timestamp for f in frames), default=0.0)
    return FusedFrame(t, static, dynamic, vehicle)


@dataclass
class OccupancyGrid:
    """Hit-frequency raster over the last ``window`` frames, aligned to the latest pose.

    Cells are centred on multiples of ``resolution`` so the vehicle sits at a
    cell centre; with the defaults the 50 x 50 raster spans [-5.1, 4.9) m on
    both axes. Static points of every frame in the window are kept in the
    world frame and re-rasterised against the current pose on each update.
    """

    resolution: float = 0.20
    half_extent: float = 5.0
    window: int = 20
    frames: deque = field(default_factory=deque)
    reference_pose: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.resolution <= 0 or self.half_extent <= 0 or self.window < 1:
            raise ConfigurationError("grid resolution, extent and window must be positive")
        self.cells_per_axis = int(math.ceil(2 * self.half_extent / self.resolution - 1e-9))
        self._lo = -(self.cells_per_axis // 2)
        self._hits = np.zeros((self.cells_per_axis, self.cells_per_axis), dtype=np.int64)

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis ** 2

    @property
    def hits(self) -> np.ndarray:
        return self._hits

    @property
    def p_det(self) -> np.ndarray:
        return self._hits / self.window

    def cell_index(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer (ix, iy) raster indices and an in-bounds mask for local points."""
        idx = np.floor(np.asarray(xy)[:, :2] / self.resolution + 0.5).astype(np.int64) - self._lo
        ok = np.all((idx >= 0) & (idx < self.cells_per_axis), axis=1)
        return idx, ok

    def cell_center(self, ix, iy) -> tuple[np.ndarray, np.ndarray]:
        return ((np.asarray(ix) + self._lo) * self.resolution,
                (np.asarray(iy) + self._lo) * self.resolution)

    def update(self, static_points: np.ndarray, pose: Pose2D) -> "OccupancyGrid":
        """Push one frame of vehicle-frame static points observed at ``pose``."""
        pts = np.asarray(static_points, dtype=float)
        pts = pts.reshape(-1, pts.shape[-1])[:, :2] if pts.size else np.zeros((0, 2))
        self.frames.append(transform_points(pts, pose))
        while len(self.frames) > self.window:
            self.frames.popleft()
        self.reference_pose = pose
        self._rasterize()
        return self

    def _rasterize(self):
        n = self.cells_per_axis
        self._hits = np.zeros((n, n), dtype=np.int64)
        sizes = [len(f) for f in self.frames]
        if sum(sizes) == 0:
            return
        world = np.vstack([f for f in self.frames if len(f)])
        frame_id = np.repeat(np.arange(len(sizes)), sizes)
        local = inverse_transform_points(world, self.reference_pose)
        idx, ok = self.cell_index(local)
        lin = idx[ok, 0] * n + idx[ok, 1]
        # one hit per cell per frame
        keyed = np.unique(frame_id[ok] * (n * n) + lin)
        counts = np.bincount(keyed % (n * n), minlength=n * n)
        self._hits = counts.reshape(n, n)

    def extract_nodes(self) -> np.ndarray:
        """Rows of (x, y, z=0, p_det), one per cell with any hit, in raster order."""
        ix, iy = np.nonzero(self._hits)
        cx, cy = self.cell_center(ix, iy)
        p = self._hits[ix, iy] / self.window
        return np.column_stack([cx, cy, np.zeros(len(ix)), p]).reshape(-1, 4)


def grid_update(grid: OccupancyGrid, static_detections, new_pose: Pose2D) -> OccupancyGrid:
    if isinstance(static_detections, FusedDetections):
        static_detections = static_detections.points
    return grid.update(static_detections, new_pose)


def grid_extract_nodes(grid: OccupancyGrid) -> np.ndarray:
    return grid.extract_nodes()
