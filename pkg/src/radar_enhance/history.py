"""Rolling, pose-aligned buffer of classifier-approved points."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Pose2D, inverse_transform_points, transform_points


@dataclass
class DetectionHistory:
    capacity: int = 10
    frames: deque = field(default_factory=deque)  # (frame_id, (M, 2) world-frame points)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("history capacity must be at least one frame")

    def push(self, valid_points: np.ndarray, pose: Pose2D, frame_id: int) -> "DetectionHistory":
        if self.frames and frame_id <= self.frames[-1][0]:
            raise ValueError(f"frame_id {frame_id} is not after {self.frames[-1][0]}")
        pts = np.asarray(valid_points, dtype=float)
        pts = pts.reshape(-1, pts.shape[-1])[:, :2] if pts.size else np.zeros((0, 2))
        self.frames.append((frame_id, transform_points(pts, pose)))
        while len(self.frames) > self.capacity:
            self.frames.popleft()
        return self

    def cloud(self, current_pose: Pose2D) -> np.ndarray:
        """All buffered points in the vehicle frame at ``current_pose``."""
        if not self.frames:
            return np.zeros((0, 2))
        world = np.vstack([pts for _, pts in self.frames])
        return inverse_transform_points(world, current_pose)

    @property
    def frame_ids(self) -> list[int]:
        return [fid for fid, _ in self.frames]

    def __len__(self) -> int:
        return sum(len(pts) for _, pts in self.frames)


def history_push(h: DetectionHistory, valid_points, pose: Pose2D, frame_id: int) -> DetectionHistory:
    return h.push(valid_points, pose, frame_id)


def history_cloud(h: DetectionHistory, current_pose: Pose2D) -> np.ndarray:
    return h.cloud(current_pose)
