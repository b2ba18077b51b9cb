"""One-way point-cloud distances and trajectory error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import wrap_angle


class UndefinedMetricError(ValueError):
    pass


def _as_points(a, name: str) -> np.ndarray:
    pts = np.asarray(a, dtype=float)
    pts = pts.reshape(-1, pts.shape[-1]) if pts.size else np.zeros((0, 2))
    if len(pts) == 0:
        raise UndefinedMetricError(f"{name} point set is empty")
    return pts[:, :2]


def nearest_distances(radar, lidar) -> np.ndarray:
    """Distance from each radar point to its nearest lidar point (k-d tree)."""
    r, l = _as_points(radar, "radar"), _as_points(lidar, "lidar")
    d, _ = cKDTree(l).query(r, k=1)
    return d


def nearest_distances_brute(radar, lidar, chunk: int = 1024) -> np.ndarray:
    """O(nm) reference for :func:`nearest_distances`."""
    r, l = _as_points(radar, "radar"), _as_points(lidar, "lidar")
    out = np.empty(len(r))
    for s in range(0, len(r), chunk):
        diff = r[s:s + chunk, None, :] - l[None, :, :]
        out[s:s + chunk] = np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))
    return out


def _nn(radar, lidar, brute: bool) -> np.ndarray:
    return nearest_distances_brute(radar, lidar) if brute else nearest_distances(radar, lidar)


def chamfer_one_way(radar, lidar, squared: bool = False, brute: bool = False) -> float:
    """Half the mean nearest-neighbour distance from radar points to lidar points.

    ``squared=True`` uses squared distances instead.
    """
    d = _nn(radar, lidar, brute)
    if squared:
        d = d * d
    return float(np.sum(d) / (2.0 * len(d)))


def hausdorff_one_way(radar, lidar, squared: bool = False, brute: bool = False) -> float:
    d = _nn(radar, lidar, brute)
    if squared:
        d = d * d
    return float(np.max(d))


@dataclass
class TrajectoryPair:
    estimated: np.ndarray  # (N, 3) x, y, psi
    ground_truth: np.ndarray  # (N, 3)
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.estimated = np.asarray(self.estimated, dtype=float).reshape(-1, 3)
        self.ground_truth = np.asarray(self.ground_truth, dtype=float).reshape(-1, 3)
        if len(self.estimated) != len(self.ground_truth):
            raise ValueError("estimated and ground-truth trajectories differ in length")


def ate(pair: TrajectoryPair) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame absolute (translation m, heading rad) errors."""
    e, g = pair.estimated, pair.ground_truth
    tr = np.linalg.norm(e[:, :2] - g[:, :2], axis=1)
    hd = np.abs(wrap_angle(e[:, 2] - g[:, 2]))
    return tr, hd


def rte(pair: TrajectoryPair) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame relative errors for frames 1..N-1."""
    e, g = pair.estimated, pair.ground_truth
    if len(e) < 2:
        raise ValueError("relative trajectory error needs at least two frames")
    de, dg = np.diff(e, axis=0), np.diff(g, axis=0)
    tr = np.linalg.norm(de[:, :2] - dg[:, :2], axis=1)
    hd = np.abs(wrap_angle(wrap_angle(de[:, 2]) - wrap_angle(dg[:, 2])))
    return tr, hd


@dataclass
class MetricSummary:
    mean: float
    tail: float  # nearest-rank 90th percentile
    series: np.ndarray

    def as_dict(self) -> dict:
        return {"mean": self.mean, "tail90": self.tail, "n": int(len(self.series))}


def nearest_rank(series, q: float) -> float:
    s = np.sort(np.asarray(series, dtype=float))
    if len(s) == 0:
        raise ValueError("percentile of an empty series")
    rank = max(1, math.ceil(q * len(s) - 1e-12))
    return float(s[rank - 1])


def summarize(series, q: float = 0.9) -> MetricSummary:
    s = np.asarray(series, dtype=float).reshape(-1)
    if len(s) == 0:
        raise ValueError("cannot summarize an empty series")
    return MetricSummary(float(np.mean(s)), nearest_rank(s, q), s)
