"""Three-state EKF localisation against a prior map: unicycle prediction from
wheel speed and gyro, point-to-point ICP pose measurements, chi-squared gating.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.special import gammainc

from .core import Pose2D, VehicleState, compose, transform_points, wrap_angle

log = logging.getLogger(__name__)


@dataclass
class EkfState:
    mean: np.ndarray  # x, y, psi
    cov: np.ndarray  # (3, 3)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(3).copy()
        self.mean[2] = wrap_angle(float(self.mean[2]))
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3).copy()

    @property
    def pose(self) -> Pose2D:
        return Pose2D.from_array(self.mean)

    def copy(self) -> "EkfState":
        return EkfState(self.mean, self.cov)


@dataclass
class ReferenceMap:
    points: np.ndarray  # (M, 2) world frame
    resolution: float = 0.05
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("reference map is empty")

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree


@dataclass
class EkfConfig:
    q_xy: float = 0.02  # process noise std per 0.05 s step, m
    q_psi: float = 0.01  # rad
    r_xy: float = 0.05  # ICP measurement noise std at fitness 1, m
    r_psi: float = 0.02  # rad
    p_valid: float = 0.95
    icp_max_distance: float = 1.0
    icp_max_iterations: int = 50
    icp_tolerance: float = 1e-4
    min_fitness: float = 0.2
    init_sigma_xy: float = 0.1
    init_sigma_psi: float = 0.05

    def process_noise(self, dt: float) -> np.ndarray:
        scale = dt / 0.05
        return np.diag([self.q_xy ** 2, self.q_xy ** 2, self.q_psi ** 2]) * scale

    def measurement_noise(self, fitness: float = 1.0) -> np.ndarray:
        return np.diag([self.r_xy ** 2, self.r_xy ** 2, self.r_psi ** 2]) / max(fitness, 1e-3)


def chi2_cdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    return float(gammainc(dof / 2.0, x / 2.0))


def chi2_quantile(dof: int, p: float) -> float:
    """Invert the chi-squared CDF numerically."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    hi = max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    return brentq(lambda x: chi2_cdf(x, dof) - p, 0.0, hi, xtol=1e-12, rtol=1e-14)


_QUANTILES: dict[tuple[int, float], float] = {}


def gate_threshold(p_valid: float, dof: int = 3) -> float:
    key = (dof, p_valid)
    if key not in _QUANTILES:
        _QUANTILES[key] = chi2_quantile(dof, p_valid)
    return _QUANTILES[key]


def mahalanobis2(innovation, S) -> float:
    y = np.asarray(innovation, dtype=float)
    return float(y @ np.linalg.solve(S, y))


def chi2_gate(innovation, S, p_valid: float = 0.95) -> bool:
    """Accept iff the squared Mahalanobis norm is within the chi-squared quantile."""
    S = np.asarray(S, dtype=float)
    try:
        np.linalg.cholesky(S)
        m2 = mahalanobis2(innovation, S)
    except np.linalg.LinAlgError:
        log.warning("chi2 gate: innovation covariance is singular or indefinite, rejecting")
        return False
    return m2 <= gate_threshold(p_valid, len(np.atleast_1d(innovation)))


def ekf_predict(s: EkfState, u: VehicleState, dt: float, Q) -> EkfState:
    """Unicycle motion with body-frame velocity ``u.v`` and yaw rate ``u.yaw_rate``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, psi = s.mean
    vx, vy = u.v
    c, si = math.cos(psi), math.sin(psi)
    mean = np.array([x + (vx * c - vy * si) * dt, y + (vx * si + vy * c) * dt,
                     wrap_angle(psi + u.yaw_rate * dt)])
    F = np.array([[1.0, 0.0, -(vx * si + vy * c) * dt],
                  [0.0, 1.0, (vx * c - vy * si) * dt],
                  [0.0, 0.0, 1.0]])
    Q = np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q, dtype=float)
    P = F @ s.cov @ F.T + Q
    return EkfState(mean, 0.5 * (P + P.T))


class UpdateResult(NamedTuple):
    state: EkfState
    accepted: bool
    mahalanobis2: float


def ekf_correct(s: EkfState, z: Pose2D, R, p_valid: float = 0.95) -> UpdateResult:
    """Identity-model pose update with wrapped heading innovation and gating."""
    R = np.diag(R) if np.ndim(R) == 1 else np.asarray(R, dtype=float)
    # an infinite variance carries no information; a huge finite one keeps K R K^T well defined
    R = np.where(np.isposinf(R), 1e300, R)
    y = z.as_array() - s.mean
    y[2] = wrap_angle(float(y[2]))
    S = s.cov + R
    try:
        m2 = mahalanobis2(y, S)
    except np.linalg.LinAlgError:
        return UpdateResult(s.copy(), False, float("inf"))
    if not chi2_gate(y, S, p_valid):
        return UpdateResult(s.copy(), False, m2)
    K = np.linalg.solve(S.T, s.cov.T).T  # P S^-1
    mean = s.mean + K @ y
    mean[2] = wrap_angle(float(mean[2]))
    IK = np.eye(3) - K
    P = IK @ s.cov @ IK.T + K @ R @ K.T
    return UpdateResult(EkfState(mean, 0.5 * (P + P.T)), True, m2)


def ekf_update(s: EkfState, z: Pose2D, R, p_valid: float = 0.95) -> EkfState:
    return ekf_correct(s, z, R, p_valid).state


class IcpResult(NamedTuple):
    pose: Pose2D
    fitness: float
    iterations: int
    converged: bool


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> Pose2D:
    """Least-squares rotation+translation mapping ``src`` onto ``dst`` (Kabsch/SVD)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    Rm = Vt.T @ D @ U.T
    t = cd - Rm @ cs
    return Pose2D(t[0], t[1], math.atan2(Rm[1, 0], Rm[0, 0]))


def icp_align(source: np.ndarray, target: ReferenceMap, init: Pose2D, max_distance: float = 1.0,
              max_iterations: int = 50, tolerance: float = 1e-4) -> IcpResult | None:
    """Point-to-point ICP of vehicle-frame ``source`` onto the map starting at ``init``.

    Returns None when no source point has a map point within ``max_distance``.
    """
    src = np.asarray(source, dtype=float).reshape(-1, np.shape(source)[-1])[:, :2]
    if len(src) == 0:
        raise ValueError("ICP source cloud is empty")
    tree = target.tree
    pose = init
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        world = transform_points(src, pose)
        d, idx = tree.query(world, k=1, distance_upper_bound=max_distance)
        ok = np.isfinite(d)
        if ok.sum() == 0:
            return None
        if ok.sum() < 3:
            break
        delta = rigid_fit(world[ok], target.points[idx[ok]])
        pose = compose(delta, pose)
        if math.hypot(delta.x, delta.y) < tolerance and abs(delta.psi) < tolerance:
            converged = True
            break
    world = transform_points(src, pose)
    d, _ = tree.query(world, k=1, distance_upper_bound=max_distance)
    inliers = np.isfinite(d)
    if not inliers.any():
        return None
    return IcpResult(pose, float(inliers.mean()), it, converged)


@dataclass
class LocalizationInput:
    timestamp: float
    odometry: VehicleState  # measured body velocity and yaw rate over the preceding interval
    cloud: np.ndarray | None  # (K, 2) vehicle-frame points, None = no measurement


@dataclass
class LocalizationStats:
    updates: int = 0
    rejected: int = 0
    unavailable: int = 0


def localize_trajectory(frames: Iterable[LocalizationInput], ref_map: ReferenceMap, init: EkfState,
                        cfg: EkfConfig | None = None, stats: LocalizationStats | None = None
                        ) -> list[tuple[float, Pose2D]]:
    """Predict with odometry between frames, then gate and apply an ICP pose fix.

    Each record's odometry is the motion over the interval ending at its timestamp.
    """
    cfg = cfg or EkfConfig()
    stats = stats if stats is not None else LocalizationStats()
    state = init.copy()
    out: list[tuple[float, Pose2D]] = []
    prev_t = None
    for rec in frames:
        if prev_t is not None and rec.timestamp > prev_t:
            dt = rec.timestamp - prev_t
            state = ekf_predict(state, rec.odometry, dt, cfg.process_noise(dt))
        prev_t = rec.timestamp
        if rec.cloud is not None and len(rec.cloud):
            res = icp_align(rec.cloud, ref_map, state.pose, cfg.icp_max_distance,
                            cfg.icp_max_iterations, cfg.icp_tolerance)
            if res is None or res.fitness < cfg.min_fitness:
                stats.unavailable += 1
            else:
                upd = ekf_correct(state, res.pose, cfg.measurement_noise(res.fitness), cfg.p_valid)
                state = upd.state
                stats.updates += upd.accepted
                stats.rejected += not upd.accepted
        else:
            stats.unavailable += 1
        out.append((rec.timestamp, state.pose))
    return out
