"""Desk-scale 2D world simulator: line-segment rooms, walking pedestrians,
ray-cast lidar ground truth, a two-radar sensor model with quantisation,
dropout and single-bounce mirror ghosts, and noisy wheel/gyro odometry.

World files are plain text, one directive per line::

    name  world-a
    extent xmin xmax ymin ymax
    segment x1 y1 x2 y2
    actor x1 y1 x2 y2 speed radius      # walks back and forth between two points
    waypoint x y
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .core import (
    ConfigurationError,
    Pose2D,
    SensorExtrinsics,
    VehicleState,
    compose,
    default_extrinsics,
    inverse_transform_points,
    wrap_angle,
)
from .preprocess import RadarFrame

MAX_ACTOR_SPEED = 2.0


class WorldFormatError(ConfigurationError):
    pass


@dataclass
class Actor:
    start: tuple[float, float]
    end: tuple[float, float]
    speed: float
    radius: float = 0.25

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and velocity at time ``t`` (back-and-forth walk)."""
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        length = float(np.linalg.norm(b - a))
        if length == 0 or self.speed == 0:
            return a, np.zeros(2)
        u = (b - a) / length
        s = (self.speed * t) % (2 * length)
        if s <= length:
            return a + u * s, u * self.speed
        return b - u * (s - length), -u * self.speed


@dataclass
class World:
    segments: np.ndarray  # (K, 4) x1 y1 x2 y2
    actors: list[Actor] = field(default_factory=list)
    extent: tuple[float, float, float, float] = (-10.0, 10.0, -10.0, 10.0)
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    name: str = "world"

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        xmin, xmax, ymin, ymax = self.extent
        if not (xmin < xmax and ymin < ymax):
            raise WorldFormatError(f"extent {self.extent} is empty")
        for k, s in enumerate(self.segments):
            if not (xmin <= min(s[0], s[2]) and max(s[0], s[2]) <= xmax
                    and ymin <= min(s[1], s[3]) and max(s[1], s[3]) <= ymax):
                raise WorldFormatError(f"segment {k} {tuple(s)} lies outside extent {self.extent}")
            if s[0] == s[2] and s[1] == s[3]:
                raise WorldFormatError(f"segment {k} {tuple(s)} has zero length")
        for k, a in enumerate(self.actors):
            if not 0 <= a.speed <= MAX_ACTOR_SPEED:
                raise WorldFormatError(f"actor {k} speed {a.speed} outside [0, {MAX_ACTOR_SPEED}] m/s")
            if a.radius <= 0:
                raise WorldFormatError(f"actor {k} radius must be positive")
        for k, (x, y) in enumerate(self.waypoints):
            if not (xmin <= x <= xmax and ymin <= y <= ymax):
                raise ConfigurationError(f"waypoint {k} ({x}, {y}) lies outside extent {self.extent}")

    def actor_states(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.actors:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
        states = [a.state(t) for a in self.actors]
        return (np.array([p for p, _ in states]), np.array([v for _, v in states]),
                np.array([a.radius for a in self.actors]))

    def sample_map(self, spacing: float = 0.05) -> np.ndarray:
        """Static geometry sampled every ``spacing`` metres along each segment."""
        pts = []
        for x1, y1, x2, y2 in self.segments:
            n = max(1, int(math.ceil(math.hypot(x2 - x1, y2 - y1) / spacing)))
            s = np.linspace(0.0, 1.0, n + 1)
            pts.append(np.column_stack([x1 + s * (x2 - x1), y1 + s * (y2 - y1)]))
        return np.vstack(pts) if pts else np.zeros((0, 2))

    def scatterers(self, spacing: float) -> tuple[np.ndarray, np.ndarray]:
        """Discrete strong reflectors: segment endpoints plus points every
        ``spacing`` metres along each wall. Returns (points (S, 2), segment ids)."""
        key = float(spacing)
        cache = self.__dict__.setdefault("_scatterer_cache", {})
        if key not in cache:
            pts, ids = [], []
            for k, (x1, y1, x2, y2) in enumerate(self.segments):
                n = max(1, int(round(math.hypot(x2 - x1, y2 - y1) / spacing)))
                s = np.linspace(0.0, 1.0, n + 1)
                pts.append(np.column_stack([x1 + s * (x2 - x1), y1 + s * (y2 - y1)]))
                ids.append(np.full(n + 1, k))
            cache[key] = (np.vstack(pts) if pts else np.zeros((0, 2)),
                          np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64))
        return cache[key]


def parse_world(text: str, name: str | None = None) -> World:
    segments, actors, waypoints = [], [], []
    extent = None
    wname = name or "world"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "name":
                wname = args[0]
                continue
            vals = [float(a) for a in args]
        except (ValueError, IndexError):
            raise WorldFormatError(f"line {lineno}: cannot parse {raw.strip()!r}") from None
        expected = {"extent": 4, "segment": 4, "actor": 6, "waypoint": 2}.get(key)
        if expected is None:
            raise WorldFormatError(f"line {lineno}: unknown directive {key!r}")
        if len(vals) != expected or not all(map(math.isfinite, vals)):
            raise WorldFormatError(f"line {lineno}: {key} needs {expected} finite numbers, got {raw.strip()!r}")
        if key == "extent":
            extent = tuple(vals)
        elif key == "segment":
            if vals[0] == vals[2] and vals[1] == vals[3]:
                raise WorldFormatError(f"line {lineno}: segment {len(segments)} has zero length")
            segments.append(vals)
        elif key == "actor":
            actors.append(Actor((vals[0], vals[1]), (vals[2], vals[3]), vals[4], vals[5]))
        else:
            waypoints.append((vals[0], vals[1]))
    if extent is None:
        raise WorldFormatError("world file has no extent line")
    return World(np.array(segments).reshape(-1, 4), actors, extent, waypoints, wname)


def world_to_text(world: World) -> str:
    lines = [f"name {world.name}", "extent " + " ".join(repr(float(v)) for v in world.extent)]
    lines += ["segment " + " ".join(repr(float(v)) for v in s) for s in world.segments]
    lines += [f"actor {a.start[0]!r} {a.start[1]!r} {a.end[0]!r} {a.end[1]!r} {a.speed!r} {a.radius!r}"
              for a in world.actors]
    lines += [f"waypoint {float(x)!r} {float(y)!r}" for x, y in world.waypoints]
    return "\n".join(lines) + "\n"


def _box(x0, y0, x1, y1) -> list[list[float]]:
    return [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]


def _preset_worlds() -> dict[str, World]:
    small = World(np.array(_box(-3.0, -2.5, 3.0, 2.5)), [], (-4, 4, -3.5, 3.5),
                  [(-1.5, -1.0), (1.5, -1.0), (1.5, 1.0), (-1.5, 1.0), (-1.5, -1.0)], "env-small")
    # training room: two obstacles, two pedestrians
    a_walls = _box(-5.0, -3.5, 5.0, 3.0) + _box(-1.4, -0.8, 0.2, 0.3) + _box(1.8, -0.5, 2.2, -0.1)
    world_a = World(np.array(a_walls), [Actor((-4.0, 2.4), (2.0, 2.4), 1.0, 0.25),
                                        Actor((3.0, -3.0), (3.0, 0.5), 0.5, 0.25)], (-6, 6, -5, 4),
                    [(-3.5, -2.0), (3.5, -2.0), (3.6, 1.4), (0.0, 1.6), (-3.5, 1.5), (-3.6, -0.5),
                     (-3.5, -2.0)], "world-a")
    # held-out room: pillar and a partition stub, one pedestrian
    b_walls = _box(-4.5, -3.5, 4.5, 3.5) + _box(-0.5, -0.5, 0.5, 0.5) + [[2.5, 3.5, 2.5, 2.0]]
    world_b = World(np.array(b_walls), [Actor((-3.0, 2.2), (1.5, 2.2), 0.8, 0.25)], (-6, 6, -5, 5),
                    [(-2.5, -2.0), (2.5, -2.0), (2.8, 0.5), (1.5, 2.0), (-2.5, 2.0), (-2.8, -0.5),
                     (-2.5, -2.0)], "world-b")
    # L-shaped room with a box, two pedestrians
    c_walls = [[-5.0, -3.0, 4.0, -3.0], [4.0, -3.0, 4.0, 1.0], [4.0, 1.0, 1.5, 1.0], [1.5, 1.0, 1.5, 4.0],
               [1.5, 4.0, -5.0, 4.0], [-5.0, 4.0, -5.0, -3.0]] + _box(-2.2, 0.0, -1.4, 0.8)
    world_c = World(np.array(c_walls), [Actor((-4.0, -1.0), (2.5, -1.0), 1.0, 0.25),
                                        Actor((-3.5, 3.0), (-3.5, 1.5), 0.5, 0.25)], (-7, 6, -5, 6),
                    [(-3.5, -1.8), (2.5, -1.8), (2.6, -0.2), (0.3, 0.0), (0.0, 2.6), (-3.5, 2.7),
                     (-3.6, -1.0), (-3.5, -1.8)], "world-c")
    return {w.name: w for w in (small, world_a, world_b, world_c)}


PRESET_WORLDS = _preset_worlds()


@dataclass
class SimConfig:
    radar_rate: float = 20.0  # Hz
    lidar_rate: float = 20.0  # Hz
    range_resolution: float = 0.07  # m
    max_range: float = 8.56  # m
    azimuth_resolution_deg: float = 14.3
    velocity_resolution: float = 0.01  # m/s
    fov_deg: float = 180.0  # per radar; front + rear cover 360
    angle_noise_deg: float = 0.5
    rays_per_bin: int = 9  # sub-rays searched for the strongest (nearest) return in each azimuth bin
    scatterer_spacing: float = 1.5  # m between discrete wall reflectors; 0 = continuous surfaces
    ghost_probability: float = 0.3  # expected fraction of emitted detections that are ghosts
    ghost_angle_noise_deg: float = 20.0  # weak multipath returns get poor angle estimates
    ghost_range_noise: float = 0.3  # m
    ghost_min_depth: float = 0.3  # ghost image sits at least this far behind its mirror wall
    dropout_probability: float = 0.1
    odom_speed_sigma: float = 0.02  # m/s
    odom_yaw_rate_sigma: float = 0.01  # rad/s
    cruise_speed: float = 0.5  # m/s
    max_yaw_rate: float = 0.8  # rad/s
    max_yaw_accel: float = 3.0  # rad/s^2
    heading_gain: float = 2.0
    waypoint_tolerance: float = 0.3  # m
    lidar_step_deg: float = 1.0
    lidar_max_range: float = 12.0
    max_frames: int = 4000
    seed: int = 0

    def __post_init__(self):
        for name in ("radar_rate", "lidar_rate", "range_resolution", "max_range", "azimuth_resolution_deg",
                     "velocity_resolution", "fov_deg", "lidar_step_deg", "lidar_max_range"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.radar_rate != self.lidar_rate:
            raise ConfigurationError("radar and lidar rates must match (records are time-synchronised)")
        for name in ("ghost_probability", "dropout_probability"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1)")

    @property
    def dt(self) -> float:
        return 1.0 / self.radar_rate

    def as_dict(self) -> dict:
        return asdict(self)


SCENARIOS = {
    "default": {},
    "ghost60": {"ghost_probability": 0.6},
    "clean": {"ghost_probability": 0.0, "dropout_probability": 0.0, "angle_noise_deg": 0.0,
              "odom_speed_sigma": 0.0, "odom_yaw_rate_sigma": 0.0},
}


def scenario_config(name: str, **overrides) -> SimConfig:
    if name not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return replace(SimConfig(), **{**SCENARIOS[name], **overrides})


# ---------------------------------------------------------------- ray casting

def cast_rays(world: World, origin, angles, t: float = 0.0, max_range: float = np.inf,
              include_actors: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """First-hit range along each ray and the hit id.

    Ids ``0..K-1`` are wall segments, ``K + j`` is actor ``j`` and -1 is a miss
    (range ``inf``).
    """
    o = np.asarray(origin, dtype=float)
    ang = np.atleast_1d(np.asarray(angles, dtype=float))
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    best = np.full(len(ang), np.inf)
    hit = np.full(len(ang), -1, dtype=np.int64)
    seg = world.segments
    if len(seg):
        a, e = seg[:, :2], seg[:, 2:] - seg[:, :2]
        ao = a - o
        denom = d[:, :1] * e[None, :, 1] - d[:, 1:] * e[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
            uu = (ao[None, :, 0] * d[:, 1:] - ao[None, :, 1] * d[:, :1]) / denom
        ok = (np.abs(denom) > 1e-12) & (tt > 1e-9) & (uu >= 0.0) & (uu <= 1.0)
        tt = np.where(ok, tt, np.inf)
        k = np.argmin(tt, axis=1)
        best = tt[np.arange(len(ang)), k]
        hit = np.where(np.isfinite(best), k, -1)
    if include_actors and world.actors:
        pos, _, rad = world.actor_states(t)
        f = o - pos  # (J, 2)
        b = d @ f.T  # (R, J)
        c = np.sum(f * f, axis=1) - rad ** 2
        disc = b * b - c[None, :]
        with np.errstate(invalid="ignore"):
            tc = -b - np.sqrt(disc)
        tc = np.where((disc >= 0) & (tc > 1e-9), tc, np.inf)
        j = np.argmin(tc, axis=1)
        tj = tc[np.arange(len(ang)), j]
        closer = tj < best
        best = np.where(closer, tj, best)
        hit = np.where(closer, len(seg) + j, hit)
    miss = best > max_range
    best[miss] = np.inf
    hit[miss] = -1
    return best, hit


def simulate_lidar_scan(world: World, pose: Pose2D, cfg: SimConfig | None = None, t: float = 0.0) -> np.ndarray:
    """360-degree first-hit scan from the vehicle origin, in the vehicle frame."""
    cfg = cfg or SimConfig()
    n = int(round(360.0 / cfg.lidar_step_deg))
    local = np.deg2rad(np.arange(n) * cfg.lidar_step_deg)
    r, _ = cast_rays(world, (pose.x, pose.y), local + pose.psi, t, cfg.lidar_max_range)
    ok = np.isfinite(r)
    return np.column_stack([r[ok] * np.cos(local[ok]), r[ok] * np.sin(local[ok])]).reshape(-1, 2)


# ---------------------------------------------------------------- radar model

def _reflect(p: np.ndarray, seg: np.ndarray) -> tuple[np.ndarray, float]:
    """Mirror image of ``p`` across the infinite line through ``seg`` and its distance to that line."""
    a, b = seg[:2], seg[2:]
    u = (b - a) / np.linalg.norm(b - a)
    w = p - a
    foot = a + u * (w @ u)
    return 2 * foot - p, float(np.linalg.norm(p - foot))


def _segment_crossing(s: np.ndarray, p: np.ndarray, seg: np.ndarray) -> float | None:
    """Parameter along segment ``seg`` where the line s->p crosses it, or None."""
    d, a, e = p - s, seg[:2], seg[2:] - seg[:2]
    den = d[0] * e[1] - d[1] * e[0]
    if abs(den) < 1e-12:
        return None
    ao = a - s
    t = (ao[0] * e[1] - ao[1] * e[0]) / den
    u = (ao[0] * d[1] - ao[1] * d[0]) / den
    if 0.0 < t < 1.0 and 0.0 <= u <= 1.0:
        return t
    return None


@dataclass
class RadarTruth:
    """Simulator-side annotations for one sensor frame."""

    is_ghost: np.ndarray  # (N,) bool
    is_dynamic: np.ndarray  # (N,) bool, return from a moving actor


def _quantize(x, res):
    return np.round(np.asarray(x, dtype=float) / res) * res


def simulate_radar_frame(world: World, vehicle: VehicleState, cfg: SimConfig, rng: np.random.Generator,
                         t: float = 0.0, extrinsics: SensorExtrinsics | None = None
                         ) -> tuple[list[RadarFrame], list[RadarTruth]]:
    """One frame per radar, detections in each sensor's own frame."""
    extrinsics = extrinsics or default_extrinsics()
    frames, truths = [], []
    half_fov = math.radians(cfg.fov_deg) / 2
    bin_w = math.radians(cfg.azimuth_resolution_deg)
    n_bins = max(1, int(math.floor(2 * half_fov / bin_w + 1e-9)))
    bin_lo = -n_bins * bin_w / 2
    k_seg = len(world.segments)
    actor_pos, actor_vel, _ = world.actor_states(t)
    for sid in extrinsics:
        mount = extrinsics[sid]
        spose = compose(vehicle.pose, mount)
        s = np.array([spose.x, spose.y])
        # sensor velocity in the sensor frame
        v_body = vehicle.sensor_velocity(np.array([[mount.x, mount.y]]))[0]
        cm, sm = math.cos(mount.psi), math.sin(mount.psi)
        v_s = np.array([cm * v_body[0] + sm * v_body[1], -sm * v_body[0] + cm * v_body[1]])
        cw, sw = math.cos(spose.psi), math.sin(spose.psi)
        rot_w2s = np.array([[cw, sw], [-sw, cw]])

        keep = rng.random(n_bins) >= cfg.dropout_probability
        ang_noise = rng.normal(0.0, math.radians(cfg.angle_noise_deg), n_bins) if cfg.angle_noise_deg > 0 \
            else np.zeros(n_bins)
        local_ang, r, hit = _strongest_returns(world, s, spose.psi, bin_lo, bin_w, n_bins, cfg, rng, t)
        dets, ghost, dyn = [], [], []
        n_static = 0
        for b in range(n_bins):
            if not keep[b] or hit[b] < 0:
                continue
            theta = local_ang[b]
            q_hat = np.array([math.cos(theta), math.sin(theta)])
            if hit[b] < k_seg:
                dv = -(q_hat @ v_s)
                is_dyn = False
                n_static += 1
            else:
                va = rot_w2s @ actor_vel[hit[b] - k_seg]
                dv = q_hat @ (va - v_s)
                is_dyn = bool(np.linalg.norm(actor_vel[hit[b] - k_seg]) > 0)
            rq = float(_quantize(r[b], cfg.range_resolution))
            th = theta + ang_noise[b]
            dets.append([rq * math.cos(th), rq * math.sin(th), 0.0, float(_quantize(dv, cfg.velocity_resolution))])
            ghost.append(False)
            dyn.append(is_dyn)
        if n_static and cfg.ghost_probability > 0:
            # geometric ghost count per true return, so the expected ghost
            # fraction of the frame equals ghost_probability
            n_ghosts = int(rng.negative_binomial(len(dets), 1.0 - cfg.ghost_probability))
            for _ in range(n_ghosts):
                for _attempt in range(4):
                    p_true, seg_id = _random_surface_point(world, s, spose.psi, half_fov, cfg, rng, t)
                    if p_true is None:
                        continue
                    g = _make_ghost(world, s, p_true, seg_id, spose, v_s, cfg, rng, t, half_fov)
                    if g is not None:
                        dets.append(g)
                        ghost.append(True)
                        dyn.append(False)
                        break
        frames.append(RadarFrame(t, sid, np.array(dets).reshape(-1, 4)))
        truths.append(RadarTruth(np.array(ghost, dtype=bool), np.array(dyn, dtype=bool)))
    return frames, truths


def _strongest_returns(world, s, heading, bin_lo, bin_w, n_bins, cfg, rng, t):
    """Per azimuth bin, the dominant return.

    Moving actors win when they are the nearest surface in the bin. Otherwise
    the nearest visible discrete reflector is returned, falling back to the
    nearest surface point among ``rays_per_bin`` sub-rays when the bin holds
    none (or ``scatterer_spacing == 0``).
    """
    ang, r, hit = _surface_returns(world, s, heading, bin_lo, bin_w, n_bins, cfg, rng, t)
    if cfg.scatterer_spacing <= 0 or len(world.segments) == 0:
        return ang, r, hit
    pts, seg_ids = world.scatterers(cfg.scatterer_spacing)
    rel = pts - s
    dist = np.hypot(rel[:, 0], rel[:, 1])
    a_loc = wrap_angle(np.arctan2(rel[:, 1], rel[:, 0]) - heading)
    b = np.floor((a_loc - bin_lo) / bin_w).astype(np.int64)
    cand = (dist > 1e-6) & (dist <= cfg.max_range) & (b >= 0) & (b < n_bins)
    if not cand.any():
        return ang, r, hit
    idx = np.flatnonzero(cand)
    r_first, _ = cast_rays(world, s, a_loc[idx] + heading, t, np.inf)
    vis = idx[r_first >= dist[idx] - 1e-6]
    ang, r, hit = ang.copy(), r.copy(), hit.copy()
    k_seg = len(world.segments)
    # nearest visible reflector per bin
    order = vis[np.lexsort((dist[vis], b[vis]))]
    first = np.unique(b[order], return_index=True)[1]
    for j in order[first]:
        bj = b[j]
        if hit[bj] >= k_seg and r[bj] < dist[j]:
            continue  # an actor in front dominates
        ang[bj], r[bj], hit[bj] = a_loc[j], dist[j], seg_ids[j]
    return ang, r, hit


def _surface_returns(world, s, heading, bin_lo, bin_w, n_bins, cfg, rng, t):
    m = cfg.rays_per_bin
    if m == 1:
        ang = bin_lo + (np.arange(n_bins) + rng.random(n_bins)) * bin_w
        r, hit = cast_rays(world, s, ang + heading, t, cfg.max_range)
        return ang, r, hit
    offsets = (np.arange(m) + 0.5) / m
    ang = (bin_lo + (np.arange(n_bins)[:, None] + offsets[None, :]) * bin_w).ravel()
    r, hit = cast_rays(world, s, ang + heading, t, cfg.max_range)
    r, hit, ang = r.reshape(n_bins, m), hit.reshape(n_bins, m), ang.reshape(n_bins, m)
    k = np.argmin(r, axis=1)
    rows = np.arange(n_bins)
    return ang[rows, k], r[rows, k], hit[rows, k]


def _random_surface_point(world, s, heading, half_fov, cfg, rng, t):
    """A wall point visible in the field of view: the far end of a multipath route."""
    ang = heading + rng.uniform(-half_fov, half_fov)
    r, hit = cast_rays(world, s, ang, t, cfg.max_range)
    if hit[0] < 0 or hit[0] >= len(world.segments):
        return None, -1
    return s + r[0] * np.array([math.cos(ang), math.sin(ang)]), int(hit[0])


def _make_ghost(world, s, p_true, hit_seg, spose, v_s, cfg, rng, t, half_fov, tries: int = 8):
    """Single-bounce image of ``p_true`` about a randomly chosen wall that the
    sensor can actually see the bounce on."""
    segs = world.segments
    for _ in range(tries):
        k = int(rng.integers(len(segs)))
        if k == hit_seg:
            continue
        img, depth = _reflect(p_true, segs[k])
        if depth < cfg.ghost_min_depth:
            continue
        u = _segment_crossing(s, img, segs[k])
        if u is None:
            continue
        ang_w = math.atan2(img[1] - s[1], img[0] - s[0])
        theta = wrap_angle(ang_w - spose.psi)
        if abs(theta) > half_fov:
            continue
        rng_img = float(np.linalg.norm(img - s))
        if rng_img > cfg.max_range:
            continue
        # the bounce point must be the first thing the sensor sees in that direction
        r_first, h_first = cast_rays(world, s, ang_w, t)
        if h_first[0] != k or abs(r_first[0] - u * rng_img) > 1e-6:
            continue
        q_hat = np.array([math.cos(theta), math.sin(theta)])
        dv = -(q_hat @ v_s)
        th = theta + (rng.normal(0.0, math.radians(cfg.ghost_angle_noise_deg))
                      if cfg.ghost_angle_noise_deg > 0 else 0.0)
        if cfg.ghost_range_noise > 0:
            rng_img = max(0.0, rng_img + rng.normal(0.0, cfg.ghost_range_noise))
        rq = float(_quantize(rng_img, cfg.range_resolution))
        return [rq * math.cos(th), rq * math.sin(th), 0.0, float(_quantize(dv, cfg.velocity_resolution))]
    return None


# ---------------------------------------------------------------- trajectories

@dataclass
class SimRecord:
    frame_id: int
    t: float
    radar: list[RadarFrame]
    truth: list[RadarTruth]
    odometry: VehicleState  # measured v / yaw rate over the interval ending at t, pose = dead reckoning
    gt: VehicleState  # true pose and motion
    lidar: np.ndarray  # (M, 2) vehicle frame


@dataclass
class Dataset:
    world: World
    config: SimConfig
    records: list[SimRecord]
    extrinsics: SensorExtrinsics = field(default_factory=default_extrinsics)
    scenario: str = "custom"


def unicycle_step(pose: Pose2D, v: float, yaw_rate: float, dt: float) -> Pose2D:
    """Discrete motion model shared with the EKF prediction."""
    return Pose2D(pose.x + v * dt * math.cos(pose.psi), pose.y + v * dt * math.sin(pose.psi),
                  pose.psi + yaw_rate * dt)


def drive_waypoints(waypoints, cfg: SimConfig) -> list[tuple[float, float]]:
    """Commanded (speed, yaw rate) per step for a constant-speed unicycle
    steering toward successive waypoints with bounded yaw acceleration.

    The vehicle starts on the first waypoint facing the second and stops at
    its closest approach to the last one.
    """
    wps = [np.asarray(w, float) for w in waypoints]
    if len(wps) < 2:
        return []
    dt, v = cfg.dt, cfg.cruise_speed
    d0 = wps[1] - wps[0]
    pose = Pose2D(wps[0][0], wps[0][1], math.atan2(d0[1], d0[0]))
    target, w, controls = 1, 0.0, []
    while len(controls) < cfg.max_frames:
        while target < len(wps) - 1 and np.hypot(*(wps[target] - [pose.x, pose.y])) < cfg.waypoint_tolerance:
            target += 1
        delta = wps[target] - [pose.x, pose.y]
        dist = float(np.hypot(*delta))
        if target == len(wps) - 1 and dist < cfg.waypoint_tolerance:
            along = delta[0] * math.cos(pose.psi) + delta[1] * math.sin(pose.psi)
            if along <= v * dt / 2:
                break
        err = wrap_angle(math.atan2(delta[1], delta[0]) - pose.psi) if dist > 1e-12 else 0.0
        w_cmd = float(np.clip(cfg.heading_gain * err, -cfg.max_yaw_rate, cfg.max_yaw_rate))
        dw = cfg.max_yaw_accel * dt
        w = float(np.clip(w_cmd, w - dw, w + dw))
        controls.append((v, w))
        pose = unicycle_step(pose, v, w, dt)
    return controls


def simulate_trajectory(world: World, waypoints=None, cfg: SimConfig | None = None,
                        extrinsics: SensorExtrinsics | None = None, scenario: str = "custom") -> Dataset:
    """Drive the waypoints and emit one synchronised record per 1/rate seconds."""
    cfg = cfg or SimConfig()
    extrinsics = extrinsics or default_extrinsics()
    waypoints = list(world.waypoints if waypoints is None else waypoints)
    if not waypoints:
        raise ConfigurationError("trajectory needs at least one waypoint")
    xmin, xmax, ymin, ymax = world.extent
    for k, (x, y) in enumerate(waypoints):
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            raise ConfigurationError(f"waypoint {k} ({x}, {y}) lies outside extent {world.extent}")
    rng = np.random.default_rng(cfg.seed)
    controls = drive_waypoints(waypoints, cfg) or [(0.0, 0.0)]
    dt = cfg.dt
    if len(waypoints) >= 2:
        d0 = np.subtract(waypoints[1], waypoints[0])
        psi0 = math.atan2(d0[1], d0[0]) if np.any(d0) else 0.0
    else:
        psi0 = 0.0
    gt = Pose2D(waypoints[0][0], waypoints[0][1], psi0)
    odom = gt
    records = []
    for k, (v, w) in enumerate(controls, start=1):
        t = k * dt
        gt = unicycle_step(gt, v, w, dt)
        vm = v + (rng.normal(0.0, cfg.odom_speed_sigma) if cfg.odom_speed_sigma > 0 else 0.0)
        wm = w + (rng.normal(0.0, cfg.odom_yaw_rate_sigma) if cfg.odom_yaw_rate_sigma > 0 else 0.0)
        if v == 0.0 and w == 0.0:
            vm, wm = 0.0, 0.0  # encoders read zero at rest
        odom = unicycle_step(odom, vm, wm, dt)
        true_state = VehicleState(gt, (v, 0.0), w)
        radar, truth = simulate_radar_frame(world, true_state, cfg, rng, t, extrinsics)
        lidar = simulate_lidar_scan(world, gt, cfg, t)
        records.append(SimRecord(k - 1, t, radar, truth, VehicleState(odom, (vm, 0.0), wm), true_state, lidar))
    return Dataset(world, cfg, records, extrinsics, scenario)


def ghost_fraction(dataset: Dataset) -> float:
    n = sum(len(tr.is_ghost) for rec in dataset.records for tr in rec.truth)
    g = sum(int(tr.is_ghost.sum()) for rec in dataset.records for tr in rec.truth)
    return g / max(n, 1)


def world_points_to_local(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    return inverse_transform_points(points, pose)
