"""On-disk formats.

A dataset directory holds

* ``dataset.jsonl``: a header line, then one JSON record per frame,
* ``world.txt``: the world description (see :mod:`radar_enhance.sim`),
* ``map.txt`` + ``map.json``: prior map as ``x y`` lines with a metadata sidecar.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, Pose2D, SensorExtrinsics, VehicleState
from .preprocess import RadarFrame
from .sim import Dataset, RadarTruth, SimRecord, World, parse_world, world_to_text

log = logging.getLogger(__name__)

DATASET_FORMAT = "radar-enhance-dataset"
MAP_FORMAT = "radar-enhance-map"
FORMAT_VERSION = 1
DATASET_FILE = "dataset.jsonl"
WORLD_FILE = "world.txt"
MAP_FILE = "map.txt"
MAP_META_FILE = "map.json"


class DatasetFormatError(ConfigurationError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _state_to_dict(s: VehicleState) -> dict:
    return {"pose": [s.pose.x, s.pose.y, s.pose.psi], "v": [float(s.v[0]), float(s.v[1])],
            "yaw_rate": float(s.yaw_rate)}


def _state_from_dict(d: dict) -> VehicleState:
    x, y, psi = (float(a) for a in d["pose"])
    vx, vy = (float(a) for a in d["v"])
    return VehicleState(Pose2D(x, y, psi), (vx, vy), float(d["yaw_rate"]))


def record_to_dict(rec: SimRecord) -> dict:
    radar = []
    for k, frame in enumerate(rec.radar):
        entry = {"sensor_id": frame.sensor_id, "t": float(frame.timestamp),
                 "detections": frame.detections.tolist()}
        if k < len(rec.truth):
            entry["is_ghost"] = rec.truth[k].is_ghost.astype(int).tolist()
            entry["is_dynamic"] = rec.truth[k].is_dynamic.astype(int).tolist()
        radar.append(entry)
    return {"frame_id": int(rec.frame_id), "t": float(rec.t), "radar": radar,
            "odometry": _state_to_dict(rec.odometry), "gt": _state_to_dict(rec.gt),
            "lidar": np.asarray(rec.lidar, dtype=float).tolist()}


def record_from_dict(d: dict) -> SimRecord:
    radar, truth = [], []
    for entry in d["radar"]:
        dets = np.asarray(entry["detections"], dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(dets)):
            raise ValueError("non-finite detection")
        radar.append(RadarFrame(float(entry["t"]), str(entry["sensor_id"]), dets))
        n = len(dets)
        ghost = np.asarray(entry.get("is_ghost", [0] * n), dtype=bool)
        dyn = np.asarray(entry.get("is_dynamic", [0] * n), dtype=bool)
        if len(ghost) != n or len(dyn) != n:
            raise ValueError("annotation length does not match detections")
        truth.append(RadarTruth(ghost, dyn))
    lidar = np.asarray(d["lidar"], dtype=float).reshape(-1, 2)
    return SimRecord(int(d["frame_id"]), float(d["t"]), radar, truth, _state_from_dict(d["odometry"]),
                     _state_from_dict(d["gt"]), lidar)


def dataset_header(ds: Dataset) -> dict:
    return {"format": DATASET_FORMAT, "version": FORMAT_VERSION, "world": ds.world.name,
            "scenario": ds.scenario, "sim_config": ds.config.as_dict(),
            "extrinsics": {sid: [ds.extrinsics[sid].x, ds.extrinsics[sid].y, ds.extrinsics[sid].psi]
                           for sid in ds.extrinsics},
            "n_records": len(ds.records)}


def write_dataset(ds: Dataset, out_dir, map_spacing: float = 0.05) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / DATASET_FILE, "w") as fh:
            fh.write(_dump(dataset_header(ds)) + "\n")
            for rec in ds.records:
                fh.write(_dump(record_to_dict(rec)) + "\n")
        (out / WORLD_FILE).write_text(world_to_text(ds.world))
        write_map(ds.world.sample_map(map_spacing), out, {"world": ds.world.name, "spacing": map_spacing})
    except OSError as exc:
        raise ConfigurationError(f"cannot write dataset to {out}: {exc}") from None
    return out


@dataclass
class LoadedDataset:
    header: dict
    records: list[SimRecord]
    skipped: int = 0
    path: Path | None = None
    extrinsics: SensorExtrinsics | None = None
    world: World | None = None
    map_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return str(self.header.get("world", self.path.name if self.path else "dataset"))


def _read_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError:
        raise DatasetFormatError(f"{path}: first line is not a JSON header") from None
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{path}: not a {DATASET_FORMAT} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {header.get('version')!r}")
    return header


def iter_records(path, counter: dict | None = None):
    """Yield records from a dataset file, skipping corrupt lines.

    The number of skipped lines is accumulated in ``counter["skipped"]``.
    """
    counter = counter if counter is not None else {}
    counter.setdefault("skipped", 0)
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise DatasetFormatError(f"{path}: empty dataset file")
        _read_header(first, path)
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                yield record_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                counter["skipped"] += 1
                log.warning("%s:%d: skipping corrupt record (%s)", path, lineno, exc)


def read_dataset(path) -> LoadedDataset:
    """Load ``path`` (a dataset directory or a ``.jsonl`` file)."""
    p = Path(path)
    file = p / DATASET_FILE if p.is_dir() else p
    if not file.exists():
        raise DatasetFormatError(f"no dataset at {p}")
    with open(file) as fh:
        header = _read_header(fh.readline(), file)
    counter = {"skipped": 0}
    records = list(iter_records(file, counter))
    ext = header.get("extrinsics")
    extrinsics = SensorExtrinsics({k: Pose2D(*v) for k, v in ext.items()}) if ext else None
    root = file.parent
    world = parse_world((root / WORLD_FILE).read_text()) if (root / WORLD_FILE).exists() else None
    map_points = read_map(root) if (root / MAP_FILE).exists() else None
    return LoadedDataset(header, records, counter["skipped"], root, extrinsics, world, map_points)


def write_map(points, out_dir, meta: dict | None = None) -> None:
    out = Path(out_dir)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    (out / MAP_FILE).write_text("".join(f"{float(x)!r} {float(y)!r}\n" for x, y in pts))
    sidecar = {"format": MAP_FORMAT, "version": FORMAT_VERSION, "frame": "world", "units": "m",
               "n_points": int(len(pts)), **(meta or {})}
    (out / MAP_META_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_map(path) -> np.ndarray:
    """Read ``map.txt`` (a directory or the file itself), checking the sidecar count if present."""
    p = Path(path)
    file = p / MAP_FILE if p.is_dir() else p
    pts = []
    for lineno, line in enumerate(file.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            x, y = float(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            raise DatasetFormatError(f"{file}:{lineno}: expected 'x y', got {line!r}") from None
        if len(parts) != 2 or not (math.isfinite(x) and math.isfinite(y)):
            raise DatasetFormatError(f"{file}:{lineno}: expected two finite numbers, got {line!r}")
        pts.append((x, y))
    meta_file = file.parent / MAP_META_FILE
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        if meta.get("n_points", len(pts)) != len(pts):
            raise DatasetFormatError(f"{file}: sidecar says {meta['n_points']} points, found {len(pts)}")
    return np.array(pts, dtype=float).reshape(-1, 2)


def read_world(path) -> World:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read world file {p}: {exc}") from None
    return parse_world(text, name=p.stem)
