"""Point-cloud quality, node accuracy and localisation error of a trained
classifier against the naive (classifier bypassed) pipeline on one dataset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .core import SensorExtrinsics
from .gnn import ModelParams
from .localization import EkfState, LocalizationInput, LocalizationStats, ReferenceMap, localize_trajectory
from .metrics import TrajectoryPair, UndefinedMetricError, ate, chamfer_one_way, hausdorff_one_way, rte, summarize
from .pipeline import build_samples, reference_clouds, run_pipeline
from .training import evaluate

METHODS = ("raw", "naive", "gnn")


@dataclass
class MethodRun:
    """Per-frame series for one method on one dataset."""

    chamfer: list[float] = field(default_factory=list)
    hausdorff: list[float] = field(default_factory=list)
    clouds: list[np.ndarray] = field(default_factory=list)
    empty_frames: int = 0


def run_method(records, params: ModelParams | None, method: str, config: PipelineConfig,
               extrinsics: SensorExtrinsics | None = None, warmup: int | None = None) -> MethodRun:
    """``raw`` = current frame's static detections, ``naive`` = grid + history
    with every node kept, ``gnn`` = full pipeline."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    warmup = config.grid_window if warmup is None else warmup
    records = list(records)
    use = None if method in ("raw", "naive") else params
    if method == "gnn" and params is None:
        raise ValueError("gnn method needs trained parameters")
    out = MethodRun()
    refs = reference_clouds(records, config.reference_window)
    for (rec, frame), (_, ref) in zip(run_pipeline(records, use, config, extrinsics), refs):
        cloud = frame.fused.static_detections.xy if method == "raw" else frame.cloud
        out.clouds.append(cloud)
        if rec.frame_id < warmup:
            continue
        if len(cloud) == 0 or len(ref) == 0:
            out.empty_frames += 1
            continue
        out.chamfer.append(chamfer_one_way(cloud, ref))
        out.hausdorff.append(hausdorff_one_way(cloud, ref))
    return out


def localize(records, clouds, map_points, config: PipelineConfig):
    """EKF over the dataset using ``clouds[k]`` as the ICP source of frame k.

    Returns (estimated (N, 3), ground truth (N, 3), stats)."""
    records = list(records)
    ekf = config.ekf()
    ref = ReferenceMap(map_points)
    gt = np.array([r.gt.pose.as_array() for r in records])
    init = EkfState(gt[0], np.diag([ekf.init_sigma_xy ** 2, ekf.init_sigma_xy ** 2, ekf.init_sigma_psi ** 2]))
    stats = LocalizationStats()
    inputs = [LocalizationInput(r.t, r.odometry, c if len(c) else None) for r, c in zip(records, clouds)]
    est = localize_trajectory(inputs, ref, init, ekf, stats)
    return np.array([p.as_array() for _, p in est]), gt, stats


def evaluate_dataset(records, params: ModelParams | None, config: PipelineConfig | None = None,
                     extrinsics: SensorExtrinsics | None = None, map_points=None,
                     methods=("naive", "gnn"), label: str = "", split: str = "") -> list[dict]:
    """One report row per method: Chamfer/Hausdorff mean and 90% tail, node
    accuracy (gnn only) and, with a map, ATE/RTE."""
    config = config or PipelineConfig()
    records = list(records)
    rows = []
    accuracy = None
    if "gnn" in methods and params is not None:
        samples = build_samples(records, config, extrinsics, skip=config.grid_window)
        if samples:
            accuracy = evaluate(params, samples, config.decision_threshold)[1]
    for method in methods:
        if method == "gnn" and params is None:
            continue
        run = run_method(records, params, method, config, extrinsics)
        row = {"dataset": label, "split": split, "method": method, "frames": len(run.chamfer),
               "empty_frames": run.empty_frames}
        try:
            cd, hd = summarize(run.chamfer), summarize(run.hausdorff)
            row.update(cd_mean=cd.mean, cd_tail90=cd.tail, hd_mean=hd.mean, hd_tail90=hd.tail)
        except ValueError:
            row.update(cd_mean=None, cd_tail90=None, hd_mean=None, hd_tail90=None)
        row["node_accuracy"] = accuracy if method == "gnn" else None
        if map_points is not None and len(map_points):
            est, gt, stats = localize(records, run.clouds, map_points, config)
            pair = TrajectoryPair(est, gt)
            a_tr, a_rot = ate(pair)
            r_tr, r_rot = rte(pair) if len(est) > 1 else (np.zeros(1), np.zeros(1))
            row.update(ate_tr_mean=float(a_tr.mean()), ate_tr_tail90=summarize(a_tr).tail,
                       ate_rot_mean=float(a_rot.mean()), rte_tr_mean=float(r_tr.mean()),
                       rte_rot_mean=float(r_rot.mean()), icp_updates=stats.updates,
                       icp_rejected=stats.rejected, icp_unavailable=stats.unavailable)
        rows.append(row)
    return rows


def relative_improvement(baseline: float, value: float) -> float:
    if baseline <= 0:
        raise UndefinedMetricError("baseline must be positive")
    return (baseline - value) / baseline


def relative_gap(seen: float, unseen: float) -> float:
    """|unseen - seen| relative to the seen-world value."""
    if seen <= 0:
        raise UndefinedMetricError("seen-world value must be positive")
    return abs(unseen - seen) / seen
