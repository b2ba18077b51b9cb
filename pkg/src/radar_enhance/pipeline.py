"""Per-frame enhancement chain (preprocess -> graph -> forward -> history) with
stage timing, plus helpers that turn simulator records into training samples."""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .core import Pose2D, SensorExtrinsics, VehicleState, default_extrinsics
from .gnn import ModelParams, build_graph, model_forward
from .history import DetectionHistory
from .preprocess import FusedFrame, OccupancyGrid, RadarFrame, preprocess_frame
from .training import LabeledSample, label_nodes

STAGES = ("preprocess", "graph", "forward", "history")


@dataclass
class EnhancedFrame:
    frame_id: int
    timestamp: float
    nodes: np.ndarray  # (N, 4) grid nodes in the vehicle frame
    probs: np.ndarray  # (N,) classifier output, ones when bypassed
    valid: np.ndarray  # (N,) bool
    cloud: np.ndarray  # (K, 2) enhanced output in the vehicle frame
    fused: FusedFrame
    latency: dict[str, float] = field(default_factory=dict)  # seconds per stage


class EnhancementPipeline:
    """Stateful single-writer pipeline. ``params=None`` bypasses the classifier
    and treats every grid node as valid (naive-radar baseline)."""

    def __init__(self, params: ModelParams | None, config: PipelineConfig | None = None,
                 extrinsics: SensorExtrinsics | None = None):
        self.params = params
        self.config = config or PipelineConfig()
        self.extrinsics = extrinsics or default_extrinsics()
        c = self.config
        self.grid = OccupancyGrid(c.grid_resolution, c.grid_half_extent, c.grid_window)
        self.history = DetectionHistory(c.history_length)

    def step(self, radar: list[RadarFrame], vehicle: VehicleState, frame_id: int) -> EnhancedFrame:
        """Process one synchronised set of radar frames.

        ``vehicle.pose`` aligns the grid and history; ``vehicle.v`` and
        ``vehicle.yaw_rate`` drive the static/dynamic split.
        """
        return self._back(self._middle(self._front(radar, vehicle, frame_id)))

    # The three stage methods each own disjoint state (grid / none / history),
    # which is what lets run_pipeline overlap them across frames.
    def _front(self, radar, vehicle, frame_id) -> dict:
        c = self.config
        t0 = time.perf_counter()
        fused = preprocess_frame(radar, vehicle, self.extrinsics, c.min_range, c.dynamic_threshold)
        self.grid.update(fused.static_detections.points, vehicle.pose)
        nodes = self.grid.extract_nodes()
        return {"frame_id": frame_id, "pose": vehicle.pose, "fused": fused, "nodes": nodes,
                "latency": {"preprocess": time.perf_counter() - t0}}

    def _middle(self, job: dict) -> dict:
        c = self.config
        t1 = time.perf_counter()
        graph = build_graph(job["nodes"], c.graph_radius)
        t2 = time.perf_counter()
        if self.params is None:
            probs = np.ones(len(job["nodes"]))
        else:
            probs = model_forward(self.params, graph)
        job["probs"], job["valid"] = probs, probs >= c.decision_threshold
        t3 = time.perf_counter()
        job["latency"].update(graph=t2 - t1, forward=t3 - t2)
        return job

    def _back(self, job: dict) -> EnhancedFrame:
        t3 = time.perf_counter()
        nodes, pose = job["nodes"], job["pose"]
        self.history.push(nodes[job["valid"], :2], pose, job["frame_id"])
        cloud = self.history.cloud(pose)
        job["latency"]["history"] = time.perf_counter() - t3
        latency = {k: job["latency"][k] for k in STAGES}
        return EnhancedFrame(job["frame_id"], job["fused"].timestamp, nodes, job["probs"], job["valid"],
                             cloud, job["fused"], latency)


def alignment_state(record, pose_source: str = "odometry") -> VehicleState:
    """Vehicle state handed to the pipeline: measured motion, chosen pose."""
    odo = record.odometry
    pose = odo.pose if pose_source == "odometry" else record.gt.pose
    return VehicleState(pose, odo.v, odo.yaw_rate)


def run_pipeline(records, params: ModelParams | None, config: PipelineConfig | None = None,
                 extrinsics: SensorExtrinsics | None = None, pose_source: str = "odometry",
                 pipelined: bool = False, queue_size: int = 4):
    """Yield (record, EnhancedFrame) in input order.

    ``pipelined=True`` runs the three stages in their own threads joined by
    bounded queues; outputs are identical to the serial chain.
    """
    pipe = EnhancementPipeline(params, config, extrinsics)
    if not pipelined:
        for rec in records:
            yield rec, pipe.step(rec.radar, alignment_state(rec, pose_source), rec.frame_id)
        return
    yield from _run_threaded(pipe, records, pose_source, queue_size)


_DONE = object()


def _run_threaded(pipe: EnhancementPipeline, records, pose_source: str, queue_size: int):
    q1: queue.Queue = queue.Queue(queue_size)
    q2: queue.Queue = queue.Queue(queue_size)
    stop = threading.Event()

    def put(q, item):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def front():
        try:
            for rec in records:
                job = pipe._front(rec.radar, alignment_state(rec, pose_source), rec.frame_id)
                job["record"] = rec
                if not put(q1, job):
                    return
        except BaseException as exc:  # surfaced in the consumer
            put(q1, exc)
            return
        put(q1, _DONE)

    def middle():
        while True:
            job = q1.get()
            if job is _DONE or isinstance(job, BaseException):
                put(q2, job)
                return
            try:
                job = pipe._middle(job)
            except BaseException as exc:
                put(q2, exc)
                return
            if not put(q2, job):
                return

    workers = [threading.Thread(target=front, daemon=True), threading.Thread(target=middle, daemon=True)]
    for w in workers:
        w.start()
    try:
        while True:
            job = q2.get()
            if job is _DONE:
                break
            if isinstance(job, BaseException):
                raise job
            rec = job.pop("record")
            yield rec, pipe._back(job)
    finally:
        stop.set()
        for q in (q1, q2):
            while True:
                try:
                    q.get_nowait()
                except queue.Empty:
                    break
        for w in workers:
            w.join(timeout=1.0)


def reference_clouds(records, window: int):
    """Lidar scans of the last ``window`` frames, each expressed in the current
    vehicle frame through the true poses. Yields (record, (M, 2) cloud)."""
    buf = DetectionHistory(window)
    for rec in records:
        buf.push(rec.lidar, rec.gt.pose, rec.frame_id)
        yield rec, buf.cloud(rec.gt.pose)


def build_samples(records, config: PipelineConfig | None = None, extrinsics: SensorExtrinsics | None = None,
                  env_id: str = "", pose_source: str = "odometry", skip: int = 0) -> list[LabeledSample]:
    """One labelled graph per frame.

    Grid nodes are scored against the lidar accumulated over the same
    ``label_window`` frames the grid integrates. The first ``skip`` frames
    (grid still filling) are dropped.
    """
    config = config or PipelineConfig()
    records = list(records)
    samples = []
    refs = reference_clouds(records, config.label_window)
    for (rec, out), (_, ref) in zip(run_pipeline(records, None, config, extrinsics, pose_source), refs):
        if rec.frame_id < skip or len(out.nodes) == 0:
            continue
        labels = label_nodes(out.nodes, ref, config.label_tolerance)
        samples.append(LabeledSample(build_graph(out.nodes, config.graph_radius), labels, rec.frame_id, env_id))
    return samples
