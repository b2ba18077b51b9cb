"""Radar point-cloud enhancement: occupancy-grid graphs classified by a small
GraphSAGE network, EKF/ICP localisation, and a 2D radar/lidar simulator."""

from .config import PipelineConfig
from .core import ConfigurationError, Pose2D, RadarDetection, VehicleState, default_extrinsics
from .gnn import DEFAULT_DIMS, ModelParams, build_graph, count_params, model_forward
from .pipeline import EnhancementPipeline, run_pipeline

__all__ = [
    "ConfigurationError", "DEFAULT_DIMS", "EnhancementPipeline", "ModelParams", "PipelineConfig", "Pose2D",
    "RadarDetection", "VehicleState", "build_graph", "count_params", "default_extrinsics", "model_forward",
    "run_pipeline",
]
