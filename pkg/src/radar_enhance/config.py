"""Pipeline tunables with their defaults, validated JSON load/save."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .core import ConfigurationError
from .localization import EkfConfig
from .training import TrainConfig


@dataclass
class PipelineConfig:
    min_range: float = 1.5  # m
    dynamic_threshold: float = 0.05  # m/s
    grid_resolution: float = 0.20  # m
    grid_half_extent: float = 5.0  # m
    grid_window: int = 20  # frames
    graph_radius: float = 10.0  # m
    label_tolerance: float = 0.20  # m
    history_length: int = 10  # frames
    label_window: int = 20  # lidar frames accumulated as labelling ground truth
    reference_window: int = 1  # lidar frames accumulated as the Chamfer reference
    decision_threshold: float = 0.5
    # EKF / ICP
    q_xy: float = 0.02
    q_psi: float = 0.01
    r_xy: float = 0.05
    r_psi: float = 0.02
    p_valid: float = 0.95
    icp_max_distance: float = 1.0
    icp_max_iterations: int = 50
    icp_min_fitness: float = 0.2
    # training
    learning_rate: float = 1e-3
    epochs: int = 15
    optimizer: str = "adam"
    augment: bool = True
    pos_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("dynamic_threshold", "grid_resolution", "grid_half_extent", "graph_radius",
                    "label_tolerance", "q_xy", "q_psi", "r_xy", "r_psi", "icp_max_distance",
                    "learning_rate", "pos_weight")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ConfigurationError(f"{name} must be a positive number, got {v!r}")
        if self.min_range < 0:
            raise ConfigurationError("min_range must be non-negative")
        for name in ("grid_window", "history_length", "label_window", "reference_window",
                     "icp_max_iterations"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigurationError("epochs must be a non-negative integer")
        for name in ("decision_threshold", "p_valid"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.icp_min_fitness <= 1.0:
            raise ConfigurationError("icp_min_fitness must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for k, v in d.items():
            default = known[k].default
            if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if type(v) is not type(default):
                raise ConfigurationError(f"{k} must be {type(default).__name__}, got {v!r}")
            kwargs[k] = v
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def ekf(self) -> EkfConfig:
        return EkfConfig(q_xy=self.q_xy, q_psi=self.q_psi, r_xy=self.r_xy, r_psi=self.r_psi,
                         p_valid=self.p_valid, icp_max_distance=self.icp_max_distance,
                         icp_max_iterations=self.icp_max_iterations, min_fitness=self.icp_min_fitness)

    def train(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs if epochs is None else epochs,
                           optimizer=self.optimizer, augment_rotation=self.augment,
                           augment_p_noise=self.augment, augment_xy_noise=self.augment,
                           pos_weight=self.pos_weight, threshold=self.decision_threshold, seed=self.seed)
