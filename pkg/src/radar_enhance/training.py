"""Node labelling against lidar, training-time augmentations, BCE loss with
analytic gradients for the fixed GraphSAGE network, and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial import cKDTree

from .gnn import ModelParams, RadarGraph, build_graph, relu, sigmoid

BCE_EPS = 1e-7


@dataclass
class LabeledSample:
    graph: RadarGraph
    labels: np.ndarray  # (N,) 1 = valid
    frame_id: int = 0
    env_id: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(self.labels) != self.graph.n_nodes:
            raise ValueError(f"{len(self.labels)} labels for {self.graph.n_nodes} nodes")


def label_nodes(nodes: np.ndarray, lidar_cloud: np.ndarray, tol: float = 0.20) -> np.ndarray:
    """1 where a node lies within ``tol`` of some lidar point, else 0."""
    if tol <= 0:
        raise ValueError("label tolerance must be positive")
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 4)
    lidar = np.asarray(lidar_cloud, dtype=float).reshape(-1, 2)
    if len(nodes) == 0:
        return np.zeros(0)
    if len(lidar) == 0:
        return np.zeros(len(nodes))
    d, _ = cKDTree(lidar).query(nodes[:, :2], k=1)
    return (d <= tol).astype(float)


def augment_sample(sample: LabeledSample, rng: np.random.Generator, *, rotation: bool = True,
                   p_sigma: float = 0.05, xy_sigma: float = 0.16, angle: float | None = None) -> LabeledSample:
    """Random yaw rotation, p_det jitter (clamped to [0, 1]) and planar position jitter.

    Edges are rebuilt from the perturbed coordinates; labels are untouched.
    """
    nodes = sample.graph.nodes.copy()
    n = len(nodes)
    if rotation or angle is not None:
        a = rng.uniform(0.0, 2.0 * math.pi) if angle is None else angle
        c, s = math.cos(a), math.sin(a)
        x, y = nodes[:, 0].copy(), nodes[:, 1].copy()
        nodes[:, 0] = c * x - s * y
        nodes[:, 1] = s * x + c * y
    if p_sigma > 0:
        nodes[:, 3] = np.clip(nodes[:, 3] + rng.normal(0.0, p_sigma, n), 0.0, 1.0)
    if xy_sigma > 0:
        nodes[:, :2] += rng.normal(0.0, xy_sigma, (n, 2))
    graph = build_graph(nodes, sample.graph.radius)
    return LabeledSample(graph, sample.labels.copy(), sample.frame_id, sample.env_id)


def bce_loss(probs, labels, pos_weight: float = 1.0, eps: float = BCE_EPS) -> float:
    p = np.clip(np.asarray(probs, dtype=float), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=float)
    if p.size == 0:
        return 0.0
    return float(np.mean(-(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


@dataclass
class ForwardCache:
    inputs: list  # per layer: input features
    aggregates: list  # per layer: mean-aggregated neighbour features
    preacts: list  # per layer: pre-activation
    probs: np.ndarray


def forward_cached(params: ModelParams, graph: RadarGraph) -> ForwardCache:
    m = graph.mean_operator()
    h = graph.nodes
    inputs, aggs, zs = [], [], []
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        g = m @ h
        z = h @ layer.w_self.T + g @ layer.w_neigh.T + layer.bias
        inputs.append(h)
        aggs.append(g)
        zs.append(z)
        h = relu(z) if k < last else z
    return ForwardCache(inputs, aggs, zs, sigmoid(zs[-1][:, 0]))


def backward(params: ModelParams, sample: LabeledSample, pos_weight: float = 1.0,
             cache: ForwardCache | None = None) -> tuple[float, ModelParams]:
    """Loss and exact gradient of the clamped mean BCE w.r.t. every parameter.

    Where the probability clamp is active its derivative is taken as zero.
    """
    graph = sample.graph
    if cache is None:
        cache = forward_cached(params, graph)
    p, y = cache.probs, sample.labels
    n = len(p)
    grads = ModelParams.zeros(params.dims)
    if n == 0:
        return 0.0, grads
    loss = bce_loss(p, y, pos_weight)
    live = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    dz = np.where(live, pos_weight * y * (p - 1.0) + (1.0 - y) * p, 0.0) / n
    dz = dz[:, None]
    m = graph.mean_operator()
    for k in range(len(params.layers) - 1, -1, -1):
        layer, g = params.layers[k], grads.layers[k]
        g.w_self[...] = dz.T @ cache.inputs[k]
        g.w_neigh[...] = dz.T @ cache.aggregates[k]
        g.bias[...] = dz.sum(axis=0)
        if k == 0:
            break
        dh = dz @ layer.w_self + m.T @ (dz @ layer.w_neigh)
        dz = dh * (cache.preacts[k - 1] > 0)
    return loss, grads


def dataset_gradient(params: ModelParams, samples: list[LabeledSample], pos_weight: float = 1.0):
    """Summed per-sample losses and gradients (deterministic order)."""
    total, acc = 0.0, np.zeros(params.flat().size)
    for s in samples:
        loss, g = backward(params, s, pos_weight)
        total += loss
        acc += g.flat()
    return total, ModelParams.from_flat(acc, params.dims)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment_rotation: bool = True
    augment_p_noise: bool = True
    augment_xy_noise: bool = True
    p_sigma: float = 0.05
    xy_sigma: float = 0.16
    pos_weight: float = 1.0
    threshold: float = 0.5
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"step": self.step,
                "m": None if self.m is None else self.m.tolist(),
                "v": None if self.v is None else self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict | None) -> "OptimizerState":
        if not d:
            return cls()
        return cls(int(d["step"]),
                   None if d.get("m") is None else np.asarray(d["m"], float),
                   None if d.get("v") is None else np.asarray(d["v"], float))


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochMetrics] = field(default_factory=list)
    optimizer: OptimizerState = field(default_factory=OptimizerState)


def evaluate(params: ModelParams, samples: list[LabeledSample], threshold: float = 0.5,
             pos_weight: float = 1.0) -> tuple[float, float]:
    """Mean per-sample loss and node-level accuracy."""
    from .gnn import model_forward

    losses, correct, total = [], 0, 0
    for s in samples:
        p = model_forward(params, s.graph)
        losses.append(bce_loss(p, s.labels, pos_weight))
        correct += int(np.sum((p >= threshold) == (s.labels >= 0.5)))
        total += len(p)
    if not samples:
        return float("nan"), float("nan")
    return float(np.mean(losses)), correct / max(total, 1)


def _augment(sample: LabeledSample, cfg: TrainConfig, rng: np.random.Generator) -> LabeledSample:
    if not (cfg.augment_rotation or cfg.augment_p_noise or cfg.augment_xy_noise):
        return sample
    return augment_sample(sample, rng, rotation=cfg.augment_rotation,
                          p_sigma=cfg.p_sigma if cfg.augment_p_noise else 0.0,
                          xy_sigma=cfg.xy_sigma if cfg.augment_xy_noise else 0.0)


def train(dataset: list[LabeledSample], config: TrainConfig, val: list[LabeledSample] | None = None,
          init: ModelParams | None = None, start_epoch: int = 0,
          optimizer_state: OptimizerState | None = None, log=None) -> TrainResult:
    """One optimiser step per graph. Randomness is keyed on (seed, epoch) so a
    resumed run reproduces an uninterrupted one."""
    if not dataset:
        raise ValueError("training dataset is empty")
    params = init.copy() if init is not None else ModelParams.init(np.random.default_rng([config.seed, 0]))
    state = optimizer_state or OptimizerState()
    theta = params.flat()
    if state.m is None:
        state.m, state.v = np.zeros_like(theta), np.zeros_like(theta)
    dims = params.dims
    history = []
    for epoch in range(start_epoch, start_epoch + config.epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        order = rng.permutation(len(dataset)) if config.shuffle else np.arange(len(dataset))
        losses, correct, total = [], 0, 0
        for idx in order:
            sample = _augment(dataset[idx], config, rng)
            cache = forward_cached(params, sample.graph)
            loss, grads = backward(params, sample, config.pos_weight, cache)
            losses.append(loss)
            correct += int(np.sum((cache.probs >= config.threshold) == (sample.labels >= 0.5)))
            total += len(sample.labels)
            g = grads.flat()
            state.step += 1
            if config.optimizer == "adam":
                state.m = config.beta1 * state.m + (1 - config.beta1) * g
                state.v = config.beta2 * state.v + (1 - config.beta2) * g * g
                mhat = state.m / (1 - config.beta1 ** state.step)
                vhat = state.v / (1 - config.beta2 ** state.step)
                theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
            else:
                theta = theta - config.learning_rate * g
            params = ModelParams.from_flat(theta, dims)
        metrics = EpochMetrics(epoch, float(np.mean(losses)), correct / max(total, 1))
        if val:
            metrics.val_loss, metrics.val_acc = evaluate(params, val, config.threshold, config.pos_weight)
        history.append(metrics)
        if log is not None:
            log(metrics)
    return TrainResult(params, history, state)
