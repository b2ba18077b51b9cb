"""Radius graph construction and the three-layer GraphSAGE (mean aggregator)
node classifier, with a JSON checkpoint format.

Each layer computes, per node ``i``::

    out_i = act(W_self @ h_i + bias + W_neigh @ mean_{j in N(i)} h_j)

with ReLU after layers 1 and 2 and a sigmoid on the scalar output of layer 3.
Isolated nodes get a zero neighbour aggregate. Hidden widths 16/16 give
16*9 + 16*33 + 1*33 = 705 scalars.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

DEFAULT_DIMS = ((4, 16), (16, 16), (16, 1))
CHECKPOINT_FORMAT = "radar-enhance-gnn"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class RadarGraph:
    nodes: np.ndarray  # (N, 4) dx, dy, dz, p_det
    edges: np.ndarray  # (E, 2) undirected pairs, i < j
    distances: np.ndarray  # (E,)
    radius: float = 10.0
    _mean_op: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def mean_operator(self) -> np.ndarray:
        """Dense (N, N) row-normalised adjacency; rows of isolated nodes are zero."""
        if self._mean_op is None:
            n = self.n_nodes
            a = np.zeros((n, n))
            if len(self.edges):
                a[self.edges[:, 0], self.edges[:, 1]] = 1.0
                a[self.edges[:, 1], self.edges[:, 0]] = 1.0
            deg = a.sum(axis=1)
            self._mean_op = a / np.maximum(deg, 1.0)[:, None]
        return self._mean_op

    def neighbors(self, i: int) -> np.ndarray:
        e = self.edges
        return np.sort(np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]]))

    def permuted(self, perm: np.ndarray) -> "RadarGraph":
        """Graph with node ``k`` of the result equal to node ``perm[k]`` of this one."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        e = inv[self.edges] if len(self.edges) else self.edges.copy()
        e = np.sort(e, axis=1)
        return RadarGraph(self.nodes[perm], e, self.distances.copy(), self.radius)


def build_graph(nodes: np.ndarray, radius: float = 10.0) -> RadarGraph:
    """Connect every node pair whose Euclidean distance is at most ``radius``."""
    if radius <= 0:
        raise ValueError("graph radius must be positive")
    x = np.asarray(nodes, dtype=float).reshape(-1, 4)
    n = len(x)
    if n < 2:
        return RadarGraph(x, np.zeros((0, 2), dtype=np.int64), np.zeros(0), radius)
    xyz = x[:, :3]
    sq = np.sum(xyz * xyz, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * xyz @ xyz.T
    within = d2 <= radius * radius + 1e-9 * max(radius * radius, 1.0)
    within &= np.triu(np.ones((n, n), dtype=bool), k=1)
    i, j = np.nonzero(within)
    dist = np.linalg.norm(xyz[i] - xyz[j], axis=1)
    # the Gram form is only a prefilter; the exact distance decides the boundary
    keep = dist <= radius
    i, j, dist = i[keep], j[keep], dist[keep]
    edges = np.column_stack([i, j]).astype(np.int64)
    return RadarGraph(x, edges, dist, radius)


@dataclass
class SageLayer:
    w_self: np.ndarray  # (out, in)
    w_neigh: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def dims(self) -> tuple[int, int]:
        return self.w_self.shape[1], self.w_self.shape[0]

    def arrays(self):
        return self.w_self, self.w_neigh, self.bias


@dataclass
class ModelParams:
    layers: list[SageLayer]

    @classmethod
    def zeros(cls, dims=DEFAULT_DIMS) -> "ModelParams":
        return cls([SageLayer(np.zeros((o, i)), np.zeros((o, i)), np.zeros(o)) for i, o in dims])

    @classmethod
    def init(cls, rng: np.random.Generator, dims=DEFAULT_DIMS) -> "ModelParams":
        """Uniform fan-in/fan-out initialisation, zero biases."""
        layers = []
        for i, o in dims:
            lim = math.sqrt(6.0 / (i + o))
            layers.append(SageLayer(rng.uniform(-lim, lim, (o, i)), rng.uniform(-lim, lim, (o, i)), np.zeros(o)))
        return cls(layers)

    @property
    def dims(self) -> list[tuple[int, int]]:
        return [layer.dims for layer in self.layers]

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for layer in self.layers for a in layer.arrays()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_flat(cls, flat: np.ndarray, dims=DEFAULT_DIMS) -> "ModelParams":
        flat = np.asarray(flat, dtype=float)
        if flat.size != dims_param_count(dims):
            raise CheckpointError(f"expected {dims_param_count(dims)} scalars, got {flat.size}")
        layers, k = [], 0
        for i, o in dims:
            ws = flat[k:k + o * i].reshape(o, i); k += o * i
            wn = flat[k:k + o * i].reshape(o, i); k += o * i
            b = flat[k:k + o].copy(); k += o
            layers.append(SageLayer(ws.copy(), wn.copy(), b))
        return cls(layers)

    def copy(self) -> "ModelParams":
        return ModelParams([SageLayer(*(a.copy() for a in layer.arrays())) for layer in self.layers])


def dims_param_count(dims) -> int:
    return sum(o * (2 * i + 1) for i, o in dims)


def count_params(params: ModelParams) -> int:
    return dims_param_count(params.dims)


def relu(x):
    return np.maximum(x, 0.0)


# |logit| <= 36 keeps float64 sigmoid strictly inside (0, 1); the loss clamp
# already zeroes gradients far inside this range
LOGIT_LIMIT = 36.0


def sigmoid(x):
    return expit(np.clip(x, -LOGIT_LIMIT, LOGIT_LIMIT))


def sage_layer_forward(layer: SageLayer, h: np.ndarray, graph: RadarGraph, apply_relu: bool) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[1] != layer.w_self.shape[1] or h.shape[0] != graph.n_nodes:
        raise ValueError(f"feature shape {h.shape} does not match layer in-dim {layer.w_self.shape[1]} "
                         f"and {graph.n_nodes} nodes")
    agg = graph.mean_operator() @ h
    z = h @ layer.w_self.T + agg @ layer.w_neigh.T + layer.bias
    return relu(z) if apply_relu else z


def model_logits(params: ModelParams, graph: RadarGraph) -> np.ndarray:
    h = graph.nodes
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        h = sage_layer_forward(layer, h, graph, apply_relu=k < last)
    return h[:, 0]


def model_forward(params: ModelParams, graph: RadarGraph) -> np.ndarray:
    """Per-node probability that the detection is valid."""
    if graph.n_nodes == 0:
        return np.zeros(0)
    return sigmoid(model_logits(params, graph))


def classify(params: ModelParams, graph: RadarGraph, threshold: float = 0.5) -> np.ndarray:
    return model_forward(params, graph) >= threshold


def params_to_dict(params: ModelParams, meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": [list(d) for d in params.dims],
        "layers": [
            {"w_self": layer.w_self.ravel().tolist(), "w_neigh": layer.w_neigh.ravel().tolist(),
             "bias": layer.bias.tolist()}
            for layer in params.layers
        ],
        "meta": meta or {},
    }


def params_from_dict(doc: dict) -> ModelParams:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a radar-enhance GNN checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        dims = [tuple(int(v) for v in d) for d in doc["dims"]]
        layers_doc = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if len(layers_doc) != len(dims):
        raise CheckpointError("layer count does not match dims")
    layers = []
    for (i, o), ld in zip(dims, layers_doc):
        try:
            ws = np.asarray(ld["w_self"], dtype=float)
            wn = np.asarray(ld["w_neigh"], dtype=float)
            b = np.asarray(ld["bias"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed layer: {exc}") from None
        if ws.size != o * i or wn.size != o * i or b.size != o:
            raise CheckpointError(f"layer ({i}, {o}) expects {o * (2 * i + 1)} scalars, "
                                  f"got {ws.size + wn.size + b.size}")
        layers.append(SageLayer(ws.reshape(o, i), wn.reshape(o, i), b.reshape(o)))
    params = ModelParams(layers)
    if not np.all(np.isfinite(params.flat())):
        raise CheckpointError("checkpoint contains non-finite values")
    return params


def save_params(params: ModelParams, path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, meta), sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return params_from_dict(doc), doc.get("meta", {})


def load_params(path) -> ModelParams:
    return load_checkpoint(path)[0]
