"""Forward/backward passes over a :class:`NetworkGraph`.

Parameters are held in a plain mapping ``module id -> {"weight": ..., "bias": ...}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..numerics import RngStream
from . import layers
from .graph import INPUT, NetworkGraph

Params = dict[str, dict[str, np.ndarray]]


@dataclass
class Batch:
    """Inputs ``[n, ...]`` with integer labels in ``[0, n_classes)``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] < 1 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("batch needs n >= 1 inputs with one label each")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def init_params(graph: NetworkGraph, rng: RngStream) -> Params:
    """Kaiming-normal weights (std = sqrt(2 / fan_in)) and zero biases.

    Module ``i`` draws from ``rng.child(i)``, so each module's initial value
    depends only on the seed and its position among the modules.
    """
    params: Params = {}
    for i, node in enumerate(graph.modules):
        shapes = node.param_shapes()
        w_shape = shapes["weight"]
        fan_in = int(np.prod(w_shape[1:]))
        gen = rng.child(i).generator()
        params[node.id] = {
            "weight": gen.standard_normal(w_shape) * np.sqrt(2.0 / fan_in),
            "bias": np.zeros(shapes["bias"]),
        }
    return params


def copy_params(params: Mapping[str, Mapping[str, np.ndarray]]) -> Params:
    return {m: {k: np.array(v, copy=True) for k, v in p.items()} for m, p in params.items()}


def _check(graph: NetworkGraph, params, x: np.ndarray) -> None:
    if tuple(x.shape[1:]) != graph.input_shape:
        raise ValueError(f"input shape {tuple(x.shape[1:])} does not match graph input {graph.input_shape}")
    for node in graph.modules:
        p = params.get(node.id)
        if p is None:
            raise ValueError(f"missing parameters for module {node.id!r}")
        for name, shape in node.param_shapes().items():
            if name not in p or tuple(p[name].shape) != shape:
                raise ValueError(f"module {node.id!r} param {name!r} should have shape {shape}")


def _eval_node(node, vals, params, train_cache=None):
    a = node.attrs
    x = vals[node.inputs[0]]
    if node.kind == "dense":
        p = params[node.id]
        out, cache = layers.dense_forward(x, p["weight"], p["bias"])
    elif node.kind == "conv2d":
        p = params[node.id]
        out, cache = layers.conv2d_forward(x, p["weight"], p["bias"], a.get("stride", 1), a.get("padding", 0))
    elif node.kind == "relu":
        out, cache = layers.relu_forward(x)
    elif node.kind == "maxpool":
        out, cache = layers.maxpool_forward(x, a.get("size", 2))
    elif node.kind == "flatten":
        out, cache = x.reshape(x.shape[0], -1), x.shape
    else:  # residual_add
        out = vals[node.inputs[0]]
        for src in node.inputs[1:]:
            out = out + vals[src]
        cache = None
    if train_cache is not None:
        train_cache[node.id] = cache
    return out


def forward_trace(graph: NetworkGraph, params, x: np.ndarray) -> dict[str, np.ndarray]:
    """Values of every node (and the input) for one forward pass."""
    x = np.asarray(x, dtype=np.float64)
    _check(graph, params, x)
    vals = {INPUT: x}
    for node in graph.nodes:
        vals[node.id] = _eval_node(node, vals, params)
    return vals


def forward(graph: NetworkGraph, params, x: np.ndarray, capture: Iterable[str] | None = None):
    """Logits ``[n, C]``; with ``capture``, also the named node outputs.

    Captured dense/conv outputs are taken before any nonlinearity, since the
    nonlinearity is a separate node.
    """
    vals = forward_trace(graph, params, x)
    logits = vals[graph.output]
    if capture is None:
        return logits
    missing = [c for c in capture if c not in vals or c == INPUT]
    if missing:
        raise ValueError(f"cannot capture unknown nodes {missing}")
    return logits, {c: vals[c] for c in capture}


def forward_from(graph: NetworkGraph, params, trace: Mapping[str, np.ndarray], changed: Iterable[str]) -> np.ndarray:
    """Re-run only the nodes downstream of ``changed``, reusing ``trace`` elsewhere.

    ``trace`` must come from :func:`forward_trace` with parameters that agree
    with ``params`` on every module outside ``changed``. The result is
    bitwise equal to a full forward pass.
    """
    dirty = graph.descendants(changed)
    vals = dict(trace)
    for node in graph.nodes:
        if node.id in dirty:
            vals[node.id] = _eval_node(node, vals, params)
    return vals[graph.output]


def loss_and_grad(graph: NetworkGraph, params, batch: Batch) -> tuple[float, Params]:
    """Mean cross-entropy and reverse-mode gradients for every parameter tensor."""
    x = batch.inputs
    _check(graph, params, x)
    vals = {INPUT: x}
    caches: dict = {}
    for node in graph.nodes:
        vals[node.id] = _eval_node(node, vals, params, caches)
    loss, dlogits = layers.softmax_cross_entropy(vals[graph.output], batch.labels)

    grads: Params = {}
    upstream = {graph.output: dlogits}
    for node in reversed(graph.nodes):
        dout = upstream.pop(node.id, None)
        if dout is None:
            continue
        cache = caches[node.id]
        if node.kind == "dense":
            dx, dw, db = layers.dense_backward(dout, cache, params[node.id]["weight"])
            grads[node.id] = {"weight": dw, "bias": db}
            din = [dx]
        elif node.kind == "conv2d":
            dx, dw, db = layers.conv2d_backward(dout, cache, params[node.id]["weight"])
            grads[node.id] = {"weight": dw, "bias": db}
            din = [dx]
        elif node.kind == "relu":
            din = [layers.relu_backward(dout, cache)]
        elif node.kind == "maxpool":
            din = [layers.maxpool_backward(dout, cache)]
        elif node.kind == "flatten":
            din = [dout.reshape(cache)]
        else:
            din = [dout] * len(node.inputs)
        for src, g in zip(node.inputs, din):
            if src == INPUT:
                continue
            upstream[src] = upstream[src] + g if src in upstream else g
    for node in graph.modules:
        if node.id not in grads:  # module does not reach the output
            grads[node.id] = {k: np.zeros_like(v) for k, v in params[node.id].items()}
    return loss, grads


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    return layers.softmax_cross_entropy(np.asarray(logits, dtype=np.float64), np.asarray(labels))[0]


def _margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n = logits.shape[0]
    true = logits[np.arange(n), labels]
    others = logits.copy()
    others[np.arange(n), labels] = -np.inf
    return true - others.max(axis=1)


def error_count(logits: np.ndarray, labels: np.ndarray) -> int:
    """Number of samples whose true-class logit does not strictly win."""
    return int(np.count_nonzero(_margins(logits, labels) <= 0.0))


def zero_one_error(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction with ``f(x)[y] <= max_{j != y} f(x)[j]``; ties count as errors."""
    m = _margins(logits, labels)
    return float(np.count_nonzero(m <= 0.0) / m.shape[0])


def margin_error(logits: np.ndarray, labels: np.ndarray, gamma: float) -> float:
    """Fraction with ``f(x)[y] <= gamma + max_{j != y} f(x)[j]``."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    m = _margins(logits, labels)
    return float(np.count_nonzero(m <= gamma) / m.shape[0])


def margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample ``f(x)[y] - max_{j != y} f(x)[j]``."""
    return _margins(logits, labels)
