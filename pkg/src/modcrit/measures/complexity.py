"""Norm- and count-based complexity measures of a trained network."""

from __future__ import annotations

import math

import numpy as np

from ..nngraph import NetworkGraph, SnapshotStore
from ..numerics import RngStream, conv_singular_values, flatten_params, frobenius_norm, spectral_norm_dense

POWER_ITERS = 1000
POWER_TOL = 1e-10


def module_fro(params: dict[str, np.ndarray]) -> float:
    """Frobenius norm over all tensors of a module (weight and bias together)."""
    return frobenius_norm(flatten_params([params[k] for k in sorted(params)]))


def operator_norm(graph: NetworkGraph, module_id: str, weight: np.ndarray, seed: int = 0) -> float:
    """Spectral norm of a module's linear map.

    Convolutions use the largest singular value of the circular operator at the
    module's input resolution; dense weights use power iteration started from
    ``RngStream(seed, module index)``.
    """
    node = graph.node(module_id)
    if node.kind == "conv2d":
        size = graph.input_shape_of(module_id)[1]
        return float(conv_singular_values(weight, size)[0])
    rng = RngStream(seed, graph.module_index(module_id))
    return spectral_norm_dense(weight, POWER_ITERS, POWER_TOL, rng).value


def pfn(graph: NetworkGraph, store: SnapshotStore) -> float:
    """Product of Frobenius norms of the trained modules."""
    return math.prod(module_fro(store.module(m, store.final_epoch)) for m in graph.module_ids)


def psn(graph: NetworkGraph, store: SnapshotStore, seed: int = 0) -> float:
    """Product of spectral norms of the trained weights."""
    return math.prod(operator_norm(graph, m, store.module(m, store.final_epoch)["weight"], seed) for m in graph.module_ids)


def dti(graph: NetworkGraph, store: SnapshotStore) -> float:
    """Sum of squared Frobenius distances from initialization."""
    total = 0.0
    for m in graph.module_ids:
        p0, pF = store.module(m, 0), store.module(m, store.final_epoch)
        total += module_fro({k: pF[k] - p0[k] for k in pF}) ** 2
    return total


def nop(graph: NetworkGraph) -> int:
    return graph.num_params


def sosp(graph: NetworkGraph, store: SnapshotStore, seed: int = 0) -> float:
    """Number of parameters times the sum of spectral distances from initialization."""
    total = 0.0
    for m in graph.module_ids:
        w0 = store.module(m, 0)["weight"]
        wF = store.module(m, store.final_epoch)["weight"]
        total += operator_norm(graph, m, w0 - wF, seed)
    return nop(graph) * total
