"""Linear CKA and the rewind-similarity table."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..datasets import LabeledDataset
from ..nngraph import NetworkGraph, SnapshotStore, forward


class UndefinedSimilarity(ValueError):
    """Raised when an activation matrix has zero variance."""


def linear_cka(acts_x: np.ndarray, acts_y: np.ndarray) -> float:
    x = np.asarray(acts_x, dtype=np.float64)
    y = np.asarray(acts_y, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    y = y.reshape(y.shape[0], -1)
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ValueError("need the same n >= 2 rows in both activation matrices")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    if x.shape[0] < max(x.shape[1], y.shape[1]):
        # Gram form is cheaper when features outnumber samples
        kx, ky = x @ x.T, y @ y.T
        cross = float(np.sum(kx * ky))
        den = np.linalg.norm(kx) * np.linalg.norm(ky)
    else:
        cross = float(np.linalg.norm(x.T @ y) ** 2)
        den = np.linalg.norm(x.T @ x) * np.linalg.norm(y.T @ y)
    if den == 0:
        raise UndefinedSimilarity("CKA undefined for zero-variance activations")
    return float(cross / den)


def cka_rewind_table(
    graph: NetworkGraph,
    store: SnapshotStore,
    module_id: str,
    epoch: int,
    data: LabeledDataset,
    probes: Sequence[str],
) -> dict[str, float]:
    """CKA between the trained network and the one with ``module_id`` rewound to ``epoch``, per probe node."""
    if module_id not in graph.module_ids:
        raise ValueError(f"{module_id!r} is not a parameterized module; valid ids: {graph.module_ids}")
    rewound = dict(store.final)
    rewound[module_id] = store.module(module_id, epoch)
    x = data.train.inputs
    _, base = forward(graph, store.final, x, capture=probes)
    _, other = forward(graph, rewound, x, capture=probes)
    return {p: linear_cka(base[p], other[p]) for p in probes}
