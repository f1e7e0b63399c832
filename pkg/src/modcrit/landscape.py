"""Parameter-space probes: rewinding, convex-path sweeps, perturbed losses, valley samples.

All probes start from the trained parameters (the final snapshot) and replace
one or more modules. Only the graph nodes downstream of the replaced modules
are recomputed, which gives bitwise the same result as a full forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datasets import LabeledDataset
from .nngraph import Batch, NetworkGraph, SnapshotStore, cross_entropy, error_count, forward_from, forward_trace
from .numerics import RngStream, flatten_params

ALL = "ALL"
METRICS = ("train_error", "test_error", "train_loss")


def convex_combine(theta0: np.ndarray, thetaF: np.ndarray, alpha: float) -> np.ndarray:
    """``(1 - alpha) * theta0 + alpha * thetaF`` for ``alpha`` in [0, 1]."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    thetaF = np.asarray(thetaF, dtype=np.float64)
    if theta0.shape != thetaF.shape:
        raise ValueError(f"shape mismatch {theta0.shape} vs {thetaF.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return (1.0 - alpha) * theta0 + alpha * thetaF


def interpolate_module(store: SnapshotStore, module_id: str, alpha: float) -> dict[str, np.ndarray]:
    p0 = store.module(module_id, 0)
    pF = store.module(module_id, store.final_epoch)
    return {k: convex_combine(p0[k], pF[k], alpha) for k in pF}


def module_delta(store: SnapshotStore, module_id: str) -> np.ndarray:
    """Flattened ``theta^F - theta^0`` over all tensors of one module."""
    p0 = store.module(module_id, 0)
    pF = store.module(module_id, store.final_epoch)
    return flatten_params([pF[k] - p0[k] for k in sorted(pF)])


def _require_module(graph: NetworkGraph, module_id: str) -> None:
    if module_id not in graph.module_ids:
        raise ValueError(f"{module_id!r} is not a parameterized module; valid ids: {graph.module_ids}")


class Evaluator:
    """Metric evaluation of the trained network with some modules swapped out.

    Baseline activations at the final parameters are computed once per split.
    """

    def __init__(self, graph: NetworkGraph, store: SnapshotStore, data: LabeledDataset):
        self.graph = graph
        self.store = store
        self.data = data
        self.base = store.final
        self._traces: dict[str, dict] = {}

    def split(self, name: str) -> Batch:
        return self.data.train if name == "train" else self.data.test

    def trace(self, split: str) -> dict:
        if split not in self._traces:
            self._traces[split] = forward_trace(self.graph, self.base, self.split(split).inputs)
        return self._traces[split]

    def logits(self, overrides: Mapping[str, Mapping[str, np.ndarray]], split: str = "train") -> np.ndarray:
        params = dict(self.base)
        params.update(overrides)
        return forward_from(self.graph, params, self.trace(split), overrides.keys())

    def metric(self, overrides: Mapping[str, Mapping[str, np.ndarray]], metric: str) -> float:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
        split = "test" if metric == "test_error" else "train"
        logits = self.logits(overrides, split)
        labels = self.split(split).labels
        if metric == "train_loss":
            return cross_entropy(logits, labels)
        return error_count(logits, labels) / labels.shape[0]

    def baseline(self, metric: str) -> float:
        return self.metric({}, metric)


# --------------------------------------------------------------------------- rewinding


@dataclass
class RewindGrid:
    module_ids: list[str]
    epochs: list[int]
    metric: str
    values: np.ndarray  # [module, epoch]
    baseline: float

    def rows(self) -> Iterable[dict]:
        for i, m in enumerate(self.module_ids):
            for j, e in enumerate(self.epochs):
                yield {"module": m, "epoch": e, "metric": self.metric, "value": self.values[i, j], "baseline": self.baseline}


def rewind_eval(
    graph: NetworkGraph,
    store: SnapshotStore,
    module_id: str,
    epoch: int,
    data: LabeledDataset,
    metric: str = "train_error",
    evaluator: Evaluator | None = None,
) -> float:
    """Metric with ``module_id`` taken from ``epoch`` and every other module from the final snapshot."""
    _require_module(graph, module_id)
    if epoch not in store:
        raise ValueError(f"no snapshot for epoch {epoch}; available: {store.epochs}")
    ev = evaluator or Evaluator(graph, store, data)
    return ev.metric({module_id: store.module(module_id, epoch)}, metric)


def rewind_grid(graph: NetworkGraph, store: SnapshotStore, data: LabeledDataset, metric: str = "train_error") -> RewindGrid:
    if len(store.epochs) < 2:
        raise ValueError("rewind grid needs at least two snapshot epochs")
    ev = Evaluator(graph, store, data)
    ids = graph.module_ids
    values = np.array([[rewind_eval(graph, store, m, e, data, metric, ev) for e in store.epochs] for m in ids])
    return RewindGrid(ids, store.epochs, metric, values, ev.baseline(metric))


# --------------------------------------------------------------------------- convex path


@dataclass
class PathCurve:
    selector: str
    alphas: list[float]
    metrics: dict[str, list[float]]

    def rows(self) -> Iterable[dict]:
        for i, a in enumerate(self.alphas):
            yield {"selector": self.selector, "alpha": a, **{k: v[i] for k, v in self.metrics.items()}}


def _check_alphas(alphas: Sequence[float]) -> list[float]:
    alphas = [float(a) for a in alphas]
    if any(not 0.0 <= a <= 1.0 for a in alphas) or alphas != sorted(alphas):
        raise ValueError("alphas must be sorted and lie in [0, 1]")
    if 0.0 not in alphas or 1.0 not in alphas:
        raise ValueError("alphas must contain 0 and 1")
    return alphas


def path_sweep(
    graph: NetworkGraph,
    store: SnapshotStore,
    selector: str,
    alphas: Sequence[float],
    data: LabeledDataset,
    metrics: Sequence[str] = METRICS,
) -> PathCurve:
    """Metrics along ``theta^alpha`` for one module, or for every module at once with ``selector=ALL``."""
    alphas = _check_alphas(alphas)
    if selector == ALL:
        targets = graph.module_ids
    else:
        _require_module(graph, selector)
        targets = [selector]
    ev = Evaluator(graph, store, data)
    out: dict[str, list[float]] = {m: [] for m in metrics}
    for a in alphas:
        overrides = {m: interpolate_module(store, m, a) for m in targets}
        for name in metrics:
            out[name].append(ev.metric(overrides, name))
    return PathCurve(selector, alphas, out)


# --------------------------------------------------------------------------- perturbed loss


@dataclass
class PerturbedLossEstimate:
    """Monte-Carlo estimate of the expected train zero-one loss under Gaussian noise."""

    mean: float
    stderr: float
    n_samples: int
    sigma: dict[str, float]
    alpha: dict[str, float]
    error_counts: list[int] = field(default_factory=list, repr=False)


def summarize_counts(counts: Sequence[int], n_eval: int) -> tuple[float, float]:
    """Mean and standard error of per-draw error fractions, computed from integer counts.

    Working on integers keeps the statistics exact: identical draws give a
    standard error of exactly zero and the mean equals the single-draw value.
    """
    n = len(counts)
    s = sum(int(c) for c in counts)
    mean = s / (n * n_eval)
    if n < 2:
        return mean, 0.0
    num = n * sum(int(c) * int(c) for c in counts) - s * s  # n(n-1) * var * n_eval^2
    stderr = float(np.sqrt(num / (n * n * (n - 1)))) / n_eval
    return mean, stderr


class PerturbationSampler:
    """Draws error counts of the network with active modules at ``theta^alpha + u``.

    Inactive modules stay at their final values. Each draw uses fresh noise
    for every active module, taken sequentially from one generator, so the
    k-th draw of a given stream is always the same.
    """

    def __init__(
        self,
        evaluator: Evaluator,
        alpha_map: Mapping[str, float],
        sigma_map: Mapping[str, float],
        active: Sequence[str],
        rng: RngStream,
    ):
        graph = evaluator.graph
        order = {m: i for i, m in enumerate(graph.module_ids)}
        for m in active:
            _require_module(graph, m)
            if sigma_map[m] < 0:
                raise ValueError(f"sigma for {m!r} must be nonnegative")
        self.ev = evaluator
        self.active = sorted(active, key=order.__getitem__)
        self.sigma = {m: float(sigma_map[m]) for m in self.active}
        self.alpha = {m: float(alpha_map[m]) for m in self.active}
        self.centers = {m: interpolate_module(evaluator.store, m, self.alpha[m]) for m in self.active}
        self._gen = rng.generator()
        self.trace = evaluator.trace("train")
        self.labels = evaluator.data.train.labels

    @property
    def n_eval(self) -> int:
        return self.labels.shape[0]

    def draw(self) -> int:
        overrides = {}
        for m in self.active:
            s = self.sigma[m]
            center = self.centers[m]
            if s == 0.0:
                overrides[m] = center
            else:
                overrides[m] = {k: v + s * self._gen.standard_normal(v.shape) for k, v in center.items()}
        params = dict(self.ev.base)
        params.update(overrides)
        logits = forward_from(self.ev.graph, params, self.trace, self.active)
        return error_count(logits, self.labels)


def perturbed_loss(
    graph: NetworkGraph,
    store: SnapshotStore,
    alpha_map: Mapping[str, float],
    sigma_map: Mapping[str, float],
    active: Sequence[str],
    n_samples: int,
    data: LabeledDataset,
    rng: RngStream,
) -> PerturbedLossEstimate:
    """Mean and standard error of ``L_S`` with each active module at ``theta^alpha + N(0, sigma^2 I)``."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    sampler = PerturbationSampler(Evaluator(graph, store, data), alpha_map, sigma_map, active, rng)
    counts = [sampler.draw() for _ in range(n_samples)]
    mean, stderr = summarize_counts(counts, sampler.n_eval)
    return PerturbedLossEstimate(mean, stderr, n_samples, sampler.sigma, sampler.alpha, counts)


# --------------------------------------------------------------------------- valley


@dataclass
class ValleyPoint:
    alpha: float
    draw: int  # -1 for the noiseless point
    x: float
    y: float
    loss: float


@dataclass
class ValleySample:
    module_id: str
    sigma: float
    points: list[ValleyPoint]

    def rows(self) -> Iterable[dict]:
        for p in self.points:
            yield {"module": self.module_id, "sigma": self.sigma, **p.__dict__}


def valley_sample(
    graph: NetworkGraph,
    store: SnapshotStore,
    module_id: str,
    alphas: Sequence[float],
    n_noise_per_alpha: int,
    sigma: float,
    data: LabeledDataset,
    rng: RngStream,
) -> ValleySample:
    """2-D picture of the loss valley between ``theta^0`` and ``theta^F`` of one module.

    ``x`` is the coordinate along ``theta^F - theta^0`` measured from
    ``theta^0``; ``y`` is the norm of the noise component orthogonal to that
    direction, signed by the inner product of the noise with ``theta^0``.
    """
    _require_module(graph, module_id)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    ev = Evaluator(graph, store, data)
    names = sorted(store.module(module_id, 0))
    theta0 = flatten_params([store.module(module_id, 0)[k] for k in names])
    delta = module_delta(store, module_id)
    dnorm = float(np.linalg.norm(delta))
    direction = delta / dnorm if dnorm > 0 else np.zeros_like(delta)
    points = []
    for ai, a in enumerate(alphas):
        center = interpolate_module(store, module_id, a)
        loss = ev.metric({module_id: center}, "train_error")
        points.append(ValleyPoint(float(a), -1, a * dnorm, 0.0, loss))
        gen = rng.child(ai).generator()
        for k in range(n_noise_per_alpha):
            noise = {name: sigma * gen.standard_normal(center[name].shape) for name in names}
            u = flatten_params([noise[name] for name in names])
            along = float(u @ direction)
            ortho = float(np.linalg.norm(u - along * direction))
            sign = -1.0 if float(u @ theta0) < 0 else 1.0
            noisy = {name: center[name] + noise[name] for name in names}
            points.append(ValleyPoint(float(a), k, a * dnorm + along, sign * ortho, ev.metric({module_id: noisy}, "train_error")))
    return ValleySample(module_id, float(sigma), points)
