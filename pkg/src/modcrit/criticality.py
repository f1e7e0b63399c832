"""Module criticality, network criticality and the joint variant.

For module ``i`` the criticality is the smallest ``alpha^2 ||theta^F - theta^0||^2 / sigma^2``
over a grid of ``(alpha, sigma)`` such that the expected train zero-one loss,
with only module ``i`` moved to ``theta^alpha`` and perturbed by
``N(0, sigma^2 I)``, stays below ``epsilon``. Feasibility is a statistical
test: ``mean + slack * stderr <= epsilon`` over ``n_mc`` Monte-Carlo draws.

Every grid cell owns an RNG stream keyed by (module position, alpha, sigma),
so its estimate does not depend on search order, on which other cells were
visited, or on the epsilon being tested. Cells are visited in increasing
objective order and the first feasible one is returned; this is the same
point an exhaustive scan would pick. Draws stop early once the errors seen
so far already push the mean above epsilon, which cannot change the outcome.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .datasets import LabeledDataset
from .landscape import Evaluator, PerturbationSampler, PerturbedLossEstimate, module_delta, summarize_counts
from .nngraph import NetworkGraph, SnapshotStore
from .numerics import RngStream, float_key

DEFAULT_ALPHAS = tuple(round(0.05 * i, 10) for i in range(21))
DEFAULT_SIGMAS = tuple(float(s) for s in np.logspace(-3, 0, 13))


@dataclass(frozen=True)
class SearchConfig:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    epsilon: float = 0.1
    n_mc: int = 64
    slack: float = 1.0

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        sigmas = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "sigmas", sigmas)
        if not alphas or not sigmas:
            raise ValueError("alpha and sigma grids must be nonempty")
        if list(alphas) != sorted(set(alphas)) or alphas[0] < 0 or alphas[-1] != 1.0:
            raise ValueError("alpha grid must be sorted, unique, within [0, 1] and include 1")
        if list(sigmas) != sorted(set(sigmas)) or sigmas[0] <= 0 or sigmas[-1] != 1.0:
            raise ValueError("sigma grid must be sorted, unique, within (0, 1] and include 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.n_mc < 8:
            raise ValueError("n_mc must be >= 8")
        if self.slack < 0:
            raise ValueError("slack must be >= 0")

    def with_epsilon(self, epsilon: float) -> "SearchConfig":
        return SearchConfig(self.alphas, self.sigmas, epsilon, self.n_mc, self.slack)

    def alpha_one(self) -> "SearchConfig":
        """Same search with alpha pinned to 1, i.e. the PAC-Bayes measure."""
        return SearchConfig((1.0,), self.sigmas, self.epsilon, self.n_mc, self.slack)

    @staticmethod
    def grids(n_alpha: int = 21, n_sigma: int = 13, sigma_min: float = 1e-3) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Evenly spaced alphas over [0, 1] and log-spaced sigmas over [sigma_min, 1]."""
        alphas = tuple(float(a) for a in np.linspace(0.0, 1.0, n_alpha))
        sigmas = tuple(float(s) for s in np.logspace(np.log10(sigma_min), 0.0, n_sigma))
        return alphas, sigmas[:-1] + (1.0,)


class _Cell:
    """Lazily extended Monte-Carlo estimate for one perturbation setting."""

    def __init__(self, sampler: PerturbationSampler):
        self.sampler = sampler
        self.counts: list[int] = []
        self.lock = threading.Lock()

    def _extend(self, n: int) -> None:
        while len(self.counts) < n:
            self.counts.append(self.sampler.draw())

    def feasible(self, epsilon: float, slack: float, n: int) -> bool:
        with self.lock:
            n_eval = self.sampler.n_eval
            total = sum(self.counts[:n])
            k = min(len(self.counts), n)
            while True:
                if total / (n * n_eval) > epsilon:
                    return False  # remaining draws are >= 0, so the full mean only grows
                if k == n:
                    break
                if k == len(self.counts):
                    self.counts.append(self.sampler.draw())
                total += self.counts[k]
                k += 1
            mean, stderr = summarize_counts(self.counts[:n], n_eval)
            return mean + slack * stderr <= epsilon

    def estimate(self, n: int) -> PerturbedLossEstimate:
        with self.lock:
            self._extend(n)
            counts = self.counts[:n]
        mean, stderr = summarize_counts(counts, self.sampler.n_eval)
        return PerturbedLossEstimate(mean, stderr, n, dict(self.sampler.sigma), dict(self.sampler.alpha), counts)


class ConstraintEstimator:
    """Shared cache of constraint estimates for one trained network and data set.

    Pass the same estimator to several searches (different epsilons, the
    alpha=1 PAC-Bayes search, the joint search) so they all threshold the very
    same Monte-Carlo samples.
    """

    def __init__(self, graph: NetworkGraph, store: SnapshotStore, data: LabeledDataset, rng: RngStream, n_mc: int = 64):
        if n_mc < 2:
            raise ValueError("n_mc must be >= 2")
        self.graph = graph
        self.store = store
        self.rng = rng
        self.n_mc = n_mc
        self.evaluator = Evaluator(graph, store, data)
        self._cells: dict[tuple, _Cell] = {}
        self._lock = threading.Lock()
        self._dist: dict[str, float] = {}

    def distance_sq(self, module_id: str) -> float:
        if module_id not in self._dist:
            d = module_delta(self.store, module_id)
            self._dist[module_id] = float(d @ d)
        return self._dist[module_id]

    def cell(self, setting: Mapping[str, tuple[float, float]]) -> _Cell:
        """Estimate for modules ``setting`` = {module: (alpha, sigma)} perturbed together."""
        order = self.graph.module_ids
        items = sorted(setting.items(), key=lambda kv: order.index(kv[0]))
        key = tuple((order.index(m), float_key(a), float_key(s)) for m, (a, s) in items)
        with self._lock:
            cell = self._cells.get(key)
            if cell is None:
                # a one-module joint setting is the same experiment as the single-module cell
                stream = self.rng.child(*[v for triple in key for v in triple])
                sampler = PerturbationSampler(
                    self.evaluator,
                    {m: a for m, (a, _) in items},
                    {m: s for m, (_, s) in items},
                    [m for m, _ in items],
                    stream,
                )
                cell = self._cells[key] = _Cell(sampler)
        return cell

    @property
    def n_cells(self) -> int:
        return len(self._cells)


@dataclass
class CriticalityResult:
    module_id: str
    epsilon: float
    distance_sq: float
    feasible: bool
    alpha: float | None = None
    sigma: float | None = None
    mu: float | None = None  # None when no grid point is feasible
    estimate: PerturbedLossEstimate | None = None
    cells_checked: int = 0


def _estimator_for(graph, store, cfg: SearchConfig, data, rng, estimator) -> ConstraintEstimator:
    if estimator is None:
        return ConstraintEstimator(graph, store, data, rng, cfg.n_mc)
    if estimator.graph is not graph or estimator.store is not store:
        raise ValueError("estimator was built for a different network")
    if estimator.n_mc != cfg.n_mc:
        raise ValueError(f"estimator uses n_mc={estimator.n_mc}, config asks for {cfg.n_mc}")
    return estimator


def module_criticality(
    graph: NetworkGraph,
    store: SnapshotStore,
    module_id: str,
    cfg: SearchConfig,
    data: LabeledDataset | None,
    rng: RngStream | None,
    estimator: ConstraintEstimator | None = None,
) -> CriticalityResult:
    """Grid search for the criticality of one module.

    Returns the feasible grid point with the smallest objective; ties go to
    the smaller alpha, then the larger sigma. If nothing is feasible the
    result has ``feasible=False`` and ``mu=None``.
    """
    if module_id not in graph.module_ids:
        raise ValueError(f"{module_id!r} is not a parameterized module; valid ids: {graph.module_ids}")
    est = _estimator_for(graph, store, cfg, data, rng, estimator)
    dist = est.distance_sq(module_id)
    candidates = sorted(
        ((a * a * dist / (s * s), a, s) for a in cfg.alphas for s in cfg.sigmas),
        key=lambda t: (t[0], t[1], -t[2]),
    )
    for checked, (obj, a, s) in enumerate(candidates, start=1):
        cell = est.cell({module_id: (a, s)})
        if cell.feasible(cfg.epsilon, cfg.slack, cfg.n_mc):
            return CriticalityResult(module_id, cfg.epsilon, dist, True, a, s, obj, cell.estimate(cfg.n_mc), checked)
    return CriticalityResult(module_id, cfg.epsilon, dist, False, cells_checked=len(candidates))


@dataclass
class NetworkCriticality:
    epsilon: float
    modules: dict[str, CriticalityResult]
    mu_net: float | None
    infeasible: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.infeasible


def network_criticality(
    graph: NetworkGraph,
    store: SnapshotStore,
    cfg: SearchConfig,
    data: LabeledDataset | None,
    rng: RngStream | None,
    estimator: ConstraintEstimator | None = None,
) -> NetworkCriticality:
    """Sum of module criticalities; ``mu_net`` is None if any module is infeasible."""
    est = _estimator_for(graph, store, cfg, data, rng, estimator)
    results = {m: module_criticality(graph, store, m, cfg, None, None, est) for m in graph.module_ids}
    bad = [m for m, r in results.items() if not r.feasible]
    mu_net = None if bad else float(sum(r.mu for r in results.values()))
    return NetworkCriticality(cfg.epsilon, results, mu_net, bad)


@dataclass
class CurvePoint:
    epsilon: float
    mu_net: float | None
    network: NetworkCriticality


def criticality_curve(
    graph: NetworkGraph,
    store: SnapshotStore,
    cfg: SearchConfig,
    epsilons: Sequence[float],
    data: LabeledDataset | None,
    rng: RngStream | None,
    estimator: ConstraintEstimator | None = None,
) -> list[CurvePoint]:
    """Network criticality at each epsilon, all thresholds sharing one estimate cache."""
    epsilons = [float(e) for e in epsilons]
    if epsilons != sorted(epsilons):
        raise ValueError("epsilons must be sorted ascending")
    est = _estimator_for(graph, store, cfg, data, rng, estimator)
    points = []
    for eps in epsilons:
        net = network_criticality(graph, store, cfg.with_epsilon(eps), None, None, est)
        points.append(CurvePoint(eps, net.mu_net, net))
    return points


@dataclass
class JointCriticality:
    epsilon: float
    alpha: dict[str, float]
    sigma: dict[str, float]
    mu_prime: float | None
    feasible: bool
    estimate: PerturbedLossEstimate | None
    steps: int


def joint_objective(dist: Mapping[str, float], alpha: Mapping[str, float], sigma: Mapping[str, float]) -> float:
    return float(sum(alpha[m] ** 2 * dist[m] / sigma[m] ** 2 for m in dist))


def joint_criticality(
    graph: NetworkGraph,
    store: SnapshotStore,
    cfg: SearchConfig,
    data: LabeledDataset | None,
    rng: RngStream | None,
    estimator: ConstraintEstimator | None = None,
    start: NetworkCriticality | None = None,
) -> JointCriticality:
    """Greedy search for ``(alpha_i, sigma_i)`` when all modules are perturbed together.

    Starts at the per-module solutions (modules without one start at the
    ``alpha=1, sigma=sigma_min`` corner). While the joint constraint fails,
    one module is moved one grid cell toward that corner, either alpha up or
    sigma down, picking the move with the smallest objective increase.
    """
    est = _estimator_for(graph, store, cfg, data, rng, estimator)
    ids = graph.module_ids
    if start is None:
        start = network_criticality(graph, store, cfg, None, None, est)
    dist = {m: est.distance_sq(m) for m in ids}
    ai, si = {}, {}
    for m in ids:
        r = start.modules[m]
        if r.feasible:
            ai[m], si[m] = cfg.alphas.index(r.alpha), cfg.sigmas.index(r.sigma)
        else:
            ai[m], si[m] = len(cfg.alphas) - 1, 0

    def current():
        return {m: cfg.alphas[ai[m]] for m in ids}, {m: cfg.sigmas[si[m]] for m in ids}

    steps = 0
    while True:
        alpha, sigma = current()
        cell = est.cell({m: (alpha[m], sigma[m]) for m in ids})
        if cell.feasible(cfg.epsilon, cfg.slack, cfg.n_mc):
            obj = joint_objective(dist, alpha, sigma)
            return JointCriticality(cfg.epsilon, alpha, sigma, obj, True, cell.estimate(cfg.n_mc), steps)
        base = joint_objective(dist, alpha, sigma)
        moves = []
        for rank, m in enumerate(ids):
            if ai[m] < len(cfg.alphas) - 1:
                a2 = dict(alpha, **{m: cfg.alphas[ai[m] + 1]})
                moves.append((joint_objective(dist, a2, sigma) - base, rank, 0, m))
            if si[m] > 0:
                s2 = dict(sigma, **{m: cfg.sigmas[si[m] - 1]})
                moves.append((joint_objective(dist, alpha, s2) - base, rank, 1, m))
        if not moves:
            return JointCriticality(cfg.epsilon, alpha, sigma, None, False, None, steps)
        _, _, kind, m = min(moves)
        if kind == 0:
            ai[m] += 1
        else:
            si[m] -= 1
        steps += 1
