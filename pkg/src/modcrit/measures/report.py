"""All complexity measures of one trained network, and the deterministic-bound inputs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from ..criticality import ConstraintEstimator, CriticalityResult, SearchConfig, module_criticality, network_criticality
from ..datasets import LabeledDataset
from ..landscape import Evaluator, interpolate_module
from ..nngraph import NetworkGraph, SnapshotStore, forward, margins
from ..numerics import RngStream, frobenius_norm
from .bounds import BoundInputs
from .complexity import dti, module_fro, nop, operator_norm, pfn, psn, sosp

MEASURES = ("GE", "PFN", "PSN", "DtI", "NoP", "SoSP", "PacBayes", "NetCriticality")


@dataclass
class PacBayesMeasure:
    value: float | None
    modules: dict[str, CriticalityResult]
    infeasible: list[str] = field(default_factory=list)


def pac_bayes_measure(
    graph: NetworkGraph,
    store: SnapshotStore,
    cfg: SearchConfig,
    data: LabeledDataset | None,
    rng: RngStream | None,
    estimator: ConstraintEstimator | None = None,
) -> PacBayesMeasure:
    """``sum_i ||theta_i^F - theta_i^0||^2 / sigma_i^2`` with sigma from the alpha=1 search."""
    pinned = cfg.alpha_one()
    if estimator is None:
        estimator = ConstraintEstimator(graph, store, data, rng, cfg.n_mc)
    results = {m: module_criticality(graph, store, m, pinned, None, None, estimator) for m in graph.module_ids}
    bad = [m for m, r in results.items() if not r.feasible]
    value = None if bad else float(sum(r.mu for r in results.values()))
    return PacBayesMeasure(value, results, bad)


@dataclass
class MeasureReport:
    network_id: str
    train_error: float
    test_error: float
    GE: float
    PFN: float
    PSN: float
    DtI: float
    NoP: int
    SoSP: float
    PacBayes: float | None
    NetCriticality: float | None
    epsilon: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def row(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("provenance")
        d["network"] = d.pop("network_id")
        return d


def measure_report(
    graph: NetworkGraph,
    store: SnapshotStore,
    data: LabeledDataset,
    cfg: SearchConfig,
    rng: RngStream,
    network_id: str = "",
    spectral_seed: int = 0,
    criticality_data: LabeledDataset | None = None,
) -> MeasureReport:
    """Compute every complexity measure; PAC-Bayes and criticality share one estimate cache.

    ``criticality_data`` optionally replaces ``data`` for the Monte-Carlo
    searches (for example a train subsample); errors always use ``data``.
    """
    ev = Evaluator(graph, store, data)
    train_err, test_err = ev.baseline("train_error"), ev.baseline("test_error")
    est = ConstraintEstimator(graph, store, criticality_data or data, rng, cfg.n_mc)
    net = network_criticality(graph, store, cfg, None, None, est)
    pb = pac_bayes_measure(graph, store, cfg, None, None, est)
    return MeasureReport(
        network_id=network_id or graph.name,
        train_error=train_err,
        test_error=test_err,
        GE=test_err - train_err,
        PFN=pfn(graph, store),
        PSN=psn(graph, store, spectral_seed),
        DtI=dti(graph, store),
        NoP=nop(graph),
        SoSP=sosp(graph, store, spectral_seed),
        PacBayes=pb.value,
        NetCriticality=net.mu_net,
        epsilon=cfg.epsilon,
        provenance={
            "seed": rng.seed,
            "alphas": list(cfg.alphas),
            "sigmas": list(cfg.sigmas),
            "n_mc": cfg.n_mc,
            "slack": cfg.slack,
            "criticality_samples": len((criticality_data or data).train),
            "infeasible_criticality": net.infeasible,
            "infeasible_pac_bayes": pb.infeasible,
        },
    )


def pac_bayes_inputs(
    graph: NetworkGraph,
    store: SnapshotStore,
    alpha: Mapping[str, float],
    sigma: Mapping[str, float],
    m: int,
    delta: float = 0.05,
) -> BoundInputs:
    ids = graph.module_ids
    dist = []
    for mid in ids:
        p0, pF = store.module(mid, 0), store.module(mid, store.final_epoch)
        dist.append(module_fro({k: pF[k] - p0[k] for k in pF}))
    return BoundInputs(
        k=[graph.node(mid).num_params for mid in ids],
        distance=dist,
        alpha=[alpha[mid] for mid in ids],
        sigma=[sigma[mid] for mid in ids],
        m=m,
        delta=delta,
    )


def default_margin(graph: NetworkGraph, store: SnapshotStore, data: LabeledDataset, percentile: float = 10.0) -> float:
    """10th percentile of the positive train margins of the trained network."""
    mg = margins(forward(graph, store.final, data.train.inputs), data.train.labels)
    pos = mg[mg > 0]
    if pos.size == 0:
        raise ValueError("trained network has no positive margins")
    return float(np.percentile(pos, percentile))


def deterministic_inputs(
    graph: NetworkGraph,
    store: SnapshotStore,
    alpha: Mapping[str, float],
    data: LabeledDataset,
    delta: float = 0.05,
    gamma: float | None = None,
    spectral_seed: int = 0,
) -> BoundInputs:
    """Inputs for the deterministic bound measured on a trained network.

    B is the largest input Frobenius norm in the training set and gamma
    defaults to :func:`default_margin`. A dense module is treated as a 1x1
    convolution whose channel count is its output width.
    """
    ids = graph.module_ids
    if len(graph.input_shape) != 3:
        raise ValueError("deterministic bound needs image inputs")
    kernel, channels, spectral, dist = [], [], [], []
    for mid in ids:
        node = graph.node(mid)
        if node.kind == "conv2d":
            kernel.append(node.attrs["kernel_size"])
            channels.append(node.attrs["out_channels"])
        else:
            kernel.append(1)
            channels.append(node.attrs["out_features"])
        theta_a = interpolate_module(store, mid, alpha[mid])
        spectral.append(operator_norm(graph, mid, theta_a["weight"], spectral_seed))
        p0, pF = store.module(mid, 0), store.module(mid, store.final_epoch)
        dist.append(module_fro({k: pF[k] - p0[k] for k in pF}))
    x = data.train.inputs
    B = max(frobenius_norm(xi) for xi in x)
    return BoundInputs(
        k=[graph.node(mid).num_params for mid in ids],
        distance=dist,
        alpha=[alpha[mid] for mid in ids],
        sigma=None,
        m=len(data.train),
        delta=delta,
        gamma=gamma if gamma is not None else default_margin(graph, store, data),
        input_bound=B,
        image_size=graph.input_shape[1],
        kernel_size=kernel,
        channels=channels,
        spectral=spectral,
    )
