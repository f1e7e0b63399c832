import itertools

import numpy as np
import pytest
from helpers import dense_net, oracle_search, train_dense

from modcrit.criticality import (
    ConstraintEstimator,
    SearchConfig,
    criticality_curve,
    joint_criticality,
    joint_objective,
    module_criticality,
    network_criticality,
)
from modcrit.datasets import make_blobs
from modcrit.landscape import Evaluator
from modcrit.measures import pac_bayes_measure
from modcrit.nngraph import SnapshotStore, init_params
from modcrit.numerics import RngStream

SMALL = dict(alphas=(0.0, 0.5, 1.0), sigmas=(0.01, 0.1, 1.0), n_mc=8)


@pytest.fixture(scope="module")
def two_layer():
    data = make_blobs(3, 60, 6, 6.0, RngStream(21))
    graph = dense_net(6, 3, hidden=12)
    return graph, train_dense(graph, data, seed=1), data


def frozen(graph, seed=0):
    store = SnapshotStore(graph)
    p = init_params(graph, RngStream(seed))
    store.record(0, p)
    store.record(1, p)
    return store


def test_search_config_validation():
    SearchConfig()
    with pytest.raises(ValueError):
        SearchConfig(alphas=(0.0, 0.5))
    with pytest.raises(ValueError):
        SearchConfig(sigmas=(0.0, 1.0))
    with pytest.raises(ValueError):
        SearchConfig(alphas=(0.5, 0.0, 1.0))
    with pytest.raises(ValueError):
        SearchConfig(epsilon=1.5)
    with pytest.raises(ValueError):
        SearchConfig(n_mc=4)
    with pytest.raises(ValueError):
        SearchConfig(slack=-1.0)


def test_grids_helper():
    alphas, sigmas = SearchConfig.grids(5, 4, 1e-3)
    assert alphas == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert sigmas[0] == pytest.approx(1e-3) and sigmas[-1] == 1.0 and len(sigmas) == 4


@pytest.mark.parametrize("module_id", ["fc1", "fc2"])
@pytest.mark.parametrize("epsilon", [0.05, 0.2])
def test_search_matches_exhaustive_oracle(two_layer, module_id, epsilon):
    graph, store, data = two_layer
    cfg = SearchConfig(epsilon=epsilon, **SMALL)
    res = module_criticality(graph, store, module_id, cfg, data, RngStream(4))
    want = oracle_search(graph, store, module_id, cfg.alphas, cfg.sigmas, epsilon, cfg.slack, cfg.n_mc, data, RngStream(4))
    if want is None:
        assert not res.feasible and res.mu is None
    else:
        assert (res.alpha, res.sigma) == want[:2]
        assert res.mu == pytest.approx(want[2], rel=1e-12)
        assert res.estimate.mean + cfg.slack * res.estimate.stderr <= epsilon


def test_untrained_store_gives_zero(two_layer):
    graph, _, data = two_layer
    store = frozen(graph)
    init_err = Evaluator(graph, store, data).baseline("train_error")
    cfg = SearchConfig(alphas=(0.0, 1.0), sigmas=(1e-9, 1.0), epsilon=init_err, n_mc=8)
    net = network_criticality(graph, store, cfg, data, RngStream(0))
    assert net.mu_net == 0.0 and net.feasible
    assert joint_criticality(graph, store, cfg, data, RngStream(0)).mu_prime == 0.0


def test_infeasible_is_none_not_zero(two_layer):
    graph, _, data = two_layer
    store = frozen(graph)
    cfg = SearchConfig(epsilon=0.0, **SMALL)
    r = module_criticality(graph, store, "fc1", cfg, data, RngStream(0))
    assert not r.feasible and r.mu is None and r.alpha is None
    net = network_criticality(graph, store, cfg, data, RngStream(0))
    assert net.mu_net is None and net.infeasible == ["fc1", "fc2"]
    joint = joint_criticality(graph, store, cfg, data, RngStream(0))
    assert not joint.feasible and joint.mu_prime is None


def test_single_module_network_and_joint(two_layer):
    _, _, data = two_layer
    graph = dense_net(6, 3)
    store = train_dense(graph, data, seed=2)
    cfg = SearchConfig(epsilon=0.1, **SMALL)
    est = ConstraintEstimator(graph, store, data, RngStream(8), cfg.n_mc)
    r = module_criticality(graph, store, "fc", cfg, None, None, est)
    net = network_criticality(graph, store, cfg, None, None, est)
    assert net.mu_net == r.mu
    fresh = joint_criticality(graph, store, cfg, data, RngStream(8))
    assert fresh.mu_prime == r.mu and fresh.steps == 0


def test_curve_is_monotone_and_shares_estimates(two_layer):
    graph, store, data = two_layer
    cfg = SearchConfig(**SMALL)
    est = ConstraintEstimator(graph, store, data, RngStream(6), cfg.n_mc)
    curve = criticality_curve(graph, store, cfg, [0.0, 0.02, 0.05, 0.1, 0.2, 0.3, 1.0], None, None, est)
    vals = [np.inf if p.mu_net is None else p.mu_net for p in curve]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert curve[-1].mu_net == 0.0
    assert est.n_cells <= len(graph.module_ids) * 9
    with pytest.raises(ValueError):
        criticality_curve(graph, store, cfg, [0.2, 0.1], data, RngStream(6))


def test_net_criticality_below_pac_bayes_per_module(two_layer):
    graph, store, data = two_layer
    cfg = SearchConfig(epsilon=0.1, **SMALL)
    est = ConstraintEstimator(graph, store, data, RngStream(3), cfg.n_mc)
    net = network_criticality(graph, store, cfg, None, None, est)
    pb = pac_bayes_measure(graph, store, cfg, None, None, est)
    for m in graph.module_ids:
        nc, p = net.modules[m].mu, pb.modules[m].mu
        if p is not None:
            assert nc is not None and nc <= p


def test_search_is_deterministic(two_layer):
    graph, store, data = two_layer
    cfg = SearchConfig(epsilon=0.1, **SMALL)
    a = network_criticality(graph, store, cfg, data, RngStream(9))
    b = network_criticality(graph, store, cfg, data, RngStream(9))
    assert a.mu_net == b.mu_net
    for m in graph.module_ids:
        assert a.modules[m].estimate.error_counts == b.modules[m].estimate.error_counts


def test_estimator_mismatch_rejected(two_layer):
    graph, store, data = two_layer
    est = ConstraintEstimator(graph, store, data, RngStream(0), 8)
    with pytest.raises(ValueError, match="n_mc"):
        module_criticality(graph, store, "fc1", SearchConfig(n_mc=16), None, None, est)
    with pytest.raises(ValueError, match="valid ids"):
        module_criticality(graph, store, "relu", SearchConfig(n_mc=8), None, None, est)


def test_joint_between_oracle_and_corner(two_layer):
    graph, store, data = two_layer
    cfg = SearchConfig(epsilon=0.05, **SMALL)
    est = ConstraintEstimator(graph, store, data, RngStream(5), cfg.n_mc)
    joint = joint_criticality(graph, store, cfg, None, None, est)
    ids = graph.module_ids
    dist = {m: est.distance_sq(m) for m in ids}
    best = None
    for (a1, s1), (a2, s2) in itertools.product(itertools.product(cfg.alphas, cfg.sigmas), repeat=2):
        alpha, sigma = dict(zip(ids, (a1, a2))), dict(zip(ids, (s1, s2)))
        cell = est.cell({m: (alpha[m], sigma[m]) for m in ids})
        if cell.feasible(cfg.epsilon, cfg.slack, cfg.n_mc):
            obj = joint_objective(dist, alpha, sigma)
            best = obj if best is None else min(best, obj)
    corner = joint_objective(dist, {m: 1.0 for m in ids}, {m: cfg.sigmas[0] for m in ids})
    if best is None:
        assert not joint.feasible
    else:
        assert joint.feasible
        assert best <= joint.mu_prime <= corner
        est_j = joint.estimate
        assert est_j.mean + cfg.slack * est_j.stderr <= cfg.epsilon
