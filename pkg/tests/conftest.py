import numpy as np
import pytest
from hypothesis import settings

from modcrit.datasets import make_blobs
from modcrit.nngraph import TrainConfig, build_preset, sgd_train
from modcrit.numerics import RngStream

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def blobs_small():
    return make_blobs(3, 40, (1, 6, 6), 5.0, RngStream(11))


@pytest.fixture(scope="session")
def trained_fcn(blobs_small):
    graph = build_preset("fcn_s", blobs_small.input_shape, blobs_small.n_classes)
    cfg = TrainConfig(epochs=6, lr=0.05, batch_size=32, weight_decay=0.0)
    result = sgd_train(graph, blobs_small.train, cfg, [2, 4], RngStream(5), test=blobs_small.test)
    return graph, result.store, blobs_small


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
