"""Mini-batch SGD with momentum and per-epoch parameter snapshots."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from ..numerics import RngStream
from .engine import Batch, Params, copy_params, cross_entropy, forward, init_params, loss_and_grad, zero_one_error
from .graph import NetworkGraph

log = logging.getLogger(__name__)

# stream ids under the training seed
INIT_STREAM = 0
SHUFFLE_STREAM = 1
AUGMENT_STREAM = 2


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}; last finite epoch was {last_finite_epoch}")
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch


@dataclass
class TrainConfig:
    """Optimizer settings. The learning rate is ``lr * lr_decay ** (epoch // lr_step)``."""

    epochs: int = 30
    lr: float = 0.1
    lr_decay: float = 0.2
    lr_step: int = 60
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    loss_target: float | None = None
    hflip: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.lr_step < 1:
            raise ValueError("lr, batch_size and lr_step must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used while running epoch ``epoch`` (1-based)."""
        return self.lr * self.lr_decay ** ((epoch - 1) // self.lr_step)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class SnapshotStore:
    """Per-module parameters recorded at selected epochs.

    Epoch 0 holds the initialization and :attr:`final_epoch` the trained
    values. Each snapshot covers exactly the parameterized modules of the graph.
    """

    def __init__(self, graph: NetworkGraph, metadata: Mapping[str, Any] | None = None):
        self.graph = graph
        self.metadata: dict[str, Any] = dict(metadata or {})
        self._snaps: dict[int, Params] = {}

    def record(self, epoch: int, params: Mapping[str, Mapping[str, np.ndarray]]) -> None:
        ids = set(self.graph.module_ids)
        if set(params) != ids:
            raise ValueError(f"snapshot modules {sorted(params)} do not match graph modules {sorted(ids)}")
        self._snaps[int(epoch)] = copy_params(params)

    @property
    def epochs(self) -> list[int]:
        return sorted(self._snaps)

    @property
    def final_epoch(self) -> int:
        return self.epochs[-1]

    def __contains__(self, epoch: int) -> bool:
        return epoch in self._snaps

    def params(self, epoch: int) -> Params:
        try:
            return self._snaps[epoch]
        except KeyError:
            raise ValueError(f"no snapshot for epoch {epoch}; available: {self.epochs}") from None

    @property
    def initial(self) -> Params:
        return self.params(0)

    @property
    def final(self) -> Params:
        return self.params(self.final_epoch)

    def module(self, module_id: str, epoch: int) -> dict[str, np.ndarray]:
        snap = self.params(epoch)
        if module_id not in snap:
            raise ValueError(f"{module_id!r} is not a parameterized module; valid ids: {self.graph.module_ids}")
        return snap[module_id]

    def validate(self) -> None:
        if 0 not in self._snaps:
            raise ValueError("snapshot store lacks the epoch-0 (initialization) snapshot")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_error: float
    test_error: float | None


@dataclass
class TrainResult:
    store: SnapshotStore
    log: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False


def _evaluate(graph, params, batch: Batch, chunk: int = 4096) -> tuple[float, float]:
    logits = np.concatenate([forward(graph, params, batch.inputs[i : i + chunk]) for i in range(0, len(batch), chunk)])
    return cross_entropy(logits, batch.labels), zero_one_error(logits, batch.labels)


def sgd_train(
    graph: NetworkGraph,
    train: Batch,
    config: TrainConfig,
    snapshot_epochs: Iterable[int],
    rng: RngStream,
    test: Batch | None = None,
) -> TrainResult:
    """Train with SGD + momentum, recording snapshots at ``snapshot_epochs``.

    Training stops after ``config.epochs`` epochs or as soon as the mean
    cross-entropy over the whole training set drops to ``config.loss_target``.
    The epoch-0 and last executed epoch are always snapshotted.

    Raises:
        TrainingDiverged: when the loss turns NaN/Inf.
    """
    wanted = set(int(e) for e in snapshot_epochs) | {0}
    params = init_params(graph, rng.child(INIT_STREAM))
    velocity = {m: {k: np.zeros_like(v) for k, v in p.items()} for m, p in params.items()}
    shuffle = rng.child(SHUFFLE_STREAM).generator()
    augment = rng.child(AUGMENT_STREAM).generator()

    store = SnapshotStore(graph, metadata={"seed": rng.seed, "optimizer": config.to_dict()})
    result = TrainResult(store=store)
    store.record(0, params)

    loss, err = _evaluate(graph, params, train)
    test_err = _evaluate(graph, params, test)[1] if test is not None else None
    result.log.append(EpochRecord(0, 0.0, loss, err, test_err))
    last_finite = 0
    if config.loss_target is not None and loss <= config.loss_target:
        result.stopped_early = True
        return result

    n = len(train)
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        order = shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            mb = train.take(order[start : start + config.batch_size])
            if config.hflip and mb.inputs.ndim == 4:
                flip = augment.random(len(mb)) < 0.5
                mb.inputs[flip] = mb.inputs[flip][..., ::-1]
            _, grads = loss_and_grad(graph, params, mb)
            for m, p in params.items():
                for k, v in p.items():
                    g = grads[m][k] + config.weight_decay * v if config.weight_decay else grads[m][k]
                    vel = velocity[m][k]
                    vel *= config.momentum
                    vel += g
                    v -= lr * vel
        loss, err = _evaluate(graph, params, train)
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, last_finite)
        last_finite = epoch
        test_err = _evaluate(graph, params, test)[1] if test is not None else None
        result.log.append(EpochRecord(epoch, lr, loss, err, test_err))
        log.debug("epoch %d lr %.4g loss %.4f err %.4f", epoch, lr, loss, err)
        done = config.loss_target is not None and loss <= config.loss_target
        if epoch in wanted or done or epoch == config.epochs:
            store.record(epoch, params)
        if done:
            result.stopped_early = epoch < config.epochs
            break
    return result
