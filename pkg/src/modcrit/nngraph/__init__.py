from .engine import (
    Batch,
    Params,
    copy_params,
    cross_entropy,
    error_count,
    forward,
    forward_from,
    forward_trace,
    init_params,
    loss_and_grad,
    margin_error,
    margins,
    zero_one_error,
)
from .graph import INPUT, ModuleNode, NetworkGraph
from .presets import PRESETS, build_preset, convnet_s, fcn_s, resnet_s
from .train import EpochRecord, SnapshotStore, TrainConfig, TrainingDiverged, TrainResult, sgd_train

__all__ = [
    "Batch",
    "Params",
    "copy_params",
    "cross_entropy",
    "error_count",
    "forward",
    "forward_from",
    "forward_trace",
    "init_params",
    "loss_and_grad",
    "margin_error",
    "margins",
    "zero_one_error",
    "INPUT",
    "ModuleNode",
    "NetworkGraph",
    "PRESETS",
    "build_preset",
    "convnet_s",
    "fcn_s",
    "resnet_s",
    "EpochRecord",
    "SnapshotStore",
    "TrainConfig",
    "TrainingDiverged",
    "TrainResult",
    "sgd_train",
]
