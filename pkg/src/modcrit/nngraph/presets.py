"""Desk-scale architecture presets: FCN-S, ConvNet-S and ResNet-S."""

from __future__ import annotations

from typing import Callable

from .graph import INPUT, ModuleNode, NetworkGraph


class _Builder:
    def __init__(self, input_shape: tuple[int, ...]):
        self.nodes: list[ModuleNode] = []
        self.shape = tuple(input_shape)
        self.last = INPUT
        self._shapes = {INPUT: self.shape}

    def add(self, node_id: str, kind: str, inputs=None, **attrs) -> str:
        inputs = (self.last,) if inputs is None else tuple(inputs)
        self.nodes.append(ModuleNode(node_id, kind, inputs, attrs))
        # cheap local shape tracking, NetworkGraph re-validates everything
        src = self._shapes[inputs[0]]
        if kind == "dense":
            shape = (attrs["out_features"],)
        elif kind == "conv2d":
            q, s, p = attrs["kernel_size"], attrs["stride"], attrs["padding"]
            shape = (attrs["out_channels"], (src[1] + 2 * p - q) // s + 1, (src[2] + 2 * p - q) // s + 1)
        elif kind == "maxpool":
            shape = (src[0], src[1] // attrs["size"], src[2] // attrs["size"])
        elif kind == "flatten":
            n = 1
            for v in src:
                n *= v
            shape = (n,)
        else:
            shape = src
        self._shapes[node_id] = shape
        self.last = node_id
        self.shape = shape
        return node_id

    def conv(self, node_id: str, out_channels: int, kernel_size: int = 3, stride: int = 1, inputs=None) -> str:
        src = self._shapes[(inputs or (self.last,))[0]]
        return self.add(
            node_id,
            "conv2d",
            inputs,
            in_channels=src[0],
            out_channels=out_channels,
            kernel_size=kernel_size,
            stride=stride,
            padding=kernel_size // 2,
        )

    def dense(self, node_id: str, out_features: int) -> str:
        return self.add(node_id, "dense", in_features=self.shape[0], out_features=out_features)


def fcn_s(input_shape, n_classes: int, width_mult: int = 1, hidden: int = 32) -> NetworkGraph:
    """Two hidden dense layers with ReLU."""
    b = _Builder(input_shape)
    if len(b.shape) > 1:
        b.add("flatten", "flatten")
    h = hidden * width_mult
    b.dense("fc1", h)
    b.add("relu1", "relu")
    b.dense("fc2", h)
    b.add("relu2", "relu")
    out = b.dense("fc3", n_classes)
    return NetworkGraph(b.nodes, out, input_shape, n_classes, name=f"fcn_s_x{width_mult}")


def convnet_s(input_shape, n_classes: int, width_mult: int = 1, width: int = 8) -> NetworkGraph:
    """Four 3x3 convolutions in two pooled stages, then a linear classifier."""
    if len(input_shape) != 3:
        raise ValueError("convnet_s needs image inputs (channels, N, N)")
    w = width * width_mult
    b = _Builder(input_shape)
    b.conv("conv1", w)
    b.add("relu1", "relu")
    b.conv("conv2", w)
    b.add("relu2", "relu")
    b.add("pool1", "maxpool", size=2)
    b.conv("conv3", 2 * w)
    b.add("relu3", "relu")
    b.conv("conv4", 2 * w)
    b.add("relu4", "relu")
    b.add("pool2", "maxpool", size=2)
    b.add("flatten", "flatten")
    out = b.dense("fc", n_classes)
    return NetworkGraph(b.nodes, out, input_shape, n_classes, name=f"convnet_s_x{width_mult}")


def resnet_s(input_shape, n_classes: int, width_mult: int = 1, width: int = 8) -> NetworkGraph:
    """Stem conv, an identity residual block, a downsampling residual block, linear head.

    The downsampling block has a strided 1x1 convolution on its shortcut, so
    that module runs parallel to the two block convolutions.
    """
    if len(input_shape) != 3:
        raise ValueError("resnet_s needs image inputs (channels, N, N)")
    w = width * width_mult
    b = _Builder(input_shape)
    b.conv("stem.conv", w)
    stem = b.add("stem.relu", "relu")

    b.conv("block1.conv1", w)
    b.add("block1.relu1", "relu")
    b.conv("block1.conv2", w)
    b.add("block1.add", "residual_add", inputs=("block1.conv2", stem))
    block1 = b.add("block1.relu2", "relu")

    b.conv("block2.conv1", 2 * w, stride=2)
    b.add("block2.relu1", "relu")
    b.conv("block2.conv2", 2 * w)
    b.conv("block2.downsample", 2 * w, kernel_size=1, stride=2, inputs=(block1,))
    b.add("block2.add", "residual_add", inputs=("block2.conv2", "block2.downsample"))
    b.add("block2.relu2", "relu")

    b.add("pool", "maxpool", size=2)
    b.add("flatten", "flatten")
    out = b.dense("fc", n_classes)
    return NetworkGraph(b.nodes, out, input_shape, n_classes, name=f"resnet_s_x{width_mult}")


PRESETS: dict[str, Callable[..., NetworkGraph]] = {
    "fcn_s": fcn_s,
    "convnet_s": convnet_s,
    "resnet_s": resnet_s,
}


def build_preset(name: str, input_shape, n_classes: int, width_mult: int = 1) -> NetworkGraph:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown architecture preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(tuple(input_shape), n_classes, width_mult=width_mult)
