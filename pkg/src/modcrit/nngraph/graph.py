"""Computation-graph description for small dense/conv/residual networks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

INPUT = "input"

PARAMETERIZED_KINDS = frozenset({"dense", "conv2d"})
ALL_KINDS = PARAMETERIZED_KINDS | {"residual_add", "relu", "maxpool", "flatten"}


@dataclass
class ModuleNode:
    """One node of the graph.

    Only ``dense`` and ``conv2d`` nodes carry parameters (``weight`` and
    ``bias``); nonlinearities, pooling, flattening and residual additions are
    parameterless and are never rewound or perturbed.

    ``attrs`` by kind:
        dense: ``in_features``, ``out_features``
        conv2d: ``in_channels``, ``out_channels``, ``kernel_size``, ``stride``, ``padding``
        maxpool: ``size``
    """

    id: str
    kind: str
    inputs: tuple[str, ...]
    attrs: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        self.inputs = tuple(self.inputs)

    @property
    def parameterized(self) -> bool:
        return self.kind in PARAMETERIZED_KINDS

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        a = self.attrs
        if self.kind == "dense":
            return {"weight": (a["out_features"], a["in_features"]), "bias": (a["out_features"],)}
        if self.kind == "conv2d":
            q = a["kernel_size"]
            return {
                "weight": (a["out_channels"], a["in_channels"], q, q),
                "bias": (a["out_channels"],),
            }
        return {}

    @property
    def num_params(self) -> int:
        total = 0
        for shape in self.param_shapes().values():
            n = 1
            for s in shape:
                n *= s
            total += n
        return total

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "kind": self.kind, "inputs": list(self.inputs), "attrs": dict(self.attrs)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModuleNode":
        return cls(id=d["id"], kind=d["kind"], inputs=tuple(d["inputs"]), attrs=dict(d.get("attrs", {})))


class NetworkGraph:
    """A DAG of :class:`ModuleNode` objects in topological order.

    ``input_shape`` excludes the batch dimension: ``(features,)`` for dense
    inputs or ``(channels, N, N)`` for images.
    """

    def __init__(
        self,
        nodes: Iterable[ModuleNode],
        output: str,
        input_shape: tuple[int, ...],
        n_classes: int,
        name: str = "",
    ) -> None:
        self.nodes = list(nodes)
        self.output = output
        self.input_shape = tuple(int(s) for s in input_shape)
        self.n_classes = int(n_classes)
        self.name = name
        self._index = {}
        for node in self.nodes:
            if node.id in self._index or node.id == INPUT:
                raise ValueError(f"duplicate or reserved node id {node.id!r}")
            for src in node.inputs:
                if src != INPUT and src not in self._index:
                    raise ValueError(f"node {node.id!r} reads {src!r}, which is not an earlier node")
            self._index[node.id] = len(self._index)
        if output not in self._index:
            raise ValueError(f"output node {output!r} not in graph")
        self.shapes = self._infer_shapes()
        if self.shapes[output] != (self.n_classes,):
            raise ValueError(f"output shape {self.shapes[output]} does not match {self.n_classes} classes")

    def __repr__(self) -> str:
        return f"NetworkGraph({self.name or 'unnamed'}, d={self.d}, params={self.num_params})"

    def node(self, node_id: str) -> ModuleNode:
        try:
            return self.nodes[self._index[node_id]]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def position(self, node_id: str) -> int:
        return self._index[node_id]

    @property
    def modules(self) -> list[ModuleNode]:
        """Parameterized nodes in topological order."""
        return [n for n in self.nodes if n.parameterized]

    @property
    def module_ids(self) -> list[str]:
        return [n.id for n in self.modules]

    @property
    def d(self) -> int:
        return len(self.modules)

    @property
    def num_params(self) -> int:
        return sum(n.num_params for n in self.modules)

    def module_index(self, module_id: str) -> int:
        """Position of a parameterized module among all modules."""
        ids = self.module_ids
        if module_id not in ids:
            raise ValueError(f"{module_id!r} is not a parameterized module; valid ids: {ids}")
        return ids.index(module_id)

    def input_shape_of(self, node_id: str) -> tuple[int, ...]:
        node = self.node(node_id)
        return self.shapes[node.inputs[0]]

    def descendants(self, node_ids: Iterable[str]) -> set[str]:
        """Nodes whose value depends on any of ``node_ids`` (inclusive)."""
        dirty = set(node_ids)
        for node in self.nodes:
            if any(src in dirty for src in node.inputs):
                dirty.add(node.id)
        return dirty

    def _infer_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {INPUT: self.input_shape}
        for node in self.nodes:
            ins = [shapes[s] for s in node.inputs]
            a = node.attrs
            if node.kind == "dense":
                if ins[0] != (a["in_features"],):
                    raise ValueError(f"{node.id}: dense expects ({a['in_features']},), got {ins[0]}")
                out = (a["out_features"],)
            elif node.kind == "conv2d":
                if len(ins[0]) != 3 or ins[0][0] != a["in_channels"]:
                    raise ValueError(f"{node.id}: conv2d expects {a['in_channels']} channels, got {ins[0]}")
                q, s, p = a["kernel_size"], a.get("stride", 1), a.get("padding", 0)
                h = (ins[0][1] + 2 * p - q) // s + 1
                w = (ins[0][2] + 2 * p - q) // s + 1
                if h < 1 or w < 1:
                    raise ValueError(f"{node.id}: kernel larger than padded input")
                out = (a["out_channels"], h, w)
            elif node.kind == "maxpool":
                k = a.get("size", 2)
                c, h, w = ins[0]
                if h % k or w % k:
                    raise ValueError(f"{node.id}: spatial size {h}x{w} not divisible by pool {k}")
                out = (c, h // k, w // k)
            elif node.kind == "flatten":
                n = 1
                for s in ins[0]:
                    n *= s
                out = (n,)
            elif node.kind == "residual_add":
                if len(ins) < 2 or any(s != ins[0] for s in ins):
                    raise ValueError(f"{node.id}: residual_add needs >=2 equal-shaped inputs, got {ins}")
                out = ins[0]
            else:  # relu
                out = ins[0]
            if len(node.inputs) != 1 and node.kind != "residual_add":
                raise ValueError(f"{node.id}: {node.kind} takes exactly one input")
            shapes[node.id] = out
        return shapes

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "output": self.output,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkGraph":
        return cls(
            nodes=[ModuleNode.from_dict(n) for n in d["nodes"]],
            output=d["output"],
            input_shape=tuple(d["input_shape"]),
            n_classes=d["n_classes"],
            name=d.get("name", ""),
        )
