"""Experiment configuration files (JSON) and the objects they describe."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..criticality import SearchConfig
from ..datasets import LabeledDataset, corrupt_labels, load_idx_images, make_blobs
from ..nngraph import PRESETS, NetworkGraph, TrainConfig, build_preset
from ..numerics import RngStream

OUTPUT_ROOT_ENV = "MODCRIT_OUTPUT_ROOT"

# child keys of the experiment seed, one per consumer
DATA_STREAM = 0
CORRUPT_STREAM = 1
TRAIN_STREAM = 2
SEARCH_STREAM = 3
SUBSAMPLE_STREAM = 4
VALLEY_STREAM = 5


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"config field {field_path!r}: {message}")
        self.field = field_path


def _take(raw: Mapping[str, Any], key: str, path: str, kind, default: Any = ..., choices=None):
    full = f"{path}.{key}" if path else key
    if key not in raw:
        if default is ...:
            raise ConfigError(full, "missing required field")
        return default
    value = raw[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if value is None and default is None:
        return None
    if not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool):
        raise ConfigError(full, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ConfigError(full, f"must be one of {sorted(choices)}, got {value!r}")
    return value


def _reject_unknown(raw: Mapping[str, Any], allowed: set[str], path: str) -> None:
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _section(raw: Mapping[str, Any], key: str, required: bool = True) -> Mapping[str, Any]:
    if key not in raw:
        if required:
            raise ConfigError(key, "missing required field")
        return {}
    if not isinstance(raw[key], dict):
        raise ConfigError(key, "expected an object")
    return raw[key]


@dataclass(frozen=True)
class ArchitectureSpec:
    preset: str
    width_mult: int = 1


@dataclass(frozen=True)
class DatasetSpec:
    """``kind="blobs"`` generates Gaussian clusters; ``kind="idx"`` reads four IDX files from ``path``."""

    kind: str
    n_classes: int
    n_per_class: int | None = None
    shape: tuple[int, ...] | None = None
    separation: float | None = None
    path: str | None = None
    seed: int | None = None  # defaults to the experiment seed
    corruption: float = 0.0
    corruption_seed: int | None = None

    def identity(self) -> dict[str, Any]:
        """Fields that define the underlying inputs, ignoring label corruption."""
        d = dataclasses.asdict(self)
        d.pop("corruption")
        d.pop("corruption_seed")
        return d


@dataclass(frozen=True)
class SearchSpec:
    epsilon: float = 0.1
    n_alpha: int = 21
    n_sigma: int = 13
    sigma_min: float = 1e-3
    n_mc: int = 64
    slack: float = 1.0
    train_subsample: int | None = None
    seed: int | None = None

    def search_config(self, epsilon: float | None = None) -> SearchConfig:
        alphas, sigmas = SearchConfig.grids(self.n_alpha, self.n_sigma, self.sigma_min)
        return SearchConfig(alphas, sigmas, self.epsilon if epsilon is None else epsilon, self.n_mc, self.slack)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    architecture: ArchitectureSpec
    dataset: DatasetSpec
    optimizer: TrainConfig
    snapshot_epochs: tuple[int, ...]
    search: SearchSpec = field(default_factory=SearchSpec)
    output_dir: str = "runs"

    # ------------------------------------------------------------------ parsing

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
        _reject_unknown(raw, {f.name for f in dataclasses.fields(cls)}, "")
        name = _take(raw, "name", "", str)
        seed = _take(raw, "seed", "", int)

        a = _section(raw, "architecture")
        _reject_unknown(a, {"preset", "width_mult"}, "architecture")
        arch = ArchitectureSpec(
            _take(a, "preset", "architecture", str, choices=set(PRESETS)),
            _take(a, "width_mult", "architecture", int, 1),
        )
        if arch.width_mult < 1:
            raise ConfigError("architecture.width_mult", "must be >= 1")

        dataset = _parse_dataset(_section(raw, "dataset"))

        o = _section(raw, "optimizer")
        allowed = {f.name for f in dataclasses.fields(TrainConfig)}
        _reject_unknown(o, allowed, "optimizer")
        kinds = {"epochs": int, "lr_step": int, "batch_size": int, "hflip": bool, "loss_target": float}
        kw = {k: _take(o, k, "optimizer", kinds.get(k, float), None if k == "loss_target" else ...) for k in o}
        try:
            optimizer = TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError("optimizer", str(exc)) from None

        snaps = _take(raw, "snapshot_epochs", "", list, [])
        for i, e in enumerate(snaps):
            if not isinstance(e, int) or isinstance(e, bool) or e < 0:
                raise ConfigError(f"snapshot_epochs[{i}]", "expected a nonnegative integer")

        s = _section(raw, "search", required=False)
        s_fields = {f.name: f for f in dataclasses.fields(SearchSpec)}
        _reject_unknown(s, set(s_fields), "search")
        s_kinds = {"n_alpha": int, "n_sigma": int, "n_mc": int, "train_subsample": int, "seed": int}
        search = SearchSpec(**{k: _take(s, k, "search", s_kinds.get(k, float), s_fields[k].default) for k in s})
        try:
            search.search_config()
        except ValueError as exc:
            raise ConfigError("search", str(exc)) from None

        out = _take(raw, "output_dir", "", str, "runs")
        return cls(name, seed, arch, dataset, optimizer, tuple(sorted(set(snaps))), search, out)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("<file>", f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["snapshot_epochs"] = list(self.snapshot_epochs)
        if d["dataset"]["shape"] is not None:
            d["dataset"]["shape"] = list(d["dataset"]["shape"])
        return d

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    # ------------------------------------------------------------------ builders

    def build_dataset(self) -> LabeledDataset:
        return build_dataset(self.dataset, self.seed)

    def build_graph(self, data: LabeledDataset) -> NetworkGraph:
        return build_preset(self.architecture.preset, data.input_shape, data.n_classes, self.architecture.width_mult)

    def train_rng(self) -> RngStream:
        return RngStream(self.seed, (TRAIN_STREAM,))

    def output_path(self) -> Path:
        return resolve_output(self.output_dir)


def _parse_dataset(d: Mapping[str, Any]) -> DatasetSpec:
    p = "dataset"
    _reject_unknown(d, {f.name for f in dataclasses.fields(DatasetSpec)}, p)
    kind = _take(d, "kind", p, str, choices={"blobs", "idx"})
    n_classes = _take(d, "n_classes", p, int, 10 if kind == "idx" else ...)
    corruption = _take(d, "corruption", p, float, 0.0)
    if not 0.0 <= corruption <= 1.0:
        raise ConfigError(f"{p}.corruption", "must be in [0, 1]")
    common = dict(
        n_classes=n_classes,
        seed=_take(d, "seed", p, int, None),
        corruption=corruption,
        corruption_seed=_take(d, "corruption_seed", p, int, None),
    )
    if kind == "blobs":
        shape = _take(d, "shape", p, list)
        if not shape or any(not isinstance(s, int) or s < 1 for s in shape):
            raise ConfigError(f"{p}.shape", "expected a list of positive integers")
        spec = DatasetSpec(
            kind,
            n_per_class=_take(d, "n_per_class", p, int),
            shape=tuple(shape),
            separation=_take(d, "separation", p, float),
            **common,
        )
    else:
        spec = DatasetSpec(kind, path=_take(d, "path", p, str), **common)
    if spec.n_classes < 2:
        raise ConfigError(f"{p}.n_classes", "must be >= 2")
    return spec


def build_dataset(spec: DatasetSpec, seed: int) -> LabeledDataset:
    base_seed = seed if spec.seed is None else spec.seed
    if spec.kind == "blobs":
        ds = make_blobs(spec.n_classes, spec.n_per_class, spec.shape, spec.separation, RngStream(base_seed, (DATA_STREAM,)))
    else:
        ds = load_idx_images(spec.path, spec.n_classes)
    if spec.corruption > 0:
        cseed = base_seed if spec.corruption_seed is None else spec.corruption_seed
        ds = corrupt_labels(ds, spec.corruption, RngStream(cseed, (CORRUPT_STREAM,)))
    return ds


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def resolve_output(path: str | Path) -> Path:
    """Relative output paths are placed under ``$MODCRIT_OUTPUT_ROOT`` when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p
