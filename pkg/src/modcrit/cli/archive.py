"""Snapshot archives: a directory with ``manifest.json`` and one float64 blob per tensor.

Layout::

    manifest.json
    <epoch>/<module>/<param>.bin    little-endian float64, C order

The manifest holds the graph, the epoch list, every tensor shape, the
experiment config and its hash. It contains no timestamps, so writing the
same store twice gives byte-identical archives.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .. import __version__
from ..nngraph import NetworkGraph, SnapshotStore

FORMAT = "modcrit-snapshot-archive"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_DTYPE = np.dtype("<f8")


class ArchiveError(ValueError):
    pass


@contextmanager
def atomic_dir(target: Path) -> Iterator[Path]:
    """Yield a temporary sibling directory that replaces ``target`` on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(target, old)
    os.replace(tmp, target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_archive(store: SnapshotStore, path: str | Path, config: dict[str, Any] | None = None, config_hash: str = "") -> Path:
    store.validate()
    graph = store.graph
    tensors: dict[str, list[int]] = {}
    path = Path(path)
    with atomic_dir(path) as tmp:
        for epoch in store.epochs:
            for mid, params in store.params(epoch).items():
                mdir = tmp / str(epoch) / mid
                mdir.mkdir(parents=True, exist_ok=True)
                for name in sorted(params):
                    arr = np.ascontiguousarray(params[name], dtype=_DTYPE)
                    (mdir / f"{name}.bin").write_bytes(arr.tobytes())
                    tensors[f"{epoch}/{mid}/{name}"] = list(arr.shape)
        manifest = {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "graph": graph.to_dict(),
            "epochs": store.epochs,
            "tensors": tensors,
            "store_metadata": store.metadata,
            "config": config,
            "config_hash": config_hash,
        }
        (tmp / MANIFEST).write_text(_dump_json(manifest))
    return path


@dataclass
class Archive:
    path: Path
    manifest: dict[str, Any]
    graph: NetworkGraph
    store: SnapshotStore

    @property
    def config(self) -> dict[str, Any] | None:
        return self.manifest.get("config")

    @property
    def config_hash(self) -> str:
        return self.manifest.get("config_hash", "")


def load_archive(path: str | Path) -> Archive:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise ArchiveError(f"{path} is not a snapshot archive (no {MANIFEST})")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"corrupt manifest in {path}: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise ArchiveError(f"{path}: unknown archive format {manifest.get('format')!r}")
    graph = NetworkGraph.from_dict(manifest["graph"])
    store = SnapshotStore(graph, manifest.get("store_metadata"))
    shapes = manifest["tensors"]
    for epoch in manifest["epochs"]:
        params: dict[str, dict[str, np.ndarray]] = {}
        for mid in graph.module_ids:
            params[mid] = {}
            for name in graph.node(mid).param_shapes():
                key = f"{epoch}/{mid}/{name}"
                if key not in shapes:
                    raise ArchiveError(f"{path}: manifest lacks tensor {key}")
                shape = tuple(shapes[key])
                blob = path / str(epoch) / mid / f"{name}.bin"
                if not blob.is_file():
                    raise ArchiveError(f"{path}: missing blob {key}.bin")
                raw = blob.read_bytes()
                count = int(np.prod(shape)) if shape else 1
                if len(raw) != count * _DTYPE.itemsize:
                    raise ArchiveError(f"{path}: blob {key}.bin has {len(raw)} bytes, expected {count * _DTYPE.itemsize}")
                params[mid][name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float64)
        store.record(int(epoch), params)
    try:
        store.validate()
    except ValueError as exc:
        raise ArchiveError(f"{path}: {exc}") from None
    return Archive(path, manifest, graph, store)
