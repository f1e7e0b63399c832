"""Deterministic desk-scale datasets: Gaussian blobs, IDX image files, label corruption."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .nngraph import Batch
from .numerics import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    train: Batch
    test: Batch
    n_classes: int
    corrupted: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for split in (self.train, self.test):
            if split.labels.min() < 0 or split.labels.max() >= self.n_classes:
                raise ValueError("labels out of range")
        if self.corrupted is not None and self.corrupted.shape != (len(self.train),):
            raise ValueError("corruption mask length must equal the train size")

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.train.inputs.shape[1:])

    def subsample_train(self, n: int, rng: RngStream) -> "LabeledDataset":
        """Dataset whose train split is a fixed random subset of ``n`` samples."""
        if n >= len(self.train):
            return self
        idx = np.sort(rng.generator().choice(len(self.train), size=n, replace=False))
        mask = None if self.corrupted is None else self.corrupted[idx]
        meta = dict(self.meta, train_subsample=n)
        return replace(self, train=self.train.take(idx), corrupted=mask, meta=meta)


def make_blobs(
    n_classes: int,
    n_per_class: int,
    shape: int | Sequence[int],
    separation: float,
    rng: RngStream,
    train_fraction: float = 0.8,
) -> LabeledDataset:
    """Isotropic unit-variance Gaussian clusters with pairwise mean distance ``separation``.

    Class means sit on a random orthonormal simplex, so every pair of classes
    is exactly ``separation`` apart. ``shape`` is a feature count or an image
    shape ``(channels, N, N)``. Samples are shuffled and split 80/20.
    """
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    shape = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(int(s) for s in shape)
    dim = int(np.prod(shape))
    if dim < n_classes:
        raise ValueError(f"need at least {n_classes} input dimensions for {n_classes} equidistant means")
    gen = rng.generator()
    basis, _ = np.linalg.qr(gen.standard_normal((dim, n_classes)))
    means = (separation / np.sqrt(2.0)) * basis.T
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = means[labels] + gen.standard_normal((labels.size, dim))
    order = gen.permutation(labels.size)
    x, labels = x[order].reshape((labels.size,) + shape), labels[order]
    n_train = int(round(train_fraction * labels.size))
    return LabeledDataset(
        train=Batch(x[:n_train], labels[:n_train]),
        test=Batch(x[n_train:], labels[n_train:]),
        n_classes=n_classes,
        meta={
            "kind": "blobs",
            "seed": rng.seed,
            "n_classes": n_classes,
            "n_per_class": n_per_class,
            "shape": list(shape),
            "separation": separation,
        },
    )


def read_idx(path: str | Path, expect_magic: int) -> np.ndarray:
    """Parse one IDX file: big-endian magic, big-endian uint32 dims, raw uint8 data."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("file too short for magic number", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}", 0)
    ndim = 3 if expect_magic == IDX_IMAGES_MAGIC else 1
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if any(d == 0 for d in dims):
        raise IdxFormatError(f"zero-sized dimension in {dims}", 4)
    size = int(np.prod(dims))
    if len(raw) != header + size:
        raise IdxFormatError(f"expected {size} data bytes, found {len(raw) - header}", min(len(raw), header + size))
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _read_split(images: Path, labels: Path, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    x = read_idx(images, IDX_IMAGES_MAGIC)
    y = read_idx(labels, IDX_LABELS_MAGIC)
    if x.shape[0] != y.shape[0]:
        raise IdxFormatError(f"{x.shape[0]} images but {y.shape[0]} labels", 4)
    bad = np.flatnonzero(y >= n_classes)
    if bad.size:
        raise IdxFormatError(f"label {int(y[bad[0]])} >= n_classes={n_classes}", 8 + int(bad[0]))
    return x.astype(np.float64)[:, None, :, :] / 255.0, y.astype(np.int64)


def load_idx_images(path: str | Path, n_classes: int = 10, normalize: bool = True) -> LabeledDataset:
    """Load ``train-images.idx``/``train-labels.idx``/``test-images.idx``/``test-labels.idx`` from a directory.

    Pixels are scaled to [0, 1]; with ``normalize`` the global mean and std of
    the training images are then applied to both splits.
    """
    root = Path(path)
    xtr, ytr = _read_split(root / "train-images.idx", root / "train-labels.idx", n_classes)
    xte, yte = _read_split(root / "test-images.idx", root / "test-labels.idx", n_classes)
    meta: dict[str, Any] = {"kind": "idx", "path": str(root), "n_classes": n_classes}
    if normalize:
        mean, std = float(xtr.mean()), float(xtr.std())
        std = std if std > 0 else 1.0
        xtr, xte = (xtr - mean) / std, (xte - mean) / std
        meta.update(mean=mean, std=std)
    return LabeledDataset(Batch(xtr, ytr), Batch(xte, yte), n_classes, meta=meta)


def corrupt_labels(ds: LabeledDataset, fraction: float, rng: RngStream) -> LabeledDataset:
    """Give ``floor(fraction * n)`` random train samples a uniformly drawn wrong label.

    Inputs and the test split are shared unchanged; the returned mask marks
    the corrupted samples.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(ds.train)
    k = int(np.floor(fraction * n))
    gen = rng.generator()
    idx = gen.choice(n, size=k, replace=False)
    labels = ds.train.labels.copy()
    labels[idx] = (labels[idx] + gen.integers(1, ds.n_classes, size=k)) % ds.n_classes
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    meta = dict(ds.meta, corruption=fraction, corruption_seed=rng.seed)
    return LabeledDataset(Batch(ds.train.inputs, labels), ds.test, ds.n_classes, corrupted=mask, meta=meta)
