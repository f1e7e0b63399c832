"""Dense numeric primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects in float64. Randomness goes
through :class:`RngStream`, a stateless (seed, stream key) pair that always
produces the same sample sequence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

_EPS = float(np.finfo(np.float64).eps)

__all__ = [
    "RngStream",
    "float_key",
    "gaussian_sample",
    "frobenius_norm",
    "spectral_norm_dense",
    "PowerIteration",
    "conv_singular_values",
    "flatten_params",
]


def float_key(x: float) -> int:
    """Map a float to its IEEE-754 bit pattern, usable as an RNG stream key."""
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, key)``.

    The stream is stateless: :meth:`generator` returns a fresh generator
    positioned at the start of the sequence every time. Sub-streams for
    independent tasks are derived with :meth:`child`, so parallel work never
    shares a generator.
    """

    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if isinstance(self.key, int):
            object.__setattr__(self, "key", (self.key,))
        object.__setattr__(self, "key", tuple(int(k) & 0xFFFFFFFFFFFFFFFF for k in self.key))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def gaussian_sample(shape: Sequence[int] | int, sigma: float, rng: RngStream | np.random.Generator) -> np.ndarray:
    """I.i.d. ``N(0, sigma^2)`` samples of the given shape.

    An :class:`RngStream` always yields the same tensor; pass a
    ``numpy.random.Generator`` to draw successive samples from one stream.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    gen = _as_generator(rng)
    if sigma == 0:
        return np.zeros(shape)
    return sigma * gen.standard_normal(shape)


def frobenius_norm(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def flatten_params(tensors: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate parameter tensors into one flat vector."""
    if not tensors:
        return np.zeros(0)
    return np.concatenate([np.ravel(t) for t in tensors])


class PowerIteration(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm_dense(
    m: np.ndarray,
    max_iters: int = 1000,
    tol: float = 1e-10,
    rng: RngStream | None = None,
) -> PowerIteration:
    """Largest singular value of a matrix by power iteration on ``m.T @ m``.

    Iteration stops once successive estimates differ by less than ``tol``
    relatively and the extrapolated remaining error is below ``tol`` too. If ``max_iters`` is exhausted the best estimate is returned
    with ``converged=False``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a nonempty matrix, got shape {m.shape}")
    gen = (rng or RngStream(0)).generator()
    v = gen.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    estimate, prev_step = 0.0, 0.0
    for it in range(1, max_iters + 1):
        mv = m @ v
        new_estimate = float(np.linalg.norm(mv))
        if new_estimate == 0.0:
            # v fell in the null space; the matrix may still be nonzero
            if not np.any(m):
                return PowerIteration(0.0, True, it)
            v = gen.standard_normal(m.shape[1])
            v /= np.linalg.norm(v)
            continue
        w = m.T @ mv
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return PowerIteration(new_estimate, True, it)
        v = w / wn
        step = abs(new_estimate - estimate)
        # steps shrink geometrically, so the remaining error is about step * r / (1 - r)
        ratio = step / prev_step if prev_step > 0 else 1.0
        remaining = step * ratio / (1.0 - ratio) if ratio < 1.0 else step
        if step <= 4 * _EPS * new_estimate:
            return PowerIteration(new_estimate, True, it)
        if step <= tol * new_estimate and remaining <= tol * new_estimate:
            # estimates rise monotonically toward the top singular value; add the extrapolated tail
            return PowerIteration(new_estimate + remaining, True, it)
        estimate, prev_step = new_estimate, step
    return PowerIteration(estimate, False, max_iters)


def conv_singular_values(kernel: np.ndarray, input_size: int) -> np.ndarray:
    """All singular values of a circular 2-D convolution, sorted descending.

    ``kernel`` has layout ``[c_out, c_in, q, q]``. The kernel is embedded in an
    ``N x N`` grid, transformed with a 2-D FFT per channel pair, and the
    ``c_out x c_in`` matrix at each of the ``N^2`` frequencies is decomposed.
    The result has ``N^2 * min(c_in, c_out)`` entries; the first one is the
    operator norm. Stride is ignored: this is the stride-1 circular operator.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be [c_out, c_in, q, q], got shape {kernel.shape}")
    c_out, c_in, qh, qw = kernel.shape
    n = int(input_size)
    if qh > n or qw > n:
        raise ValueError(f"kernel size {qh}x{qw} exceeds input size {n}")
    grid = np.zeros((c_out, c_in, n, n))
    grid[:, :, :qh, :qw] = kernel
    transfer = np.fft.fft2(grid, axes=(2, 3))
    per_freq = np.transpose(transfer, (2, 3, 0, 1))
    sv = np.linalg.svd(per_freq, compute_uv=False)
    return np.sort(sv.ravel())[::-1]
