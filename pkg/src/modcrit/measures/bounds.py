"""PAC-Bayes and deterministic generalization bounds built on module criticality."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass
class BoundInputs:
    """Per-module quantities plus global sample size and confidence.

    ``distance`` is ``||theta_i^F - theta_i^0||_Fr``. The deterministic bound
    also needs ``gamma`` (margin), ``input_bound`` (B), ``image_size`` (N),
    ``kernel_size`` (q_i), ``channels`` (c_i, output channels) and
    ``spectral`` (``||theta_i^alpha||_2``).
    """

    k: Sequence[int]
    distance: Sequence[float]
    alpha: Sequence[float]
    sigma: Sequence[float] | None
    m: int
    delta: float
    gamma: float | None = None
    input_bound: float | None = None
    image_size: int | None = None
    kernel_size: Sequence[int] | None = None
    channels: Sequence[int] | None = None
    spectral: Sequence[float] | None = None

    def __post_init__(self) -> None:
        d = len(self.k)
        if len(self.distance) != d or len(self.alpha) != d or (self.sigma is not None and len(self.sigma) != d):
            raise ValueError("per-module sequences must all have length d")
        if self.m < 2:
            raise ValueError(f"sample count m must be >= 2, got {self.m}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if any(k < 1 for k in self.k):
            raise ValueError("parameter counts must be positive")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha):
            raise ValueError("alpha values must be in [0, 1]")
        if self.sigma is not None and any(not 0.0 < s <= 1.0 for s in self.sigma):
            raise ValueError("sigma values must be in (0, 1]")

    @property
    def d(self) -> int:
        return len(self.k)


def _covering_term(m: int, k: int, spread_sq: float, shift_sq: float) -> float:
    """``log(7m + 2 log(k / (k*sigma^2 + alpha^2 ||delta||^2)))`` for one module."""
    inner = 7 * m + 2 * math.log(k / (k * spread_sq + shift_sq))
    if inner <= 0:
        raise ValueError("prior covering term undefined: 7m + 2 log(...) <= 0")
    return math.log(inner)


def pac_bayes_terms(inputs: BoundInputs, empirical_perturbed_loss: float) -> dict[str, float]:
    """Both forms of the criticality PAC-Bayes bound.

    ``bound`` uses the compact statement (a 1/4 factor on the KL sum and the
    covering sum as the O(1) term). ``bound_expanded`` follows the full
    derivation: KL <= 1/2 sum(1 + k_i log(...)), covering term doubled, and a
    2(m-1) denominator.
    """
    if inputs.sigma is None:
        raise ValueError("PAC-Bayes bound needs sigma values")
    kl_sum = 0.0
    covering = 0.0
    for k, dist, a, s in zip(inputs.k, inputs.distance, inputs.alpha, inputs.sigma):
        shift_sq = (a * dist) ** 2
        kl_sum += k * math.log1p(shift_sq / (k * s * s))
        covering += _covering_term(inputs.m, k, s * s, shift_sq)
    log_conf = math.log(inputs.m / inputs.delta)
    compact = 0.25 * kl_sum + log_conf + covering
    kl_expanded = 0.5 * (inputs.d + kl_sum)
    expanded = kl_expanded + log_conf + 2.0 * covering
    return {
        "kl_sum": kl_sum,
        "covering": covering,
        "log_m_over_delta": log_conf,
        "complexity": math.sqrt(compact / (inputs.m - 1)),
        "bound": empirical_perturbed_loss + math.sqrt(compact / (inputs.m - 1)),
        "kl_expanded": kl_expanded,
        "bound_expanded": empirical_perturbed_loss + math.sqrt(expanded / (2 * (inputs.m - 1))),
    }


def pac_bayes_bound(inputs: BoundInputs, empirical_perturbed_loss: float) -> float:
    """Perturbed train loss plus the square-root complexity term."""
    return pac_bayes_terms(inputs, empirical_perturbed_loss)["bound"]


def kl_gaussian_diag(delta_mean_sq: float, k: int, sigma_q: float, sigma_p: float) -> float:
    """KL between isotropic Gaussians ``N(mu_Q, sigma_q^2 I_k)`` and ``N(mu_P, sigma_p^2 I_k)``.

    ``delta_mean_sq`` is ``||mu_Q - mu_P||^2``.
    """
    if sigma_q <= 0 or sigma_p <= 0:
        raise ValueError("sigmas must be positive")
    sq, sp = sigma_q * sigma_q, sigma_p * sigma_p
    return 0.5 * ((k * sq + delta_mean_sq) / sp - k + k * math.log(sp / sq))


@dataclass
class DeterministicBound:
    bound: float
    sigma_budget: list[float]
    complexity: float
    eps2: float


def deterministic_bound(inputs: BoundInputs, margin_train_error: float) -> DeterministicBound:
    """Norm-based bound for convolutional networks, plus each module's noise budget.

    For module ``i`` with ``P_i`` the product of the other modules' spectral norms::

        sigma_i = gamma / (32 e d B P_i q_i sqrt(c_i log(4 d N^2)))
        term_i  = k_i log(1 + (32 e d B alpha_i ||delta_i|| P_i sqrt(log(4 d N^2)))^2 / (c_i gamma^2))
        eps2    = 1 + sum_i log(7m + 2 log(k_i / (k_i sigma_i^2 + alpha_i^2 ||delta_i||^2)))
    """
    gamma = inputs.gamma
    if gamma is None or gamma <= 0:
        raise ValueError(f"margin gamma must be positive, got {gamma}")
    if not inputs.input_bound or inputs.input_bound <= 0:
        raise ValueError("input norm bound B must be positive")
    if inputs.image_size is None or inputs.kernel_size is None or inputs.channels is None or inputs.spectral is None:
        raise ValueError("deterministic bound needs image_size, kernel_size, channels and spectral norms")
    d, m, B, N = inputs.d, inputs.m, inputs.input_bound, inputs.image_size
    log_term = math.log(4 * d * N * N)
    budgets = []
    total = 0.0
    eps2 = 1.0
    for i in range(d):
        others = math.prod(s for j, s in enumerate(inputs.spectral) if j != i)
        k, c, q = inputs.k[i], inputs.channels[i], inputs.kernel_size[i]
        shift = inputs.alpha[i] * inputs.distance[i]
        sigma = gamma / (32 * math.e * d * B * others * q * math.sqrt(c * log_term))
        budgets.append(sigma)
        ratio = (32 * math.e * d * B * shift * others * math.sqrt(log_term)) ** 2 / (c * gamma * gamma)
        total += k * math.log1p(ratio)
        eps2 += _covering_term(m, k, sigma * sigma, shift * shift)
    complexity = math.sqrt((total + math.log(m / inputs.delta) + eps2) / (m - 1))
    return DeterministicBound(margin_train_error + complexity, budgets, complexity, eps2)
