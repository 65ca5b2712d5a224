"""Outcome-likelihood coefficients and related closed forms.

Under the two-rate noise model the log-likelihood of a test outcome is an
affine function of the predicted activation bit, so the whole data
log-likelihood collapses to ``sum_t c_t * a_t + const``. The per-test
coefficient is

    c_t = log[(1-alpha)(1-beta) / (alpha beta)] * y_t - log[(1-alpha)/beta]

which is positive for positive outcomes and negative otherwise whenever the
test is better than chance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simulate import NoiseSpec, StimulationDesign

__all__ = [
    "RATE_CLIP",
    "LikelihoodCoeffs",
    "ErrorRatePriors",
    "coeffs",
    "per_test_coeffs",
    "log_likelihood",
    "misspec_consistent",
    "beta_posterior_rates",
]

# Rates are clipped into [RATE_CLIP, 0.5 - RATE_CLIP] before taking logs so
# that zero-noise specs remain usable and coefficients stay bounded.
RATE_CLIP = 1e-6


@dataclass(frozen=True)
class LikelihoodCoeffs:
    """Evidence coefficients for positive (c_plus) and negative (c_minus) outcomes."""

    c_plus: float
    c_minus: float
    alpha: float
    beta: float

    def for_outcome(self, y: int) -> float:
        return self.c_plus if y else self.c_minus


def _clipped(noise: NoiseSpec, clip: bool) -> tuple[float, float]:
    if clip:
        lo, hi = RATE_CLIP, 0.5 - RATE_CLIP
        return min(max(noise.alpha, lo), hi), min(max(noise.beta, lo), hi)
    if noise.alpha <= 0.0 or noise.beta <= 0.0:
        raise ValueError("zero error rates give infinite coefficients; enable clipping")
    return noise.alpha, noise.beta


def coeffs(noise: NoiseSpec, *, clip: bool = True) -> LikelihoodCoeffs:
    """Evidence coefficients for the assumed noise rates.

    c_plus = log[(1-beta)/alpha] and c_minus = -log[(1-alpha)/beta]; both in
    nats. With ``clip=False`` zero rates raise instead of being clipped.
    """
    alpha, beta = _clipped(noise, clip)
    c_plus = math.log((1.0 - alpha) * (1.0 - beta) / (alpha * beta)) - math.log(
        (1.0 - alpha) / beta
    )
    c_minus = -math.log((1.0 - alpha) / beta)
    return LikelihoodCoeffs(c_plus=c_plus, c_minus=c_minus, alpha=alpha, beta=beta)


def per_test_coeffs(like: LikelihoodCoeffs, y: np.ndarray) -> np.ndarray:
    """Map outcome bits to their evidence coefficients (vectorized)."""
    return np.where(np.asarray(y) == 1, like.c_plus, like.c_minus)


def log_likelihood(
    w, design: StimulationDesign, y, noise: NoiseSpec, *, clip: bool = True
) -> float:
    """Exact data log-likelihood of a binary connectivity hypothesis.

    Includes all outcome-independent constants, so exponentiating and
    normalizing over hypotheses yields proper posterior probabilities.
    """
    w = np.asarray(w)
    y = np.asarray(y)
    if w.shape != (design.n,):
        raise ValueError(f"w must have shape ({design.n},)")
    if y.shape != (design.n_tests,):
        raise ValueError(f"y must have shape ({design.n_tests},)")
    if design.n_tests == 0:
        return 0.0
    alpha, beta = _clipped(noise, clip)
    a = np.array([w[s].max() if s.size else 0 for s in design.tests], dtype=float)
    t = design.n_tests
    return float(
        t * math.log(1.0 - alpha)
        - math.log((1.0 - alpha) / alpha) * y.sum()
        - math.log((1.0 - alpha) / beta) * a.sum()
        + math.log((1.0 - alpha) * (1.0 - beta) / (alpha * beta)) * (y * a).sum()
    )


def misspec_consistent(true_noise: NoiseSpec, assumed_noise: NoiseSpec) -> bool:
    """Whether recovery stays consistent under the assumed (primed) rates.

    True iff (1-alpha)/alpha > log[(1-beta')/alpha'] / log[(1-alpha')/beta']
    > beta/(1-beta), the condition under which the large-sample likelihood
    keeps its optimum at the true support size regardless of the assumed
    coefficients.
    """
    alpha, beta = _clipped(true_noise, True)
    alpha_p, beta_p = _clipped(assumed_noise, True)
    ratio = math.log((1.0 - beta_p) / alpha_p) / math.log((1.0 - alpha_p) / beta_p)
    return (1.0 - alpha) / alpha > ratio > beta / (1.0 - beta)


@dataclass(frozen=True)
class ErrorRatePriors:
    """Beta pseudo-counts for the false-positive and false-negative rates."""

    phi_plus: float
    phi_minus: float
    varphi_plus: float
    varphi_minus: float

    def __post_init__(self):
        for name in ("phi_plus", "phi_minus", "varphi_plus", "varphi_minus"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


def beta_posterior_rates(
    priors: ErrorRatePriors, counts: tuple[float, float, float, float]
) -> tuple[float, float]:
    """Posterior means of the error rates given confusion counts.

    ``counts`` is (n_fp, n_tn, n_fn, n_tp); all must be nonnegative.
    """
    n_fp, n_tn, n_fn, n_tp = counts
    if min(n_fp, n_tn, n_fn, n_tp) < 0:
        raise ValueError("counts must be nonnegative")
    alpha_bar = (priors.phi_plus + n_fp) / (priors.phi_plus + priors.phi_minus + n_fp + n_tn)
    beta_bar = (priors.varphi_plus + n_fn) / (
        priors.varphi_plus + priors.varphi_minus + n_fn + n_tp
    )
    return float(alpha_bar), float(beta_bar)
