"""Binary entropy, its gradient, and gradient-magnitude bounds.

Three bound families on |dH/dx| are provided, from weakest to strongest:
the strong-concavity bound ``4|x - x0|`` (x0 the maximum-entropy point),
the independent-connections bound built from logit differences, and
feasibility boxes derived from the mutual constraints between connection
and activation marginals. All values are in nats.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import stream
from ._validation import check_probability_vector
from .simulate import StimulationDesign

__all__ = [
    "EntropyKind",
    "h2",
    "h2_grad",
    "sc_lower_bound_w",
    "sc_lower_bound_a",
    "indep_bound_a",
    "quadratic_entropy",
    "quadratic_entropy_grad",
    "feasibility_box_w",
    "feasibility_box_a",
    "strong_concavity_witness",
]

ENTROPY_KINDS = ("exact", "quadratic", "none")


class EntropyKind:
    """Validated entropy-regularizer choice: exact, quadratic(sigma), or none."""

    def __init__(self, variant: str = "quadratic", sigma: float = 0.1):
        if variant not in ENTROPY_KINDS:
            raise ValueError(f"variant must be one of {ENTROPY_KINDS}, got {variant!r}")
        if variant == "quadratic" and not (0.0 < sigma <= 4.0):
            raise ValueError(f"sigma must lie in (0, 4], got {sigma!r}")
        self.variant = variant
        self.sigma = float(sigma)

    def __repr__(self):
        if self.variant == "quadratic":
            return f"EntropyKind('quadratic', sigma={self.sigma})"
        return f"EntropyKind({self.variant!r})"


def h2(x):
    """Entropy of a binary variable with mean x, with 0 log 0 = 0."""
    arr = check_probability_vector(x, "x")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.where(arr > 0, arr * np.log(arr), 0.0) - np.where(
            arr < 1, (1.0 - arr) * np.log1p(-arr), 0.0
        )
    return out if out.ndim else float(out)


def h2_grad(x):
    """d/dx of the binary entropy: log((1-x)/x). Undefined at the endpoints."""
    arr = np.asarray(x, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise ValueError("gradient is infinite at 0 and 1; x must lie in (0, 1)")
    out = np.log1p(-arr) - np.log(arr)
    return out if out.ndim else float(out)


def sc_lower_bound_w(w):
    """Strong-concavity lower bound 4|w - 1/2| <= |h2_grad(w)|."""
    arr = check_probability_vector(w, "w")
    out = 4.0 * np.abs(arr - 0.5)
    return out if out.ndim else float(out)


def _log_epsilon(w_stim) -> float:
    arr = check_probability_vector(w_stim, "w_stim", open_interval=True)
    # product of stimulated-connection means, accumulated in log space
    return float(np.sum(np.log(arr)))


def sc_lower_bound_a(a: float, w_stim) -> float:
    """Strong-concavity bound 4|a - (1 - eps)| with eps the product of w_stim."""
    a = float(check_probability_vector(a, "a"))
    eps = math.exp(_log_epsilon(w_stim))
    return 4.0 * abs(a - (1.0 - eps))


def indep_bound_a(a: float, w_stim) -> float:
    """Independent-connections bound |logit(a) - logit(1 - eps)|.

    ``eps`` is the probability that none of the stimulated connections is
    present under an independent model; degenerate eps raises.
    """
    a = float(check_probability_vector(a, "a", open_interval=True))
    log_eps = _log_epsilon(w_stim)
    eps = math.exp(log_eps)
    if eps <= 0.0 or eps >= 1.0:
        raise ValueError("product of w_stim is degenerate")
    logit_a = math.log(a / (1.0 - a))
    logit_ref = math.log((1.0 - eps) / eps)
    return abs(logit_a - logit_ref)


def quadratic_entropy(w, a, design: StimulationDesign, sigma: float = 4.0) -> float:
    """Quadratic upper surrogate of the joint entropy around its maximum.

    Touches ``n log 2`` at w = 1/2, a_t = 1 - (1/2)^{|S_t|} and curves down
    with strength sigma/2 in every coordinate.
    """
    w = check_probability_vector(w, "w")
    a = check_probability_vector(a, "a")
    a0 = 1.0 - 0.5 ** design.sizes.astype(float)
    return float(
        design.n * math.log(2.0)
        - 0.5 * sigma * np.sum((w - 0.5) ** 2)
        - 0.5 * sigma * np.sum((a - a0) ** 2)
    )


def quadratic_entropy_grad(
    w, a, design: StimulationDesign, sigma: float = 4.0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the quadratic surrogate: (-sigma (w - 1/2), -sigma (a - a0))."""
    w = check_probability_vector(w, "w")
    a = check_probability_vector(a, "a")
    a0 = 1.0 - 0.5 ** design.sizes.astype(float)
    return -sigma * (w - 0.5), -sigma * (a - a0)


def feasibility_box_w(
    i: int, w, a, design: StimulationDesign
) -> tuple[float, float]:
    """Interval for w_i implied by the activation constraints of its tests.

    Lower bound: some test's activation cannot be explained by the other
    stimulated connections. Upper bound: w_i can never exceed any activation
    marginal of a test containing it. Neurons never stimulated get (0, 1).
    """
    w = check_probability_vector(w, "w")
    a = check_probability_vector(a, "a")
    lo, hi = 0.0, 1.0
    for t, s in enumerate(design.tests):
        if i not in s:
            continue
        others = s[s != i]
        lo = max(lo, float(a[t] - w[others].sum()))
        hi = min(hi, float(a[t]))
    return lo, hi


def feasibility_box_a(t: int, w, design: StimulationDesign) -> tuple[float, float]:
    """Interval for a_t: [max stimulated w, min(1, sum of stimulated w)]."""
    w = check_probability_vector(w, "w")
    s = design.tests[t]
    return float(w[s].max()), float(min(1.0, w[s].sum()))


def strong_concavity_witness(
    n: int, natural_params=None, seed: int | None = None
) -> float:
    """Minimum eigenvalue of -grad^2 H for an enumerated Boolean family.

    Builds the exponential family over n binary variables with the given
    natural parameters (drawn from a seeded stream when omitted), computes
    the covariance of the sufficient statistics by exhaustive enumeration of
    the 2**n states, and returns the smallest eigenvalue of the inverse
    covariance. The entropy is 4-strongly concave, so the result is >= 4 up
    to numerical tolerance.
    """
    if n < 1 or n > 10:
        raise ValueError("n must lie in [1, 10] for exhaustive enumeration")
    if natural_params is None:
        rng = stream(0 if seed is None else seed, "witness")
        natural_params = rng.normal(0.0, 2.0, size=n)
    params = np.asarray(natural_params, dtype=float)
    if params.shape != (n,):
        raise ValueError(f"natural_params must have shape ({n},)")
    states = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(float)
    logp = states @ params
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    mean = p @ states
    cov = (states * p[:, None]).T @ states - np.outer(mean, mean)
    max_eig = float(np.linalg.eigvalsh(cov)[-1])
    return 1.0 / max_eig
