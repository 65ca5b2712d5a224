"""Batch inference of connection marginals by dual decomposition.

For one output neuron the relaxed problem couples connection marginals
``w`` and per-test activation marginals ``a`` through the box constraints
``w_i <= a_t <= sum of stimulated w``. Introducing nonnegative multipliers
``eta`` (one per test, for the sum constraint) and ``nu`` (one per
stimulated (test, neuron) pair) decouples every primal variable, so each
iteration alternates a closed-form primal solve with a projected gradient
step on the multipliers:

    a*_t = f(c_t - eta_t + sum_i nu_ti)          (exact entropy)
    w*_i = f(mu_i + sum_t eta_t - sum_t nu_ti)
    eta_t <- [eta_t - step (sum_i w*_i - a*_t)]_+
    nu_ti <- [nu_ti + step (w*_i - a*_t)]_+

with ``f`` the logistic function, or the truncated-linear analogues when
the entropy is replaced by its quadratic surrogate. Problems for different
output neurons are independent and are solved as rows of one batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import check_outcomes, check_stim_matrix
from .entropy import ENTROPY_KINDS
from .likelihood import coeffs, per_test_coeffs
from .simulate import NoiseSpec, StimulationDesign

__all__ = [
    "InferenceConfig",
    "PosteriorState",
    "OptimizerSlots",
    "NumericalFailure",
    "logistic",
    "primal_exact",
    "primal_quadratic",
    "dual_step",
    "fit_offline",
    "fit_all_outputs",
    "binarize",
    "save_state",
    "load_state",
    "GroupTestingDecoder",
]


class NumericalFailure(RuntimeError):
    """Raised when an iterate stops being finite."""

    def __init__(self, message: str, iteration: int | None = None, output: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.output = output


@dataclass(frozen=True)
class InferenceConfig:
    """Solver settings; the defaults are the batch recovery configuration."""

    entropy: str = "quadratic"
    sigma: float = 0.1
    mu: float | np.ndarray = 0.0
    optimizer: str = "adam"
    dual_step: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 50
    convergence_tol: float = 1e-8
    threshold: float = 0.5

    def __post_init__(self):
        if self.entropy not in ENTROPY_KINDS:
            raise ValueError(f"entropy must be one of {ENTROPY_KINDS}")
        if self.entropy == "quadratic" and not (0.0 < self.sigma <= 4.0):
            raise ValueError(f"sigma must lie in (0, 4], got {self.sigma!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")
        if self.dual_step <= 0.0:
            raise ValueError("dual_step must be positive")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")

    def mu_vector(self, n: int) -> np.ndarray:
        mu = np.asarray(self.mu, dtype=float)
        return np.full(n, float(mu)) if mu.ndim == 0 else mu


@dataclass(eq=False)
class PosteriorState:
    """Primal marginals and duals for one output neuron (or a batch of them).

    Arrays may carry a leading batch axis; ``nu`` is stored flat over the
    stimulated (test, neuron) pairs in design order.
    """

    w: np.ndarray
    a: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    iteration: int = 0

    @property
    def n_outputs(self) -> int:
        return 1 if self.w.ndim == 1 else self.w.shape[0]

    def row(self, i: int) -> "PosteriorState":
        if self.w.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return PosteriorState(self.w[i], self.a[i], self.eta[i], self.nu[i], self.iteration)


@dataclass(eq=False)
class OptimizerSlots:
    """Adam moment accumulators for the duals, allocated only on demand."""

    m_eta: np.ndarray
    v_eta: np.ndarray
    m_nu: np.ndarray
    v_nu: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, eta_shape, nu_shape) -> "OptimizerSlots":
        return cls(
            np.zeros(eta_shape), np.zeros(eta_shape), np.zeros(nu_shape), np.zeros(nu_shape)
        )


def logistic(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _primal(design, c, mu, eta, nu, entropy, sigma):
    s_a = c - eta + design.row_sum(nu)
    s_w = mu + design.col_sum(design.expand(eta) - nu)
    if entropy == "exact":
        return logistic(s_w), logistic(s_a)
    if entropy == "quadratic":
        a0 = 1.0 - 0.5 ** design.sizes.astype(float)
        a = np.clip(a0 + s_a / sigma, 0.0, 1.0)
        w = np.clip(0.5 + s_w / sigma, 0.0, 1.0)
        return w, a
    # no entropy: bang-bang solution of the linear objective, 1/2 on ties
    w = np.where(s_w > 0, 1.0, np.where(s_w < 0, 0.0, 0.5))
    a = np.where(s_a > 0, 1.0, np.where(s_a < 0, 0.0, 0.5))
    return w, a


def primal_exact(design: StimulationDesign, c, mu, eta, nu):
    """Closed-form logistic primal solutions given the duals."""
    return _primal(design, np.asarray(c, float), mu, eta, nu, "exact", 0.0)


def primal_quadratic(design: StimulationDesign, c, mu, eta, nu, sigma: float = 0.1):
    """Truncated-linear primal solutions of the quadratic surrogate."""
    if not (0.0 < sigma <= 4.0):
        raise ValueError(f"sigma must lie in (0, 4], got {sigma!r}")
    return _primal(design, np.asarray(c, float), mu, eta, nu, "quadratic", sigma)


def _dual_gradients(design, w, a):
    w_cols = w[..., design.indices]
    g_eta = design.row_sum(w_cols) - a
    g_nu = design.expand(a) - w_cols
    return g_eta, g_nu


def dual_step(
    state: PosteriorState,
    primal: tuple[np.ndarray, np.ndarray],
    step: float,
    design: StimulationDesign,
    slots: OptimizerSlots | None = None,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> PosteriorState:
    """One projected dual update from the given primal solution.

    Plain gradient descent when ``slots`` is None, otherwise the gradients
    are routed through Adam moments. Both variants project back onto the
    nonnegative orthant.
    """
    w, a = primal
    g_eta, g_nu = _dual_gradients(design, w, a)
    if slots is None:
        eta = state.eta - step * g_eta
        nu = state.nu - step * g_nu
    else:
        slots.step_count += 1
        t = slots.step_count
        slots.m_eta = beta1 * slots.m_eta + (1.0 - beta1) * g_eta
        slots.v_eta = beta2 * slots.v_eta + (1.0 - beta2) * g_eta**2
        slots.m_nu = beta1 * slots.m_nu + (1.0 - beta1) * g_nu
        slots.v_nu = beta2 * slots.v_nu + (1.0 - beta2) * g_nu**2
        mh_e = slots.m_eta / (1.0 - beta1**t)
        vh_e = slots.v_eta / (1.0 - beta2**t)
        mh_n = slots.m_nu / (1.0 - beta1**t)
        vh_n = slots.v_nu / (1.0 - beta2**t)
        eta = state.eta - step * mh_e / (np.sqrt(vh_e) + eps)
        nu = state.nu - step * mh_n / (np.sqrt(vh_n) + eps)
    np.maximum(eta, 0.0, out=eta)
    np.maximum(nu, 0.0, out=nu)
    return PosteriorState(w=w, a=a, eta=eta, nu=nu, iteration=state.iteration + 1)


def constraint_violation(design: StimulationDesign, w, a) -> float:
    """Largest violation of the coupling constraints (0 when feasible)."""
    if design.n_tests == 0:
        return 0.0
    w_cols = w[..., design.indices]
    upper = np.maximum(a - design.row_sum(w_cols), 0.0).max()
    lower = np.maximum(w_cols - design.expand(a), 0.0).max()
    return float(max(upper, lower))


def _violation_rows(design, w, a) -> np.ndarray:
    """Largest constraint violation per batch row."""
    w_cols = w[..., design.indices]
    upper = np.maximum(a - design.row_sum(w_cols), 0.0).max(axis=-1)
    lower = np.maximum(w_cols - design.expand(a), 0.0).max(axis=-1)
    return np.maximum(upper, lower)


def _fit_batch(design, c, mu, config, check_every: int = 10, init: PosteriorState | None = None):
    """Core loop; c has shape (M, T), mu shape (n,). Returns batched state.

    Rows converge independently: once a row's constraint violation drops
    below tolerance its duals freeze, so a batched fit is bitwise identical
    to fitting each row on its own. ``init`` resumes from a checkpoint's
    duals (optimizer moments reset on restart).
    """
    m = c.shape[0]
    t_count, nnz = design.n_tests, design.indices.size
    if init is not None:
        eta = np.array(init.eta, dtype=float).reshape(m, t_count).copy()
        nu = np.array(init.nu, dtype=float).reshape(m, nnz).copy()
    else:
        eta = np.zeros((m, t_count))
        nu = np.zeros((m, nnz))
    adam = config.optimizer == "adam"
    if adam:
        m_eta, v_eta = np.zeros((m, t_count)), np.zeros((m, t_count))
        m_nu, v_nu = np.zeros((m, nnz)), np.zeros((m, nnz))
    active = np.ones(m, dtype=bool)
    iterations = 0
    if t_count > 0:
        for it in range(config.max_iters):
            if not active.any():
                break
            iterations = it + 1
            idx = np.flatnonzero(active)
            w, a = _primal(design, c[idx], mu, eta[idx], nu[idx], config.entropy, config.sigma)
            w_cols = w[..., design.indices]
            g_eta = design.row_sum(w_cols) - a
            g_nu = design.expand(a) - w_cols
            if adam:
                # all active rows share the iteration count, so the bias
                # correction factor is a scalar
                m_eta[idx] = config.beta1 * m_eta[idx] + (1 - config.beta1) * g_eta
                v_eta[idx] = config.beta2 * v_eta[idx] + (1 - config.beta2) * g_eta**2
                m_nu[idx] = config.beta1 * m_nu[idx] + (1 - config.beta1) * g_nu
                v_nu[idx] = config.beta2 * v_nu[idx] + (1 - config.beta2) * g_nu**2
                bc1 = 1.0 - config.beta1 ** (it + 1)
                bc2 = 1.0 - config.beta2 ** (it + 1)
                step_eta = config.dual_step * (m_eta[idx] / bc1) / (np.sqrt(v_eta[idx] / bc2) + config.eps)
                step_nu = config.dual_step * (m_nu[idx] / bc1) / (np.sqrt(v_nu[idx] / bc2) + config.eps)
            else:
                step_eta = config.dual_step * g_eta
                step_nu = config.dual_step * g_nu
            eta[idx] = np.maximum(eta[idx] - step_eta, 0.0)
            nu[idx] = np.maximum(nu[idx] - step_nu, 0.0)
            if (it + 1) % check_every == 0 or it == config.max_iters - 1:
                if not (np.isfinite(eta[idx]).all() and np.isfinite(nu[idx]).all()):
                    bad = ~(
                        np.isfinite(eta[idx]).all(axis=-1) & np.isfinite(nu[idx]).all(axis=-1)
                    )
                    raise NumericalFailure(
                        f"non-finite duals at iteration {it + 1}",
                        iteration=it + 1,
                        output=int(idx[np.flatnonzero(bad)[0]]),
                    )
                w, a = _primal(
                    design, c[idx], mu, eta[idx], nu[idx], config.entropy, config.sigma
                )
                settled = _violation_rows(design, w, a) < config.convergence_tol
                active[idx[settled]] = False
    w, a = _primal(design, c, mu, eta, nu, config.entropy, config.sigma)
    return PosteriorState(w=w, a=a, eta=eta, nu=nu, iteration=iterations)


def fit_offline(
    design: StimulationDesign,
    y,
    noise: NoiseSpec,
    config: InferenceConfig | None = None,
    *,
    init_state: PosteriorState | None = None,
) -> PosteriorState:
    """Fit the marginals of one output neuron from its test outcomes."""
    config = config or InferenceConfig()
    y = check_outcomes(np.asarray(y).reshape(design.n_tests), design.n_tests)
    like = coeffs(noise)
    c = per_test_coeffs(like, y)[None, :].astype(float)
    mu = config.mu_vector(design.n)
    state = _fit_batch(design, c, mu, config, init=init_state)
    return state.row(0)


def fit_all_outputs(
    design: StimulationDesign,
    outcomes,
    noise: NoiseSpec,
    config: InferenceConfig | None = None,
    *,
    n_jobs: int = 1,
) -> PosteriorState:
    """Fit every output neuron independently; rows are output neurons.

    ``outcomes`` is (tests x outputs), e.g. from ``simulate.outcome_matrix``.
    Outputs are solved as row-chunks of one vectorized batch, so results are
    identical for every parallelism degree.
    """
    config = config or InferenceConfig()
    y = check_outcomes(outcomes, design.n_tests)
    if y.ndim != 2:
        raise ValueError("outcomes must be 2-D (tests x outputs)")
    like = coeffs(noise)
    c = per_test_coeffs(like, y.T).astype(float)  # (outputs, tests)
    mu = config.mu_vector(design.n)
    m = c.shape[0]
    if n_jobs == 1 or m == 1:
        return _fit_batch(design, c, mu, config)
    chunks = np.array_split(np.arange(m), n_jobs)
    chunks = [ch for ch in chunks if ch.size]
    states = Parallel(n_jobs=n_jobs)(
        delayed(_fit_batch)(design, c[ch], mu, config) for ch in chunks
    )
    return PosteriorState(
        w=np.concatenate([s.w for s in states]),
        a=np.concatenate([s.a for s in states]),
        eta=np.concatenate([s.eta for s in states]),
        nu=np.concatenate([s.nu for s in states]),
        iteration=states[0].iteration,
    )


def binarize(state_or_w, threshold: float = 0.5) -> np.ndarray:
    """Threshold marginals into a binary prediction; ties count as present."""
    w = state_or_w.w if isinstance(state_or_w, PosteriorState) else np.asarray(state_or_w)
    return (w >= threshold).astype(np.uint8)


def save_state(
    state: PosteriorState, path, *, config_hash: str = "", version: str = "", seed: int = 0
) -> None:
    """Checkpoint a fit as a flat binary archive (resumable via init_state)."""
    np.savez_compressed(
        path,
        w=state.w,
        a=state.a,
        eta=state.eta,
        nu=state.nu,
        iteration=np.array(state.iteration),
        config_hash=np.array(config_hash),
        version=np.array(version),
        seed=np.array(seed),
    )


def load_state(path) -> tuple[PosteriorState, str]:
    with np.load(path, allow_pickle=False) as data:
        state = PosteriorState(
            w=data["w"],
            a=data["a"],
            eta=data["eta"],
            nu=data["nu"],
            iteration=int(data["iteration"]),
        )
        return state, str(data["config_hash"])


class GroupTestingDecoder(BaseEstimator):
    """Estimator wrapper around the dual-decomposition fit.

    Parameters mirror :class:`InferenceConfig`; ``alpha`` and ``beta`` are
    the assumed test error rates. ``fit(X, y)`` takes a binary stimulation
    matrix (tests x neurons) and outcomes of shape (tests,) for a single
    output neuron or (tests, outputs) for a population.

    Attributes
    ----------
    marginals_ : posterior connection marginals, (neurons,) or (outputs, neurons)
    connectivity_ : thresholded binary prediction with the same shape
    state_ : the full PosteriorState
    """

    def __init__(
        self,
        alpha: float = 0.05,
        beta: float = 0.05,
        entropy: str = "quadratic",
        sigma: float = 0.1,
        mu: float = 0.0,
        optimizer: str = "adam",
        dual_step: float = 0.01,
        max_iters: int = 50,
        convergence_tol: float = 1e-8,
        threshold: float = 0.5,
        n_jobs: int = 1,
    ):
        self.alpha = alpha
        self.beta = beta
        self.entropy = entropy
        self.sigma = sigma
        self.mu = mu
        self.optimizer = optimizer
        self.dual_step = dual_step
        self.max_iters = max_iters
        self.convergence_tol = convergence_tol
        self.threshold = threshold
        self.n_jobs = n_jobs

    def _config(self) -> InferenceConfig:
        return InferenceConfig(
            entropy=self.entropy,
            sigma=self.sigma,
            mu=self.mu,
            optimizer=self.optimizer,
            dual_step=self.dual_step,
            max_iters=self.max_iters,
            convergence_tol=self.convergence_tol,
            threshold=self.threshold,
        )

    def fit(self, X, y):
        X = check_stim_matrix(X)
        design = StimulationDesign.from_matrix(X)
        y = check_outcomes(y, design.n_tests)
        noise = NoiseSpec(self.alpha, self.beta)
        if y.ndim == 1:
            state = fit_offline(design, y, noise, self._config())
        else:
            state = fit_all_outputs(design, y, noise, self._config(), n_jobs=self.n_jobs)
        self.n_features_in_ = design.n
        self.state_ = state
        self.marginals_ = state.w
        self.connectivity_ = binarize(state.w, self.threshold)
        return self

    def predict(self, X):
        """Noise-free outcome prediction for new stimulation patterns."""
        X = check_stim_matrix(X, n_neurons=self.n_features_in_)
        conn = np.atleast_2d(self.connectivity_)
        pred = (X @ conn.T > 0).astype(np.int8)  # (tests, outputs)
        return pred[:, 0] if self.marginals_.ndim == 1 else pred
