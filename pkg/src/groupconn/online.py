"""Streaming inference with a sliding window of live dual variables.

Each arriving test appends fresh multipliers and triggers a few plain
gradient iterations restricted to the most recent ``tau`` tests. When a
test leaves the window its multipliers are folded into a per-connection
cache of dual column sums and never change again, so per-test cost and
optimizer memory stay bounded by the window size instead of growing with
the experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import stream
from ._validation import check_outcomes
from .entropy import ENTROPY_KINDS
from .likelihood import coeffs, per_test_coeffs
from .simulate import GroundTruthNetwork, NoiseSpec, simulate_outcomes

__all__ = ["OnlineConfig", "OnlineSession", "FrozenTest", "run_closed_loop"]

AGGREGATES = ("mean", "min", "random-output")


@dataclass(frozen=True)
class OnlineConfig:
    """Settings for streaming inference (plain gradient descent only)."""

    entropy: str = "quadratic"
    sigma: float = 0.1
    mu: float = 0.0
    dual_step: float = 5e-4
    steps_per_test: int = 3
    tau: int | None = 10
    threshold: float = 0.5
    margin: float | None = None
    max_tests: int | None = None
    aggregate: str = "mean"

    def __post_init__(self):
        if self.entropy not in ENTROPY_KINDS:
            raise ValueError(f"entropy must be one of {ENTROPY_KINDS}")
        if self.entropy == "quadratic" and not (0.0 < self.sigma <= 4.0):
            raise ValueError(f"sigma must lie in (0, 4], got {self.sigma!r}")
        if self.dual_step <= 0.0 or self.steps_per_test < 0:
            raise ValueError("dual_step must be positive and steps_per_test nonnegative")
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be >= 1 (or None for an unbounded window)")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}")


@dataclass(eq=False)
class FrozenTest:
    """Immutable snapshot of a test's multipliers at freezing time."""

    index: int
    stim: np.ndarray
    eta: np.ndarray  # (outputs,)
    nu: np.ndarray  # (outputs, |stim|)


class _Window:
    """Live tests packed into flat CSR-style arrays for vectorized steps."""

    def __init__(self, m: int):
        self.m = m
        self.stims: list[np.ndarray] = []
        self.indices_list: list[int] = []
        self.c = np.zeros((m, 0))
        self.eta = np.zeros((m, 0))
        self.nu = np.zeros((m, 0))
        self._rebuild()

    def __len__(self) -> int:
        return len(self.stims)

    def _rebuild(self) -> None:
        self.sizes = np.array([s.size for s in self.stims], dtype=np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(self.sizes)]) if len(self.stims) else np.zeros(1, np.int64)
        self.flat = (
            np.concatenate(self.stims) if self.stims else np.zeros(0, dtype=np.int64)
        )
        # local column index for every flat entry
        self.cols, self.pos = np.unique(self.flat, return_inverse=True)
        order = np.argsort(self.pos, kind="stable")
        self.col_order = order
        sorted_pos = self.pos[order]
        self.col_starts = (
            np.concatenate([[0], np.flatnonzero(np.diff(sorted_pos)) + 1])
            if sorted_pos.size
            else np.zeros(0, np.int64)
        )
        self.a_center = 1.0 - 0.5 ** self.sizes.astype(float)

    def append(self, stim: np.ndarray, c_t: np.ndarray, index: int) -> None:
        self.stims.append(stim)
        self.indices_list.append(index)
        m = self.m
        self.c = np.concatenate([self.c, c_t[:, None]], axis=1)
        self.eta = np.concatenate([self.eta, np.zeros((m, 1))], axis=1)
        self.nu = np.concatenate([self.nu, np.zeros((m, stim.size))], axis=1)
        self._rebuild()

    def pop_oldest(self) -> FrozenTest:
        size = self.stims[0].size
        frozen = FrozenTest(
            index=self.indices_list.pop(0),
            stim=self.stims.pop(0),
            eta=self.eta[:, 0].copy(),
            nu=self.nu[:, :size].copy(),
        )
        self.c = self.c[:, 1:].copy()
        self.eta = self.eta[:, 1:].copy()
        self.nu = self.nu[:, size:].copy()
        self._rebuild()
        return frozen

    def row_sum(self, flat: np.ndarray) -> np.ndarray:
        if not self.stims:
            return np.zeros((self.m, 0))
        return np.add.reduceat(flat, self.indptr[:-1], axis=-1)

    def col_sum_local(self, flat: np.ndarray) -> np.ndarray:
        """Sum flat per-(test, member) values into the local column set.

        Every local column owns at least one flat entry, so the reduceat
        groups are exactly the local columns in ascending order.
        """
        if not self.flat.size:
            return np.zeros(flat.shape[:-1] + (0,))
        return np.add.reduceat(flat[..., self.col_order], self.col_starts, axis=-1)

    def expand(self, per_test: np.ndarray) -> np.ndarray:
        return np.repeat(per_test, self.sizes, axis=-1)

    @property
    def live_slot_count(self) -> int:
        return int(len(self.stims) + self.sizes.sum())


class OnlineSession:
    """Streaming state for all output neurons of one preparation.

    The session tracks, per output, the cache of frozen dual column sums
    (one float per potential connection) plus the live window's
    multipliers. Marginals are recomputed from those sums on demand.
    """

    def __init__(
        self,
        n_inputs: int,
        n_outputs: int,
        noise: NoiseSpec,
        config: OnlineConfig | None = None,
        *,
        keep_frozen: bool = False,
        dtype=np.float64,
    ):
        self.n = int(n_inputs)
        self.m = int(n_outputs)
        self.config = config or OnlineConfig()
        self._like = coeffs(noise)
        self._frozen_colsum = np.zeros((self.m, self.n), dtype=dtype)
        self._window = _Window(self.m)
        self._uncertainty = np.full(self.n, abs(self._w_scalar(0.0) - 0.5), dtype=float)
        self.n_tests = 0
        self.keep_frozen = keep_frozen
        self.frozen_archive: list[FrozenTest] = []
        self.stopped_reason: str | None = None

    # -- primal maps -------------------------------------------------------
    def _w_from_sums(self, sums):
        cfg = self.config
        s = np.asarray(sums, dtype=float) + cfg.mu
        if cfg.entropy == "exact":
            return _sigmoid(s)
        if cfg.entropy == "quadratic":
            return np.clip(0.5 + s / cfg.sigma, 0.0, 1.0)
        return np.where(s > 0, 1.0, np.where(s < 0, 0.0, 0.5))

    def _w_scalar(self, value: float) -> float:
        return float(self._w_from_sums(np.array([value]))[0])

    def _a_from_args(self, args, a_center):
        cfg = self.config
        if cfg.entropy == "exact":
            return _sigmoid(args)
        if cfg.entropy == "quadratic":
            return np.clip(a_center + args / cfg.sigma, 0.0, 1.0)
        return np.where(args > 0, 1.0, np.where(args < 0, 0.0, 0.5))

    # -- bookkeeping -------------------------------------------------------
    @property
    def frozen_boundary(self) -> int:
        """Tests below this index have immutable duals."""
        return self.n_tests - len(self._window)

    @property
    def live_slots(self) -> int:
        """Live optimizer floats per output: one eta plus |stim| nu per test."""
        return self._window.live_slot_count

    def _fold(self, test: FrozenTest) -> None:
        # fold a frozen test's contribution into the dual column-sum cache
        np.add.at(self._frozen_colsum.T, test.stim, test.eta[None, :] - test.nu.T)
        if self.keep_frozen:
            self.frozen_archive.append(test)

    def _live_colsum_local(self) -> np.ndarray:
        w = self._window
        return w.col_sum_local(w.expand(w.eta) - w.nu)

    def _colsum(self, cols: np.ndarray) -> np.ndarray:
        """Total dual column sums (frozen + live) for the given columns."""
        out = self._frozen_colsum[:, cols].astype(float, copy=True)
        w = self._window
        if w.flat.size:
            live = self._live_colsum_local()
            local_of = {int(c): k for k, c in enumerate(w.cols)}
            for k, col in enumerate(cols):
                j = local_of.get(int(col))
                if j is not None:
                    out[:, k] += live[:, j]
        return out

    # -- core operations ----------------------------------------------------
    def ingest_test(self, stim, y) -> "OnlineSession":
        """Append one test and run the configured live-window iterations."""
        stim = np.sort(np.asarray(stim, dtype=np.int64).ravel())
        if stim.size == 0 or stim.min() < 0 or stim.max() >= self.n:
            raise ValueError("invalid stimulation set")
        if np.unique(stim).size != stim.size:
            raise ValueError("duplicate indices in the stimulation set")
        y = check_outcomes(np.asarray(y).reshape(1, -1), 1)[0]
        if y.shape != (self.m,):
            raise ValueError(f"expected {self.m} outcomes, got {y.shape}")
        c_t = per_test_coeffs(self._like, y).astype(float)
        self._window.append(stim, c_t, self.n_tests)
        self.n_tests += 1
        touched = self._window.cols.copy()
        if self.config.tau is not None and len(self._window) > self.config.tau:
            self._fold(self._window.pop_oldest())
        self._iterate_window()
        self._refresh_uncertainty(touched)
        return self

    def _iterate_window(self) -> None:
        cfg = self.config
        win = self._window
        if not len(win) or cfg.steps_per_test == 0:
            return
        frozen_local = self._frozen_colsum[:, win.cols].astype(float, copy=False)
        for _ in range(cfg.steps_per_test):
            s_w = frozen_local + self._live_colsum_local()
            w_local = self._w_from_sums(s_w)
            w_flat = w_local[:, win.pos]
            a = self._a_from_args(win.c - win.eta + win.row_sum(win.nu), win.a_center)
            g_eta = win.row_sum(w_flat) - a
            g_nu = win.expand(a) - w_flat
            win.eta = np.maximum(win.eta - cfg.dual_step * g_eta, 0.0)
            win.nu = np.maximum(win.nu - cfg.dual_step * g_nu, 0.0)

    def _refresh_uncertainty(self, cols: np.ndarray) -> None:
        if cols.size == 0:
            return
        w = self._w_from_sums(self._colsum(cols))
        dist = np.abs(w - 0.5)
        if self.config.aggregate == "min":
            self._uncertainty[cols] = dist.min(axis=0)
        else:  # mean (random-output aggregation samples at selection time)
            self._uncertainty[cols] = dist.mean(axis=0)

    def marginals(self) -> np.ndarray:
        """Current posterior marginals, shape (outputs, inputs)."""
        return self._w_from_sums(self._colsum(np.arange(self.n)))

    def predict(self) -> np.ndarray:
        return (self.marginals() >= self.config.threshold).astype(np.uint8)

    def select_adaptive(self, s: int, *, rng: np.random.Generator | None = None) -> np.ndarray:
        """Indices of the s inputs whose marginals sit closest to 1/2.

        Aggregation across outputs follows the configured rule; ties break
        toward the lowest index via a stable sort.
        """
        if s > self.n:
            raise ValueError("group size exceeds the population")
        if self.config.aggregate == "random-output" and self.m > 1:
            row = int((rng or np.random.default_rng()).integers(self.m))
            w_row = self._w_from_sums(self._colsum(np.arange(self.n)))[row]
            dist = np.abs(w_row - 0.5)
        else:
            dist = self._uncertainty
        return np.sort(np.argsort(dist, kind="stable")[:s])

    def should_stop(self) -> tuple[bool, str | None]:
        """Stop on certainty (every marginal at least ``margin`` from 1/2) or budget."""
        cfg = self.config
        if cfg.max_tests is not None and self.n_tests >= cfg.max_tests:
            return True, "budget"
        if cfg.margin is not None:
            if float(np.abs(self.marginals() - 0.5).min()) >= cfg.margin:
                return True, "certainty"
        return False, None


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_predicate(log_every, budget):
    """Interpret log_every as an interval (int) or explicit test counts."""
    if log_every is None or log_every == 0:
        return lambda t: False
    if isinstance(log_every, int):
        return lambda t: t % log_every == 0 or t == budget
    counts = set(int(v) for v in log_every)
    return lambda t: t in counts


def run_closed_loop(
    net: GroundTruthNetwork,
    noise_true: NoiseSpec,
    noise_assumed: NoiseSpec,
    config: OnlineConfig,
    design_kind: str = "bernoulli",
    *,
    s_mean: float = 10.0,
    max_tests: int | None = None,
    seed: int = 0,
    log_every: int = 100,
    score_fn=None,
) -> tuple[OnlineSession, list[dict]]:
    """Alternate design, simulation, and ingestion for a whole experiment.

    ``design_kind`` is 'bernoulli' or 'adaptive'; adaptive tests stimulate
    the s most uncertain inputs under the session's aggregation rule.
    Returns the session and one trajectory row per logged test.
    """
    if design_kind not in ("bernoulli", "adaptive"):
        raise ValueError("design_kind must be 'bernoulli' or 'adaptive'")
    budget = max_tests if max_tests is not None else config.max_tests
    if budget is None:
        raise ValueError("a test budget is required")
    config = OnlineConfig(**{**config.__dict__, "max_tests": budget})
    session = OnlineSession(net.n, net.n, noise_assumed, config)
    trajectory: list[dict] = []
    p = s_mean / net.n
    adaptive_rng = stream(seed, "adaptive-pick")
    should_log = _log_predicate(log_every, budget)
    while True:
        stop, reason = session.should_stop()
        if stop:
            session.stopped_reason = reason
            break
        t = session.n_tests
        if design_kind == "adaptive":
            stim = session.select_adaptive(int(round(s_mean)), rng=adaptive_rng)
        else:
            attempt = 0
            while True:
                mask = stream(seed, "design", t, 0, attempt).random(net.n) < p
                if mask.any():
                    break
                attempt += 1
            stim = np.flatnonzero(mask)
        y = simulate_outcomes(net, stim, noise_true, seed=seed, test_index=t)
        session.ingest_test(stim, y)
        if should_log(session.n_tests):
            row = {
                "test_index": session.n_tests,
                "design_kind": design_kind,
                "stim_size": int(stim.size),
                "stopped_reason": "",
            }
            if score_fn is not None:
                row.update(score_fn(session))
            trajectory.append(row)
    if trajectory:
        trajectory[-1]["stopped_reason"] = session.stopped_reason or ""
    return session, trajectory
