"""Single-neuron stimulation baselines.

The naive protocol stimulates one uniformly random neuron per test and
keeps per-pair response counters. Two read-outs are provided: a running
mean thresholded at one half, and the mode of a Beta posterior whose prior
favors absent connections.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ._rng import stream
from ._validation import check_outcomes, check_stim_matrix
from .simulate import GroundTruthNetwork, NoiseSpec, simulate_outcomes

__all__ = ["NaiveEstimator", "NaiveSingleStimBaseline", "run_naive_protocol"]

MODES = ("running_mean", "beta_map")


class NaiveEstimator:
    """Per-pair response counters with a pluggable classification rule.

    ``counts`` are indexed (output, target): ``n1[i, j]`` counts responses
    of output i across stimulations of j.
    """

    def __init__(
        self,
        n_inputs: int,
        n_outputs: int,
        mode: str = "running_mean",
        *,
        init: float = 0.0,
        a: float = 1.0,
        b: float = 10.0,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "beta_map" and (a < 1.0 or b < 1.0):
            raise ValueError("beta_map requires a >= 1 and b >= 1")
        if init not in (0.0, 0.5):
            raise ValueError("init must be 0 or 0.5")
        self.mode = mode
        self.init = float(init)
        self.a = float(a)
        self.b = float(b)
        self.n1 = np.zeros((n_outputs, n_inputs), dtype=np.int64)
        self.n0 = np.zeros((n_outputs, n_inputs), dtype=np.int64)

    def update(self, target: int, outcomes) -> "NaiveEstimator":
        """Record one single-neuron stimulation of ``target``."""
        y = check_outcomes(np.asarray(outcomes).reshape(1, -1), 1)[0]
        if y.shape[0] != self.n1.shape[0]:
            raise ValueError("outcome length does not match the output count")
        self.n1[:, target] += y
        self.n0[:, target] += 1 - y
        return self

    def values(self) -> np.ndarray:
        """Current per-pair estimates (running mean or Beta posterior mode)."""
        total = self.n1 + self.n0
        tested = total > 0
        if self.mode == "running_mean":
            vals = np.full(self.n1.shape, self.init, dtype=float)
            np.divide(self.n1, total, out=vals, where=tested)
            return vals
        denom = self.a + self.b + total - 2.0
        vals = np.zeros(self.n1.shape, dtype=float)
        np.divide(self.a + self.n1 - 1.0, denom, out=vals, where=denom > 0)
        return vals

    def classify(self) -> np.ndarray:
        """Binary read-out.

        Tested pairs need a value strictly above one half. Untested pairs
        fall back to the initialization: for the running mean an init of
        0.5 sits on the decision boundary and counts as present (ties favor
        a connection), while the Beta mode uses its prior value (0 when the
        flat prior leaves it undefined).
        """
        tested = (self.n1 + self.n0) > 0
        vals = self.values()
        if self.mode == "running_mean":
            return np.where(tested, vals > 0.5, self.init >= 0.5).astype(np.uint8)
        return (vals > 0.5).astype(np.uint8)


class NaiveSingleStimBaseline(BaseEstimator):
    """Estimator facade over :class:`NaiveEstimator`.

    ``fit(X, y)`` expects every row of X to stimulate exactly one neuron.
    """

    def __init__(self, mode: str = "running_mean", init: float = 0.0, a: float = 1.0, b: float = 10.0):
        self.mode = mode
        self.init = init
        self.a = a
        self.b = b

    def fit(self, X, y):
        X = check_stim_matrix(X)
        if X.shape[0] and (X.sum(axis=1) != 1).any():
            raise ValueError("naive protocol rows must stimulate exactly one neuron")
        y = check_outcomes(y, X.shape[0])
        y2 = y[:, None] if y.ndim == 1 else y
        est = NaiveEstimator(X.shape[1], y2.shape[1], self.mode, init=self.init, a=self.a, b=self.b)
        for row, out in zip(X, y2):
            est.update(int(np.flatnonzero(row)[0]), out)
        self.estimator_ = est
        self.n_features_in_ = X.shape[1]
        self.connectivity_ = est.classify() if y.ndim == 2 else est.classify()[0]
        return self


def run_naive_protocol(
    net: GroundTruthNetwork,
    noise: NoiseSpec,
    t: int,
    *,
    mode: str = "running_mean",
    init: float = 0.0,
    a: float = 1.0,
    b: float = 10.0,
    seed: int = 0,
    log_every: int = 100,
    score_fn=None,
) -> tuple[NaiveEstimator, list[dict]]:
    """Run ``t`` rounds of uniform single-neuron stimulation.

    Targets are drawn i.i.d. with replacement; outcomes use the same
    counter streams as the group-testing pipelines so trajectories are
    reproducible under one root seed.
    """
    est = NaiveEstimator(net.n, net.n, mode, init=init, a=a, b=b)
    trajectory: list[dict] = []
    if log_every is None or log_every == 0:
        should_log = lambda k: False  # noqa: E731
    elif isinstance(log_every, int):
        should_log = lambda k: k % log_every == 0 or k == t  # noqa: E731
    else:
        counts = set(int(v) for v in log_every)
        should_log = lambda k: k in counts  # noqa: E731
    for ti in range(t):
        target = int(stream(seed, "naive-target", ti).integers(net.n))
        y = simulate_outcomes(net, [target], noise, seed=seed, test_index=ti)
        est.update(target, y)
        if should_log(ti + 1):
            row = {"test_index": ti + 1, "design_kind": "naive", "stim_size": 1,
                   "stopped_reason": ""}
            if score_fn is not None:
                row.update(score_fn(est))
            trajectory.append(row)
    return est, trajectory
