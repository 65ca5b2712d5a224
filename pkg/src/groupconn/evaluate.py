"""Recovery metrics, ROC sweeps, the exact enumeration oracle, and sweeps.

The enumeration oracle computes posterior marginals by brute force over all
binary connectivity hypotheses for one output neuron; it is the reference
the variational solver is calibrated against in the tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .baseline import run_naive_protocol
from .likelihood import coeffs, per_test_coeffs
from .online import OnlineConfig, run_closed_loop
from .simulate import (
    GroundTruthNetwork,
    NoiseSpec,
    StimulationDesign,
    generate_bernoulli_design,
    generate_network,
    outcome_matrix,
    simulate_records,
)
from .solver import InferenceConfig, binarize, fit_all_outputs

__all__ = [
    "RecoveryMetrics",
    "score",
    "roc_sweep",
    "exact_marginals",
    "sweep_runner",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = [
    "config_id",
    "n",
    "theta",
    "s",
    "alpha",
    "beta",
    "alpha_assumed",
    "beta_assumed",
    "sigma",
    "design",
    "seed",
    "test_count",
    "specificity",
    "sensitivity",
    "wall_ms",
]


@dataclass(frozen=True)
class RecoveryMetrics:
    """Confusion counts with the vacuous-class conventions.

    Sensitivity is 1 when no positives exist and specificity is 1 when no
    negatives exist, so sweep curves stay defined at degenerate corners.
    """

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if (self.tn + self.fp) else 1.0

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0


def score(truth, predicted, *, exclude_diagonal: bool = True) -> RecoveryMetrics:
    """Confusion counts of a binary prediction against ground truth.

    The diagonal is excluded by default, matching generators that forbid
    self-connections. 1-D inputs are scored as a single output row.
    """
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {p.shape}")
    if t.ndim == 2 and t.shape[0] == t.shape[1] and exclude_diagonal:
        mask = ~np.eye(t.shape[0], dtype=bool)
        t, p = t[mask], p[mask]
    t = t.astype(bool).ravel()
    p = p.astype(bool).ravel()
    return RecoveryMetrics(
        tp=int((t & p).sum()),
        fp=int((~t & p).sum()),
        tn=int((~t & ~p).sum()),
        fn=int((t & ~p).sum()),
    )


def roc_sweep(w, truth, thresholds, *, exclude_diagonal: bool = True) -> np.ndarray:
    """(threshold, false-positive rate, sensitivity) rows for a threshold grid.

    Ties at a threshold count as predicted connections, consistent with the
    classifier. Sorting by descending threshold yields a monotone staircase.
    """
    w = np.asarray(w, dtype=float)
    rows = []
    for thr in np.asarray(thresholds, dtype=float):
        m = score(truth, (w >= thr).astype(np.uint8), exclude_diagonal=exclude_diagonal)
        rows.append((thr, 1.0 - m.specificity, m.sensitivity))
    return np.array(rows)


def exact_marginals(
    design: StimulationDesign,
    y,
    noise: NoiseSpec,
    prior: float | np.ndarray = 0.5,
    *,
    max_n: int = 15,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior marginals and MAP hypothesis by exhaustive enumeration.

    Every binary hypothesis is weighted by exp(sum_t c_t a_t + sum_i mu_i w_i)
    in log space with max subtraction; ``prior`` gives the Bernoulli prior
    probability per connection. Only feasible for n <= ``max_n``.
    """
    n = design.n
    if n > max_n:
        raise ValueError(f"enumeration over 2**{n} states refused (max_n={max_n})")
    y = np.asarray(y).ravel()
    if y.shape[0] != design.n_tests:
        raise ValueError("outcome count does not match the design")
    prior_arr = np.broadcast_to(np.asarray(prior, dtype=float), (n,))
    if np.any((prior_arr <= 0.0) | (prior_arr >= 1.0)):
        raise ValueError("prior probabilities must lie in (0, 1)")
    mu = np.log(prior_arr / (1.0 - prior_arr))
    like = coeffs(noise)
    c = per_test_coeffs(like, y)
    states = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    logw = states.astype(float) @ mu
    for t, stim in enumerate(design.tests):
        active = states[:, stim].max(axis=1)
        logw += c[t] * active
    logw -= logw.max()
    weights = np.exp(logw)
    weights /= weights.sum()
    marginals = weights @ states
    map_config = states[int(np.argmax(logw))].copy()
    return marginals, map_config


# ---------------------------------------------------------------------------
# Experiment harness shared by the CLI and the sweep runner.
# ---------------------------------------------------------------------------


def _default_checkpoints(budget: int) -> list[int]:
    if budget <= 0:
        return []
    step = max(budget // 10, 1)
    pts = list(range(step, budget + 1, step))
    if pts[-1] != budget:
        pts.append(budget)
    return pts


def _metrics_row(net, predicted) -> dict:
    m = score(net.adjacency, predicted, exclude_diagonal=not net.allow_self)
    return {"specificity": m.specificity, "sensitivity": m.sensitivity}


def run_offline_trajectory(
    net: GroundTruthNetwork,
    noise_true: NoiseSpec,
    noise_assumed: NoiseSpec,
    config: InferenceConfig,
    *,
    s_mean: float,
    budget: int,
    checkpoints=None,
    seed: int = 0,
    n_jobs: int = 1,
    timing: bool = False,
) -> list[dict]:
    """Batch refits of the full network at increasing test counts."""
    design = generate_bernoulli_design(net.n, s_mean, budget, seed=seed)
    records = simulate_records(net, design, noise_true, seed=seed)
    outcomes = outcome_matrix(records)
    rows = []
    for t in checkpoints if checkpoints is not None else _default_checkpoints(budget):
        start = time.perf_counter()
        state = fit_all_outputs(design.head(t), outcomes[:t], noise_assumed, config, n_jobs=n_jobs)
        wall = (time.perf_counter() - start) * 1e3
        row = {
            "test_count": t,
            "design": "bernoulli",
            "stim_size": round(float(design.head(t).sizes.mean()), 2),
            "stopped_reason": "",
            "wall_ms": round(wall, 3) if timing else 0,
        }
        row.update(_metrics_row(net, binarize(state.w, config.threshold)))
        rows.append(row)
    return rows


def run_online_trajectory(
    net: GroundTruthNetwork,
    noise_true: NoiseSpec,
    noise_assumed: NoiseSpec,
    config: OnlineConfig,
    *,
    design_kind: str,
    s_mean: float,
    budget: int,
    seed: int = 0,
    log_every=100,
    checkpoints=None,
    timing: bool = False,
) -> list[dict]:
    """Streaming run (Bernoulli or adaptive design) with periodic scoring."""
    start = time.perf_counter()

    def score_session(session) -> dict:
        pred = session.predict()
        return _metrics_row(net, pred)

    _, traj = run_closed_loop(
        net,
        noise_true,
        noise_assumed,
        config,
        design_kind,
        s_mean=s_mean,
        max_tests=budget,
        seed=seed,
        log_every=list(checkpoints) if checkpoints is not None else log_every,
        score_fn=score_session,
    )
    wall = (time.perf_counter() - start) * 1e3
    rows = []
    for r in traj:
        rows.append(
            {
                "test_count": r["test_index"],
                "design": "adaptive" if design_kind == "adaptive" else "online",
                "stim_size": r["stim_size"],
                "stopped_reason": r["stopped_reason"],
                "specificity": r["specificity"],
                "sensitivity": r["sensitivity"],
                "wall_ms": round(wall, 3) if timing else 0,
            }
        )
    return rows


def run_naive_trajectory(
    net: GroundTruthNetwork,
    noise_true: NoiseSpec,
    *,
    budget: int,
    mode: str = "running_mean",
    init: float = 0.0,
    a: float = 1.0,
    b: float = 10.0,
    seed: int = 0,
    log_every=100,
    checkpoints=None,
    timing: bool = False,
) -> list[dict]:
    start = time.perf_counter()

    def score_est(est) -> dict:
        return _metrics_row(net, est.classify())

    _, traj = run_naive_protocol(
        net,
        noise_true,
        budget,
        mode=mode,
        init=init,
        a=a,
        b=b,
        seed=seed,
        log_every=list(checkpoints) if checkpoints is not None else log_every,
        score_fn=score_est,
    )
    wall = (time.perf_counter() - start) * 1e3
    return [
        {
            "test_count": r["test_index"],
            "design": "naive",
            "stim_size": 1,
            "stopped_reason": r["stopped_reason"],
            "specificity": r["specificity"],
            "sensitivity": r["sensitivity"],
            "wall_ms": round(wall, 3) if timing else 0,
        }
        for r in traj
    ]


def _run_cell(cell: dict, seed: int, budget: int, checkpoints, timing: bool) -> list[dict]:
    """One sweep cell: a fully resolved parameter combination and a seed."""
    n = int(cell.get("n", 1000))
    theta = cell.get("theta", 0.3)
    s = float(cell.get("s", 10))
    alpha = float(cell.get("alpha", 0.05))
    beta = float(cell.get("beta", 0.05))
    alpha_assumed = float(cell.get("alpha_assumed", alpha))
    beta_assumed = float(cell.get("beta_assumed", beta))
    sigma = float(cell.get("sigma", 0.1))
    design = cell.get("design", "bernoulli")
    net = generate_network(n, float(theta), seed=seed)
    noise_true = NoiseSpec(alpha, beta)
    noise_assumed = NoiseSpec(alpha_assumed, beta_assumed)
    if design == "bernoulli":
        rows = run_offline_trajectory(
            net,
            noise_true,
            noise_assumed,
            InferenceConfig(sigma=sigma),
            s_mean=s,
            budget=budget,
            checkpoints=checkpoints,
            seed=seed,
            timing=timing,
        )
    elif design in ("online", "adaptive"):
        rows = run_online_trajectory(
            net,
            noise_true,
            noise_assumed,
            OnlineConfig(sigma=sigma),
            design_kind="adaptive" if design == "adaptive" else "bernoulli",
            s_mean=s,
            budget=budget,
            seed=seed,
            checkpoints=checkpoints,
            timing=timing,
        )
    elif design == "naive":
        rows = run_naive_trajectory(
            net, noise_true, budget=budget, seed=seed, checkpoints=checkpoints, timing=timing
        )
    else:
        raise ValueError(f"unknown design {design!r}")
    base = {
        "n": n,
        "theta": theta,
        "s": s,
        "alpha": alpha,
        "beta": beta,
        "alpha_assumed": alpha_assumed,
        "beta_assumed": beta_assumed,
        "sigma": sigma,
        "design": design,
        "seed": seed,
    }
    return [{**base, **row, "design": row.get("design", design)} for row in rows]


def sweep_runner(
    grid: dict,
    seeds,
    budget: int,
    *,
    checkpoints=None,
    n_jobs: int = 1,
    timing: bool = False,
    config_id_fn=None,
    skip=None,
) -> list[dict]:
    """Run the cartesian product of ``grid`` values over all seeds.

    Grid keys are the result-table columns (n, theta, s, alpha, beta,
    alpha_assumed, beta_assumed, sigma, design); scalar values are allowed.
    Rows come back in deterministic cell-major order regardless of n_jobs.
    ``skip`` (cell_index -> bool) supports resuming partial sweeps.
    """
    keys = sorted(grid)
    values = [grid[k] if isinstance(grid[k], (list, tuple)) else [grid[k]] for k in keys]
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*values)]
    jobs = []
    for idx, (cell, seed) in enumerate(itertools.product(cells, list(seeds))):
        if skip is not None and skip(idx):
            continue
        jobs.append((idx, cell, int(seed)))
    if n_jobs == 1:
        produced = [(idx, _run_cell(cell, seed, budget, checkpoints, timing)) for idx, cell, seed in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_cell)(cell, seed, budget, checkpoints, timing) for _, cell, seed in jobs
        )
        produced = [(idx, rows) for (idx, _, _), rows in zip(jobs, results)]
    out = []
    for idx, rows in sorted(produced, key=lambda item: item[0]):
        for row in rows:
            row = dict(row)
            row["config_id"] = config_id_fn(idx) if config_id_fn else str(idx)
            out.append({col: row.get(col, "") for col in RESULT_COLUMNS})
    return out
