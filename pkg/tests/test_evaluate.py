import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupconn.evaluate import (
    RESULT_COLUMNS,
    RecoveryMetrics,
    exact_marginals,
    roc_sweep,
    score,
    sweep_runner,
)
from groupconn.likelihood import log_likelihood
from groupconn.simulate import NoiseSpec, StimulationDesign, generate_bernoulli_design

NOISE = NoiseSpec(0.05, 0.05)


def _matrix_with_row(n, inputs):
    truth = np.zeros((n, n), dtype=np.uint8)
    truth[0, inputs] = 1
    return truth


class TestScore:
    def test_partial_recovery(self):
        truth = _matrix_with_row(6, [1, 3, 5])
        pred = _matrix_with_row(6, [1, 5])
        m = score(truth, pred)
        assert m.specificity == 1.0
        assert m.sensitivity == pytest.approx(2 / 3)

    def test_perfect(self):
        truth = _matrix_with_row(5, [2, 4])
        m = score(truth, truth)
        assert m.specificity == 1.0 and m.sensitivity == 1.0

    def test_vacuous_positives(self):
        truth = np.zeros((4, 4), dtype=np.uint8)
        pred = np.zeros((4, 4), dtype=np.uint8)
        pred[0, 1] = 1
        m = score(truth, pred)
        assert m.sensitivity == 1.0
        assert m.specificity == pytest.approx(11 / 12)

    def test_diagonal_excluded_by_default(self):
        truth = np.eye(3, dtype=np.uint8)
        pred = np.zeros((3, 3), dtype=np.uint8)
        m = score(truth, pred)
        assert m.tp == m.fn == 0
        assert m.tn == 6

    def test_counts_sum_to_scored_pairs(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 2, size=(8, 8))
        pred = rng.integers(0, 2, size=(8, 8))
        m = score(truth, pred)
        assert m.tp + m.fp + m.tn + m.fn == 8 * 7

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score(np.zeros((3, 3)), np.zeros((4, 4)))

    @given(st.integers(0, 2**32 - 1))
    @settings(deadline=None, max_examples=30)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 2, size=(7, 7))
        pred = rng.integers(0, 2, size=(7, 7))
        perm = rng.permutation(7)
        a = score(truth, pred)
        b = score(truth[np.ix_(perm, perm)], pred[np.ix_(perm, perm)])
        assert (a.tp, a.fp, a.tn, a.fn) == (b.tp, b.fp, b.tn, b.fn)


class TestRocSweep:
    def test_perfect_separation_hits_corner(self):
        truth = _matrix_with_row(5, [1, 2])
        w = truth.astype(float)
        pts = roc_sweep(w, truth, [0.0, 0.5, 1.0])
        assert (pts[:, 0] == [0.0, 0.5, 1.0]).all()
        # threshold 1.0 classifies exactly the true links: (fpr, sens) = (0, 1)
        assert pts[2, 1] == 0.0 and pts[2, 2] == 1.0

    def test_endpoint_thresholds(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 2, size=(6, 6))
        w = rng.uniform(0.01, 0.99, size=(6, 6))
        pts = roc_sweep(w, truth, [0.0, 1.0])
        assert pts[0, 1] == 1.0 and pts[0, 2] == 1.0  # everything predicted
        assert pts[1, 1] == 0.0 and pts[1, 2] == 0.0  # nothing predicted

    def test_monotone_staircase(self):
        rng = np.random.default_rng(2)
        truth = rng.integers(0, 2, size=(10, 10))
        w = rng.random((10, 10))
        pts = roc_sweep(w, truth, np.linspace(0, 1, 21))
        order = np.argsort(-pts[:, 0])  # descending threshold
        assert (np.diff(pts[order, 1]) >= -1e-12).all()
        assert (np.diff(pts[order, 2]) >= -1e-12).all()

    def test_random_scores_near_diagonal(self):
        rng = np.random.default_rng(3)
        truth = rng.integers(0, 2, size=(60, 60))
        w = rng.random((60, 60))
        pts = roc_sweep(w, truth, np.linspace(0, 1, 101))
        order = np.argsort(pts[:, 1])
        auc = np.trapezoid(pts[order, 2], pts[order, 1])
        assert abs(auc - 0.5) < 0.05


class TestExactMarginals:
    def test_two_neuron_single_positive_test(self):
        design = StimulationDesign(2, (np.array([0, 1]),))
        marg, _ = exact_marginals(design, [1], NOISE)
        assert np.allclose(marg, 38 / 58, atol=1e-12)

    def test_no_tests_returns_prior(self):
        design = StimulationDesign(3, ())
        marg, _ = exact_marginals(design, [], NOISE, prior=0.3)
        assert np.allclose(marg, 0.3, atol=1e-12)

    def test_single_neuron_two_state_bayes(self):
        design = StimulationDesign(1, (np.array([0]),))
        marg, _ = exact_marginals(design, [1], NOISE)
        assert marg[0] == pytest.approx(0.95, abs=1e-12)

    def test_weights_normalized(self):
        rng = np.random.default_rng(4)
        design = generate_bernoulli_design(6, 2, 8, seed=4)
        y = rng.integers(0, 2, size=8)
        marg, _ = exact_marginals(design, y, NOISE)
        assert ((marg >= 0) & (marg <= 1)).all()

    def test_map_maximizes_log_likelihood_plus_prior(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            design = generate_bernoulli_design(5, 2, 6, seed=seed)
            y = rng.integers(0, 2, size=6)
            marg, map_cfg = exact_marginals(design, y, NOISE)
            best = -np.inf
            for bits in range(2**5):
                w = np.array([(bits >> i) & 1 for i in range(5)])
                ll = log_likelihood(w, design, y, NOISE)
                best = max(best, ll)
            assert log_likelihood(map_cfg, design, y, NOISE) == pytest.approx(best, abs=1e-9)

    def test_refuses_large_instances(self):
        design = StimulationDesign(16, (np.arange(16),))
        with pytest.raises(ValueError):
            exact_marginals(design, [1], NOISE)


class TestSweepRunner:
    def test_singleton_grid_matches_direct_run(self):
        grid = {"n": 20, "theta": 0.4, "s": 3, "alpha": 0.05, "beta": 0.05, "design": "bernoulli"}
        rows = sweep_runner(grid, seeds=[0], budget=40, checkpoints=[20, 40])
        assert len(rows) == 2
        assert [r["test_count"] for r in rows] == [20, 40]
        assert all(set(RESULT_COLUMNS) == set(r) for r in rows)

    def test_grid_expansion_and_labels(self):
        grid = {"n": 15, "theta": [0.3, 0.5], "s": 3, "design": "bernoulli"}
        rows = sweep_runner(grid, seeds=[0, 1], budget=20, checkpoints=[20])
        assert len(rows) == 4
        assert sorted({r["theta"] for r in rows}) == [0.3, 0.5]
        assert sorted({r["seed"] for r in rows}) == [0, 1]

    def test_parallel_rows_identical(self):
        grid = {"n": 15, "theta": 0.4, "s": 3, "design": ["bernoulli", "naive"]}
        a = sweep_runner(grid, seeds=[0, 1], budget=30, checkpoints=[30], n_jobs=1)
        b = sweep_runner(grid, seeds=[0, 1], budget=30, checkpoints=[30], n_jobs=2)
        assert a == b

    def test_skip_supports_resume(self):
        grid = {"n": 12, "theta": 0.4, "s": 2, "design": "bernoulli"}
        full = sweep_runner(grid, seeds=[0, 1, 2], budget=10, checkpoints=[10])
        partial = sweep_runner(
            grid, seeds=[0, 1, 2], budget=10, checkpoints=[10], skip=lambda idx: idx < 2
        )
        assert [r["seed"] for r in partial] == [2]
        assert partial[0]["specificity"] == full[2]["specificity"]
