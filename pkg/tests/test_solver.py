import math

import numpy as np
import pytest

import groupconn.solver as solver_mod
from groupconn.entropy import h2
from groupconn.evaluate import exact_marginals, score
from groupconn.likelihood import coeffs, per_test_coeffs
from groupconn.simulate import (
    NoiseSpec,
    StimulationDesign,
    generate_bernoulli_design,
    generate_network,
    outcome_matrix,
    simulate_records,
)
from groupconn.solver import (
    GroupTestingDecoder,
    InferenceConfig,
    NumericalFailure,
    OptimizerSlots,
    PosteriorState,
    binarize,
    constraint_violation,
    dual_step,
    fit_all_outputs,
    fit_offline,
    load_state,
    logistic,
    primal_exact,
    primal_quadratic,
    save_state,
)

NOISE = NoiseSpec(0.05, 0.05)


def _zero_state(design, m=None):
    shape = (design.n_tests,) if m is None else (m, design.n_tests)
    nnz = (design.indices.size,) if m is None else (m, design.indices.size)
    wshape = (design.n,) if m is None else (m, design.n)
    return PosteriorState(
        w=np.full(wshape, 0.5), a=np.zeros(shape), eta=np.zeros(shape), nu=np.zeros(nnz)
    )


class TestPrimalExact:
    def test_zero_duals_flat_prior(self):
        design = StimulationDesign(3, (np.array([0, 1]), np.array([2]),))
        c = np.zeros(2)
        w, a = primal_exact(design, c, np.zeros(3), np.zeros(2), np.zeros(3))
        assert np.allclose(w, 0.5, atol=1e-12)

    def test_positive_outcome_activation(self):
        design = StimulationDesign(2, (np.array([0, 1]),))
        like = coeffs(NOISE)
        w, a = primal_exact(design, np.array([like.c_plus]), np.zeros(2), np.zeros(1), np.zeros(2))
        assert a[0] == pytest.approx(0.95, abs=1e-9)

    def test_negative_outcome_activation(self):
        design = StimulationDesign(2, (np.array([0, 1]),))
        like = coeffs(NOISE)
        w, a = primal_exact(design, np.array([like.c_minus]), np.zeros(2), np.zeros(1), np.zeros(2))
        assert a[0] == pytest.approx(0.05, abs=1e-9)

    def test_maximizes_decoupled_objective_on_grid(self):
        # independent oracle: per-coordinate grid search of coef*x + H2(x)
        rng = np.random.default_rng(3)
        design = StimulationDesign(4, (np.array([0, 1]), np.array([1, 2, 3])))
        grid = np.linspace(0.001, 0.999, 999)
        for _ in range(20):
            eta = rng.uniform(0, 3, size=2)
            nu = rng.uniform(0, 3, size=5)
            mu = rng.normal(0, 2, size=4)
            c = rng.normal(0, 3, size=2)
            w, a = primal_exact(design, c, mu, eta, nu)
            coef_a = c - eta + design.row_sum(nu)
            coef_w = mu + design.col_sum(design.expand(eta) - nu)
            for t in range(2):
                closed = coef_a[t] * a[t] + h2(a[t])
                best = (coef_a[t] * grid + h2(grid)).max()
                assert closed >= best - 1e-6
            for i in range(4):
                closed = coef_w[i] * w[i] + h2(w[i])
                best = (coef_w[i] * grid + h2(grid)).max()
                assert closed >= best - 1e-6


class TestPrimalQuadratic:
    def test_zero_duals_flat_prior(self):
        design = StimulationDesign(3, (np.array([0, 1, 2]),))
        w, a = primal_quadratic(design, np.zeros(1), np.zeros(3), np.zeros(1), np.zeros(3))
        assert np.allclose(w, 0.5)

    def test_positive_outcome_clamps_high(self):
        design = StimulationDesign(10, (np.arange(10),))
        like = coeffs(NOISE)
        w, a = primal_quadratic(
            design, np.array([like.c_plus]), np.zeros(10), np.zeros(1), np.zeros(10), sigma=0.1
        )
        assert a[0] == pytest.approx(1.0, abs=1e-12)

    def test_negative_outcome_clamps_low(self):
        design = StimulationDesign(10, (np.arange(10),))
        like = coeffs(NOISE)
        w, a = primal_quadratic(
            design, np.array([like.c_minus]), np.zeros(10), np.zeros(1), np.zeros(10), sigma=0.1
        )
        assert a[0] == pytest.approx(0.0, abs=1e-12)

    def test_interior_solution_value(self):
        # small coefficient keeps the solution inside the box
        design = StimulationDesign(2, (np.array([0, 1]),))
        w, a = primal_quadratic(
            design, np.array([0.1]), np.zeros(2), np.zeros(1), np.zeros(2), sigma=4.0
        )
        assert a[0] == pytest.approx(1 - 0.25 + 0.1 / 4.0, abs=1e-12)

    def test_maximizes_surrogate_objective_on_grid(self):
        rng = np.random.default_rng(5)
        design = StimulationDesign(3, (np.array([0, 2]), np.array([1]),))
        grid = np.linspace(0.001, 0.999, 999)
        sigma = 0.7
        a0 = 1.0 - 0.5 ** design.sizes.astype(float)
        for _ in range(20):
            eta = rng.uniform(0, 2, size=2)
            nu = rng.uniform(0, 2, size=3)
            mu = rng.normal(0, 1, size=3)
            c = rng.normal(0, 2, size=2)
            w, a = primal_quadratic(design, c, mu, eta, nu, sigma=sigma)
            coef_a = c - eta + design.row_sum(nu)
            coef_w = mu + design.col_sum(design.expand(eta) - nu)
            for t in range(2):
                closed = coef_a[t] * a[t] - 0.5 * sigma * (a[t] - a0[t]) ** 2
                best = (coef_a[t] * grid - 0.5 * sigma * (grid - a0[t]) ** 2).max()
                assert closed >= best - 1e-6
            for i in range(3):
                closed = coef_w[i] * w[i] - 0.5 * sigma * (w[i] - 0.5) ** 2
                best = (coef_w[i] * grid - 0.5 * sigma * (grid - 0.5) ** 2).max()
                assert closed >= best - 1e-6

    def test_sigma_out_of_range(self):
        design = StimulationDesign(2, (np.array([0]),))
        with pytest.raises(ValueError):
            primal_quadratic(design, np.zeros(1), np.zeros(2), np.zeros(1), np.zeros(1), sigma=5.0)


class TestDualStep:
    def test_satisfied_constraints_keep_zero_duals(self):
        # both members at 0.5 with a = 1.0: the sum constraint is tight,
        # gradient zero, duals remain zero
        design = StimulationDesign(2, (np.array([0, 1]),))
        state = _zero_state(design)
        new = dual_step(state, (np.array([0.5, 0.5]), np.array([1.0])), 0.01, design)
        assert np.allclose(new.eta, 0.0, atol=1e-15)

    def test_membership_violation_raises_nu(self):
        design = StimulationDesign(1, (np.array([0]),))
        state = _zero_state(design)
        new = dual_step(state, (np.array([0.9]), np.array([0.2])), 0.1, design)
        assert new.nu[0] == pytest.approx(0.07, abs=1e-12)

    def test_sum_violation_raises_eta(self):
        design = StimulationDesign(1, (np.array([0]),))
        state = _zero_state(design)
        new = dual_step(state, (np.array([0.4]), np.array([0.9])), 0.1, design)
        assert new.eta[0] == pytest.approx(0.05, abs=1e-12)

    def test_projection_keeps_duals_nonnegative(self):
        rng = np.random.default_rng(0)
        design = StimulationDesign(4, (np.array([0, 1]), np.array([2, 3]), np.array([0, 3])))
        state = _zero_state(design)
        slots = OptimizerSlots.zeros(state.eta.shape, state.nu.shape)
        for _ in range(50):
            w = rng.random(4)
            a = rng.random(3)
            state = dual_step(state, (w, a), 0.3, design, slots)
            assert (state.eta >= 0).all() and (state.nu >= 0).all()


class TestFitOffline:
    def test_single_test_single_neuron_fixed_point(self):
        # one positive test of a single neuron: the decoupled stationarity
        # condition f(d) = f(c - d) gives d = c/2, so the fitted marginal is
        # f(c/2); the exact posterior (two-state enumeration) is 0.95 and
        # both land on the same side of the threshold
        design = StimulationDesign(1, (np.array([0]),))
        config = InferenceConfig(
            entropy="exact", optimizer="gd", dual_step=0.2, max_iters=4000,
            convergence_tol=1e-10,
        )
        state = fit_offline(design, [1], NOISE, config)
        c = coeffs(NOISE).c_plus
        assert state.w[0] == pytest.approx(logistic(np.array([c / 2.0]))[0], abs=1e-6)
        exact, _ = exact_marginals(design, [1], NOISE)
        assert exact[0] == pytest.approx(0.95, abs=1e-12)
        assert (state.w[0] >= 0.5) == (exact[0] >= 0.5)

    def test_two_neuron_single_test_deviation_recorded(self):
        # the exact marginals are 38/58; the decoupled family leaves the
        # constraints slack at zero duals, so the variational answer stays
        # at the prior 1/2 and the deviation is the documented 0.155
        design = StimulationDesign(2, (np.array([0, 1]),))
        config = InferenceConfig(
            entropy="exact", optimizer="gd", dual_step=0.2, max_iters=2000
        )
        state = fit_offline(design, [1], NOISE, config)
        exact, _ = exact_marginals(design, [1], NOISE)
        assert np.allclose(exact, 38 / 58, atol=1e-12)
        assert np.allclose(state.w, 0.5, atol=1e-9)
        deviation = float(np.abs(state.w - exact).max())
        assert deviation == pytest.approx(38 / 58 - 0.5, abs=1e-9)
        assert (binarize(state.w) == binarize(exact)).all()

    def test_no_tests_returns_prior(self):
        design = StimulationDesign(4, ())
        config = InferenceConfig(entropy="exact", mu=np.log(0.2 / 0.8))
        state = fit_offline(design, [], NOISE, config)
        assert np.allclose(state.w, 0.2, atol=1e-12)

    def test_negative_tests_drive_marginals_down(self):
        design = StimulationDesign(3, (np.array([0, 1]), np.array([0, 2]), np.array([1, 2])))
        config = InferenceConfig(entropy="exact", optimizer="gd", dual_step=0.2, max_iters=2000)
        state = fit_offline(design, [0, 0, 0], NOISE, config)
        assert (state.w < 0.5).all()

    def test_dual_feasibility_drives_constraints(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            n = int(rng.integers(3, 11))
            t_count = int(rng.integers(2, 21))
            tests = []
            while len(tests) < t_count:
                mask = rng.random(n) < 0.4
                if mask.any():
                    tests.append(np.flatnonzero(mask))
            design = StimulationDesign(n, tuple(tests))
            y = rng.integers(0, 2, size=t_count)
            config = InferenceConfig(
                entropy="exact",
                optimizer="gd",
                dual_step=0.05,
                max_iters=30_000,
                convergence_tol=1e-4,
            )
            state = fit_offline(design, y, NOISE, config)
            assert constraint_violation(design, state.w, state.a) < 10 * 1e-4

    def test_numerical_failure_reports_iteration(self, monkeypatch):
        design = StimulationDesign(2, (np.array([0, 1]),))

        def bad_primal(*args, **kwargs):
            return np.full((1, 2), np.nan), np.full((1, 1), np.nan)

        monkeypatch.setattr(solver_mod, "_primal", bad_primal)
        with pytest.raises(NumericalFailure) as err:
            fit_offline(design, [1], NOISE)
        assert err.value.iteration is not None


class TestNoiselessRecovery:
    def test_small_networks_recovered(self):
        # sparsity-matched prior; unidentifiable pairs otherwise sit exactly
        # at 1/2 where the tie rule counts them as present
        config = InferenceConfig(mu=math.log(0.2 / 0.8), max_iters=200)
        noiseless = NoiseSpec(0.0, 0.0)
        exact = 0
        seeds = range(20)
        for seed in seeds:
            net = generate_network(10, k_override=2, seed=seed)
            design = generate_bernoulli_design(10, 3, 60, seed=seed)
            outcomes = outcome_matrix(simulate_records(net, design, noiseless, seed=seed))
            state = fit_all_outputs(design, outcomes, noiseless, config)
            pred = binarize(state.w)
            mask = ~np.eye(10, dtype=bool)
            exact += int(np.array_equal(pred[mask], net.adjacency[mask]))
        assert exact >= int(0.95 * len(seeds))


class TestFitAllOutputs:
    def _records(self, seed=0):
        net = generate_network(12, 0.4, seed=seed)
        design = generate_bernoulli_design(12, 3, 30, seed=seed)
        outcomes = outcome_matrix(simulate_records(net, design, NOISE, seed=seed))
        return design, outcomes

    def test_matches_sequential_fits(self):
        design, outcomes = self._records()
        config = InferenceConfig()
        batched = fit_all_outputs(design, outcomes, NOISE, config)
        for i in range(outcomes.shape[1]):
            single = fit_offline(design, outcomes[:, i], NOISE, config)
            assert np.array_equal(batched.w[i], single.w)
            assert np.array_equal(batched.eta[i], single.eta)

    def test_parallelism_is_bitwise_identical(self):
        design, outcomes = self._records(seed=5)
        config = InferenceConfig()
        w1 = fit_all_outputs(design, outcomes, NOISE, config, n_jobs=1).w
        w8 = fit_all_outputs(design, outcomes, NOISE, config, n_jobs=8).w
        assert np.array_equal(w1, w8)

    def test_pure_noise_row_stays_below_threshold(self):
        net = generate_network(10, k_override=0.0, seed=3)
        design = generate_bernoulli_design(10, 3, 60, seed=3)
        outcomes = outcome_matrix(simulate_records(net, design, NoiseSpec(0.0, 0.0), seed=3))
        config = InferenceConfig(mu=math.log(0.2 / 0.8), max_iters=200)
        state = fit_all_outputs(design, outcomes, NoiseSpec(0.0, 0.0), config)
        assert (state.w < 0.5).all()


class TestBinarize:
    def test_basic(self):
        assert np.array_equal(binarize(np.array([0.6, 0.4])), [1, 0])

    def test_tie_counts_as_connection(self):
        assert np.array_equal(binarize(np.array([0.5])), [1])

    def test_all_zero(self):
        assert np.array_equal(binarize(np.zeros(3)), [0, 0, 0])

    def test_accepts_state(self):
        design = StimulationDesign(2, ())
        state = fit_offline(design, [], NOISE, InferenceConfig())
        assert np.array_equal(binarize(state), [1, 1])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        design, outcomes = TestFitAllOutputs()._records(seed=2)
        state = fit_all_outputs(design, outcomes, NOISE, InferenceConfig())
        path = tmp_path / "state.npz"
        save_state(state, path, config_hash="abc123")
        loaded, chash = load_state(path)
        assert chash == "abc123"
        assert np.array_equal(loaded.w, state.w)
        assert np.array_equal(loaded.nu, state.nu)
        assert loaded.iteration == state.iteration

    def test_warm_restart_resumes_from_duals(self, tmp_path):
        # a fit split into two GD legs equals one fit of the combined length
        design, outcomes = TestFitAllOutputs()._records(seed=7)
        y = outcomes[:, 0]
        short = InferenceConfig(optimizer="gd", max_iters=20, convergence_tol=0.0)
        full = InferenceConfig(optimizer="gd", max_iters=40, convergence_tol=0.0)
        first = fit_offline(design, y, NOISE, short)
        path = tmp_path / "ck.npz"
        save_state(first, path)
        resumed, _ = load_state(path)
        second = fit_offline(design, y, NOISE, short, init_state=resumed)
        direct = fit_offline(design, y, NOISE, full)
        assert np.allclose(second.w, direct.w, atol=1e-12)
        assert np.allclose(second.eta, direct.eta, atol=1e-12)


class TestDecoderEstimator:
    def test_sklearn_params(self):
        from sklearn.base import clone

        est = GroupTestingDecoder(sigma=0.2, max_iters=10)
        params = est.get_params()
        assert params["sigma"] == 0.2
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_single_output(self):
        net = generate_network(10, 0.4, seed=1)
        design = generate_bernoulli_design(10, 3, 40, seed=1)
        outcomes = outcome_matrix(simulate_records(net, design, NOISE, seed=1))
        est = GroupTestingDecoder().fit(design.matrix(), outcomes[:, 0])
        assert est.marginals_.shape == (10,)
        assert est.connectivity_.shape == (10,)

    def test_fit_population_and_predict(self):
        net = generate_network(15, 0.4, seed=2)
        design = generate_bernoulli_design(15, 4, 120, seed=2)
        outcomes = outcome_matrix(simulate_records(net, design, NOISE, seed=2))
        est = GroupTestingDecoder().fit(design.matrix(), outcomes)
        assert est.marginals_.shape == (15, 15)
        metrics = score(net.adjacency, est.connectivity_)
        assert metrics.specificity > 0.8
        pred = est.predict(design.matrix()[:5])
        assert pred.shape == (5, 15)

    def test_rejects_bad_matrix(self):
        est = GroupTestingDecoder()
        with pytest.raises(ValueError):
            est.fit(np.array([[0, 2], [1, 0]]), np.array([1, 0]))
