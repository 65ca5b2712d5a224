import math

import numpy as np
import pytest

from groupconn.likelihood import (
    ErrorRatePriors,
    beta_posterior_rates,
    coeffs,
    log_likelihood,
    misspec_consistent,
    per_test_coeffs,
)
from groupconn.simulate import NoiseSpec, StimulationDesign


class TestCoeffs:
    def test_symmetric_rates(self):
        like = coeffs(NoiseSpec(0.05, 0.05))
        assert like.c_plus == pytest.approx(math.log(19), abs=1e-9)
        assert like.c_minus == pytest.approx(-math.log(19), abs=1e-9)

    def test_asymmetric_rates(self):
        like = coeffs(NoiseSpec(0.1, 0.2))
        assert like.c_plus == pytest.approx(math.log(8), abs=1e-9)
        assert like.c_minus == pytest.approx(-math.log(4.5), abs=1e-9)

    def test_equal_rates_are_antisymmetric(self):
        for r in (0.01, 0.1, 0.3, 0.45):
            like = coeffs(NoiseSpec(r, r))
            assert like.c_plus == pytest.approx(-like.c_minus, rel=1e-12)

    def test_sign_property_on_grid(self):
        for alpha in np.linspace(0.001, 0.45, 15):
            for beta in np.linspace(0.001, 0.45, 15):
                like = coeffs(NoiseSpec(alpha, beta))
                assert like.c_plus > 0 > like.c_minus

    def test_zero_rates_clip_by_default(self):
        like = coeffs(NoiseSpec(0.0, 0.0))
        assert np.isfinite(like.c_plus) and np.isfinite(like.c_minus)

    def test_zero_rates_raise_without_clipping(self):
        with pytest.raises(ValueError):
            coeffs(NoiseSpec(0.0, 0.1), clip=False)

    def test_per_test(self):
        like = coeffs(NoiseSpec(0.05, 0.05))
        c = per_test_coeffs(like, np.array([1, 0, 1]))
        assert np.allclose(c, [like.c_plus, like.c_minus, like.c_plus])


class TestLogLikelihood:
    def test_single_positive_test_connected(self):
        design = StimulationDesign(2, (np.array([0, 1]),))
        noise = NoiseSpec(0.05, 0.05)
        ll = log_likelihood([1, 0], design, [1], noise)
        assert ll == pytest.approx(math.log(0.95), abs=1e-9)

    def test_single_positive_test_disconnected(self):
        design = StimulationDesign(2, (np.array([0, 1]),))
        ll = log_likelihood([0, 0], design, [1], NoiseSpec(0.05, 0.05))
        assert ll == pytest.approx(math.log(0.05), abs=1e-9)

    def test_empty_design(self):
        design = StimulationDesign(3, ())
        assert log_likelihood([1, 0, 1], design, [], NoiseSpec(0.05, 0.05)) == 0.0

    def test_factorizes_over_tests_exhaustively(self):
        # direct product of per-test outcome probabilities is the oracle
        rng = np.random.default_rng(1)
        noise = NoiseSpec(0.1, 0.25)
        for n in (2, 3, 4):
            for t_count in (1, 2, 3, 4):
                tests = []
                while len(tests) < t_count:
                    mask = rng.random(n) < 0.5
                    if mask.any():
                        tests.append(np.flatnonzero(mask))
                design = StimulationDesign(n, tuple(tests))
                y = rng.integers(0, 2, size=t_count)
                for bits in range(2**n):
                    w = np.array([(bits >> i) & 1 for i in range(n)])
                    expected = 0.0
                    for t, stim in enumerate(design.tests):
                        active = w[stim].max()
                        p1 = 1 - noise.beta if active else noise.alpha
                        expected += math.log(p1 if y[t] == 1 else 1 - p1)
                    assert log_likelihood(w, design, y, noise, clip=False) == pytest.approx(
                        expected, abs=1e-9
                    )


class TestMisspecConsistent:
    def test_disparate_assumed_rates(self):
        # ratio log(0.55/1e-4) / log(0.9999/0.45) is about 10.78, inside (0.0526, 19)
        assert misspec_consistent(NoiseSpec(0.05, 0.05), NoiseSpec(0.0001, 0.45))

    def test_equal_assumed_rates_always_consistent(self):
        for true_rate in (0.05, 0.2, 0.4):
            for assumed in (0.05, 0.2, 0.45):
                assert misspec_consistent(
                    NoiseSpec(true_rate, true_rate), NoiseSpec(assumed, assumed)
                )

    def test_violated_case(self):
        # ratio about 0.179 falls below beta/(1-beta) = 0.667
        assert not misspec_consistent(NoiseSpec(0.4, 0.4), NoiseSpec(0.49, 0.01))

    def test_swap_symmetry_on_grid(self):
        rates = (0.02, 0.1, 0.25, 0.4)
        for a in rates:
            for b in rates:
                for ap in rates:
                    for bp in rates:
                        assert misspec_consistent(
                            NoiseSpec(a, b), NoiseSpec(ap, bp)
                        ) == misspec_consistent(NoiseSpec(b, a), NoiseSpec(bp, ap))


class TestBetaPosteriorRates:
    def test_documented_case(self):
        priors = ErrorRatePriors(1, 19, 1, 19)
        alpha_bar, _ = beta_posterior_rates(priors, (5, 95, 0, 0))
        assert alpha_bar == pytest.approx(6 / 120)

    def test_no_data_gives_prior_means(self):
        priors = ErrorRatePriors(2, 8, 3, 7)
        alpha_bar, beta_bar = beta_posterior_rates(priors, (0, 0, 0, 0))
        assert alpha_bar == pytest.approx(0.2)
        assert beta_bar == pytest.approx(0.3)

    def test_balanced_counts(self):
        priors = ErrorRatePriors(1, 1, 1, 1)
        alpha_bar, _ = beta_posterior_rates(priors, (50, 50, 0, 0))
        assert alpha_bar == pytest.approx(51 / 102)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            beta_posterior_rates(ErrorRatePriors(1, 1, 1, 1), (-1, 0, 0, 0))

    def test_nonpositive_priors_rejected(self):
        with pytest.raises(ValueError):
            ErrorRatePriors(0, 1, 1, 1)
