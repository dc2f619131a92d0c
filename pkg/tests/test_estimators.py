import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from dpaudit import estimators as est
from dpaudit.core import Approximate, Pure, Renyi
from dpaudit.oracles import Discrete, hockey_stick_oracle, renyi_oracle


def sampler_of(dist):
    def sample(n, rng):
        return np.asarray(dist(n, rng), dtype=float).reshape(n, -1)
    return sample


def bernoulli(p):
    return sampler_of(lambda n, rng: (rng.random(n) < p).astype(float))


def point_mass(v):
    return sampler_of(lambda n, rng: np.full(n, v))


class TestRenyiPieces:
    def test_eta_frozen_value(self):
        assert est.eta_from_n(100000, 1.5, 1.0, 0.05) == pytest.approx(0.018184, abs=1e-6)

    def test_eta_infeasible(self):
        with pytest.raises(est.InfeasibleSampleSizeError):
            est.eta_from_n(10, 2.0, 3.0, 0.05)

    @given(st.integers(1000, 10**7), st.floats(1.01, 4.0), st.floats(0.05, 1.0))
    def test_eta_decreases_with_n(self, n, alpha, bound):
        try:
            small = est.eta_from_n(n, alpha, bound, 0.1)
        except est.InfeasibleSampleSizeError:
            return
        assert est.eta_from_n(4 * n, alpha, bound, 0.1) == pytest.approx(small / 2)

    def test_correction(self):
        assert est.renyi_correction(0.5) == pytest.approx(math.log(3.0))
        assert est.renyi_correction(1.0) == math.inf

    def test_thresholds(self):
        assert est.renyi_threshold(Renyi(1.5, 0.2), 1.5) == 0.2
        assert est.renyi_threshold(Pure(0.01), 1.5) == pytest.approx(3e-4)
        assert est.renyi_threshold(Pure(1.0), 1.5) == 1.0
        with pytest.raises(TypeError):
            est.renyi_threshold(Approximate(1.0, 0.01), 1.5)

    def test_empirical_renyi_accepts_callable_or_values(self):
        X0, X1 = np.array([[1.0]]), np.array([[0.0]])
        assert est.empirical_renyi(lambda X: X[:, 0], X0, X1, 2.0) == pytest.approx(2.0)
        assert est.empirical_renyi(([1.0], [0.0]), None, None, 2.0) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            est.empirical_renyi(([1.0], [0.0]), None, None, 1.0)


class TestRenyiEstimator:
    def test_bernoulli_example_is_a_valid_nontrivial_bound(self):
        truth = renyi_oracle(Discrete((0.1, 0.9)), Discrete((0.5, 0.5)), 2.0)
        e = est.RenyiEstimator(alpha=2.0, bound=3.0, beta=0.05, n=100000)
        for seed in range(2):
            value = e.estimate(bernoulli(0.9), bernoulli(0.5), np.random.default_rng(seed))
            assert 0.0 < value <= truth
        assert e.last_details_["eta"] == pytest.approx(est.eta_from_n(100000, 2.0, 3.0, 0.05))

    def test_identical_distributions_stay_below_zero(self):
        e = est.RenyiEstimator(n=20000)
        value = e.estimate(bernoulli(0.3), bernoulli(0.3), np.random.default_rng(0))
        assert value < 0

    def test_chebyshev_model(self):
        e = est.RenyiEstimator(alpha=2.0, bound=1.0, beta=0.05, n=50000, model="chebyshev",
                               epochs=10, step_size=0.1)
        value = e.estimate(bernoulli(0.9), bernoulli(0.5), np.random.default_rng(0))
        assert value <= math.log(1.64)
        assert e.fit_seconds_ > 0

    def test_sklearn_params(self):
        e = est.RenyiEstimator(alpha=3.0)
        assert clone(e).get_params()["alpha"] == 3.0


class TestHistogram:
    def test_lambda(self):
        lam = est.histogram_lambda(100, 0.01, 1 / 3, 0.15)
        assert lam == pytest.approx(4 * 100 * (1 + math.exp(0.02)) * 9)
        assert est.histogram_lambda(2, 0.0, 0.5, 0.01) == pytest.approx(12 * 2 / 1e-4)

    def test_statistic(self):
        assert est.histogram_statistic([5, 1, 4], [2, 3, 4], 10, 0.0) == pytest.approx(0.3)

    def test_discrete_outputs_on_point_masses(self):
        # outputs 1 vs 2 on a universe of 2: the statistic is exactly 1 before the eta slack
        e = est.HistogramEstimator(epsilon=0.5, universe=2, eta=0.2, discrete=True)
        value = e.estimate(point_mass(1.0), point_mass(2.0), np.random.default_rng(0))
        assert value == pytest.approx(0.8)

    def test_discrete_range_checked(self):
        e = est.HistogramEstimator(universe=2, discrete=True)
        with pytest.raises(ValueError, match="integers"):
            e.estimate(point_mass(0.0), point_mass(1.0), np.random.default_rng(0))

    def test_rejects_vector_outputs(self):
        vec = sampler_of(lambda n, rng: rng.random((n, 3)))
        with pytest.raises(est.IncompatibleInputError):
            est.HistogramEstimator().estimate(vec, vec, np.random.default_rng(0))

    def test_quantile_bins_are_equal_mass(self):
        pilot = np.random.default_rng(0).standard_cauchy(10000)
        edges = est.quantile_bin_edges(pilot, 10)
        counts = np.bincount(np.searchsorted(edges, pilot, side="right"), minlength=10)
        assert counts.min() >= 990 and counts.max() <= 1010

    def test_identical_continuous_is_below_zero(self):
        lap = sampler_of(lambda n, rng: rng.laplace(size=n))
        value = est.HistogramEstimator(epsilon=0.1).estimate(lap, lap, np.random.default_rng(1))
        assert value < 0


class TestHockeyStick:
    def test_gamma_and_formula(self):
        assert est.hoeffding_gamma(50000, 1 / 3) == pytest.approx(math.sqrt(math.log(3) / 1e5))
        # perfect accuracy, no slack: (1 + e^eps) - e^eps = 1
        assert est.hockey_stick_from_accuracy(1.0, 0.7, 10**12, 0.5) == pytest.approx(1.0, abs=1e-5)

    def test_mixture_label_rate(self):
        X, y = est.build_mixture_sample(point_mass(1.0), point_mass(0.0), math.log(3.0), 40000,
                                        np.random.default_rng(0))
        assert y.mean() == pytest.approx(0.25, abs=0.01)
        np.testing.assert_array_equal(X[:, 0], y)

    def test_bernoulli_example_is_a_valid_nontrivial_bound(self):
        eps = math.log(1.2)
        truth = hockey_stick_oracle(Discrete((0.1, 0.9)), Discrete((0.5, 0.5)), eps)
        assert truth == pytest.approx(0.3)
        e = est.HockeyStickEstimator(epsilon=eps, beta=0.05, m=100000)
        value = e.estimate(bernoulli(0.9), bernoulli(0.5), np.random.default_rng(0))
        assert 0.05 < value <= truth

    def test_constant_outputs_use_majority_label(self):
        e = est.HockeyStickEstimator(epsilon=1.0, m=2000)
        value = e.estimate(point_mass(0.0), point_mass(0.0), np.random.default_rng(0))
        # the best constant guess is label 0, right with probability e/(1+e)
        assert value < 0


class TestMMD:
    def test_point_masses_deterministic_delta(self):
        n, eps, beta = 1000, 0.1, 0.05
        e = est.MMDEstimator(epsilon=eps, beta=beta, n=n, bandwidth=1.0)
        value = e.estimate(point_mass(0.0), point_mass(1.0), np.random.default_rng(0))
        mmd2 = 2 - 2 * math.exp(-0.5)
        m_hat = mmd2 - 28 * math.log(2 / beta) / (3 * (n - 1)) - (math.exp(eps) - 1) ** 2
        a, b = math.exp(eps) - math.exp(-eps), 1 + math.exp(-eps)
        assert value == pytest.approx((math.sqrt(a * a + b * m_hat) - a) / b, rel=1e-12)
        assert e.last_details_["mmd2_mean"] == pytest.approx(mmd2)

    def test_clamped_when_no_signal(self):
        # with two terms the Bernstein slack dominates and the root's argument is clamped
        h = np.zeros(2)
        a = math.exp(1.0) - math.exp(-1.0)
        assert est.mmd_delta_from_terms(h, 1.0, 0.1) == pytest.approx(-a / (1 + math.exp(-1.0)))

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            est.mmd_delta_from_terms(np.zeros(1), 1.0, 0.1)
        with pytest.raises(ValueError):
            est.MMDEstimator(n=1).estimate(point_mass(0.0), point_mass(0.0),
                                           np.random.default_rng(0))

    def test_median_bandwidth(self):
        assert est.median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == pytest.approx(2.0)
        assert est.median_bandwidth(np.zeros((5, 1))) == 1e-6
        assert est.median_bandwidth(np.zeros((1, 1))) == 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=50), st.floats(0.01, 2.0))
    def test_bound_is_monotone_in_the_statistic(self, terms, eps):
        h = np.asarray(terms)
        low = est.mmd_delta_from_terms(h, eps, 0.1)
        assert est.mmd_delta_from_terms(h + 1.0, eps, 0.1) >= low - 1e-12


class TestRegistry:
    def test_names(self):
        assert set(est.ESTIMATORS) == {"renyi", "hockey_stick", "mmd", "histogram"}

    def test_epsilon_taken_from_property(self):
        e = est.make_estimator("mmd", Approximate(0.3, 0.01))
        assert e.epsilon == 0.3
        assert e.threshold(Approximate(0.3, 0.01)) == 0.01
        with pytest.raises(TypeError):
            e.threshold(Pure(0.3))

    def test_unknown(self):
        with pytest.raises(KeyError):
            est.make_estimator("kl")

    @pytest.mark.parametrize("beta", [0.0, 1.0])
    def test_beta_validated(self, beta):
        with pytest.raises(ValueError):
            est.eta_from_n(1000, 1.5, 1.0, beta)
