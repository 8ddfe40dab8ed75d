import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infoleak.divergence import (
    Channel,
    DiscreteJoint,
    GaussianFeatureModel,
    concentration_check,
    cond_info_density,
    discrete_tail,
    egamma_discrete,
    egamma_gaussian,
    egamma_sup_bruteforce,
    egamma_tail_integral,
    find_tail_dpi_violation,
    gaussian_tail,
    info_density_discrete,
    info_density_gaussian,
    leakage_egamma,
    q_function,
    theta,
    wilson_interval,
)
from infoleak.errors import (
    AlphabetTooLargeError,
    ContractViolationError,
    InvalidParameterError,
    UndefinedDensityError,
)


def prob_vectors(n_min=1, n_max=8):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
            st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
        )
    ).filter(lambda pq: sum(pq[0]) > 1e-3 and sum(pq[1]) > 1e-3).map(
        lambda pq: (np.array(pq[0]) / sum(pq[0]), np.array(pq[1]) / sum(pq[1]))
    )


class TestInfoDensityDiscrete:
    def test_independent_table_is_zero(self):
        joint = DiscreteJoint(np.outer([0.3, 0.7], [0.2, 0.5, 0.3]))
        for s in range(2):
            for x in range(3):
                assert abs(info_density_discrete(joint, s, x)) < 1e-12

    def test_perfectly_correlated(self, correlated_binary):
        assert info_density_discrete(correlated_binary, 0, 0) == pytest.approx(math.log(2), abs=1e-12)

    def test_hand_value(self):
        joint = DiscreteJoint(np.array([[0.4, 0.1], [0.1, 0.4]]))
        assert info_density_discrete(joint, 0, 0) == pytest.approx(math.log(1.6), abs=1e-12)

    def test_zero_marginal_raises(self):
        joint = DiscreteJoint(np.array([[0.5, 0.0], [0.5, 0.0]]))
        with pytest.raises(UndefinedDensityError):
            info_density_discrete(joint, 0, 1)

    def test_chain_rule_sums_to_full_density(self, rng):
        t = rng.dirichlet(np.ones(2 * 3 * 2 * 2)).reshape(2, 3, 2, 2)
        joint = DiscreteJoint(t)
        x = (1, 0, 1)
        total = sum(joint.cond_density(1, x, j) for j in range(1, 4))
        assert total == pytest.approx(joint.prefix_density(1, x, 3), abs=1e-12)


class TestInfoDensityGaussian:
    def test_independent_is_zero(self):
        m = GaussianFeatureModel(3, 0.0)
        assert info_density_gaussian(m, np.ones(3), -np.ones(3)) == pytest.approx(0.0, abs=1e-15)

    def test_origin(self):
        m = GaussianFeatureModel(1, 0.5)
        assert info_density_gaussian(m, [0.0], [0.0]) == pytest.approx(-0.5 * math.log(0.75), abs=1e-12)

    def test_off_diagonal_point(self):
        m = GaussianFeatureModel(1, 0.5)
        expected = -0.5 * math.log(0.75) - (0.25 + 0.25 + 1.0) / 1.5
        assert info_density_gaussian(m, [1.0], [-1.0]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(-0.8562, abs=1e-4)

    def test_matches_numeric_pdf_ratio(self, rng):
        from scipy.stats import multivariate_normal, norm

        rho = 0.3
        m = GaussianFeatureModel(1, rho)
        joint = multivariate_normal([0, 0], [[1, rho], [rho, 1]])
        for s, x in rng.normal(size=(10, 2)):
            ref = joint.logpdf([s, x]) - norm.logpdf(s) - norm.logpdf(x)
            assert info_density_gaussian(m, [s], [x]) == pytest.approx(ref, abs=1e-10)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
    def test_invalid_rho(self, rho):
        with pytest.raises(InvalidParameterError):
            GaussianFeatureModel(1, rho)

    def test_mutual_information_closed_form(self):
        assert GaussianFeatureModel(1, 0.5).mutual_information == pytest.approx(0.1438410362, abs=1e-9)


class TestCondInfoDensity:
    def test_equal_prefix(self):
        assert cond_info_density(0.7, 0.7) == 0.0

    def test_empty_prefix(self):
        assert cond_info_density(0.594, 0.0) == pytest.approx(0.594)


class TestEgammaDiscrete:
    def test_identical(self):
        p = [0.2, 0.3, 0.5]
        assert egamma_discrete(p, p, 1.0) == 0.0
        assert egamma_discrete(p, p, 3.0) == 0.0

    def test_total_variation(self):
        assert egamma_discrete([0.5, 0.5], [0.9, 0.1], 1.0) == pytest.approx(0.4, abs=1e-15)

    def test_gamma_two(self):
        assert egamma_discrete([0.5, 0.5], [0.9, 0.1], 2.0) == pytest.approx(0.3, abs=1e-15)

    def test_gamma_below_one(self):
        with pytest.raises(InvalidParameterError):
            egamma_discrete([0.5, 0.5], [0.5, 0.5], 0.9)

    @settings(max_examples=200, deadline=None)
    @given(prob_vectors(), st.floats(1.0, 20.0))
    def test_range_and_bruteforce(self, pq, gamma):
        P, Q = pq
        v = egamma_discrete(P, Q, gamma)
        assert -1e-15 <= v <= 1.0 + 1e-12
        assert v == pytest.approx(egamma_sup_bruteforce(P, Q, gamma), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(prob_vectors(2, 6), st.floats(1.0, 10.0), st.floats(1.0, 3.0))
    def test_nonincreasing_in_gamma(self, pq, gamma, factor):
        P, Q = pq
        assert egamma_discrete(P, Q, gamma * factor) <= egamma_discrete(P, Q, gamma) + 1e-15

    @settings(max_examples=100, deadline=None)
    @given(prob_vectors(2, 6), st.floats(1.0, 10.0), st.integers(0, 2 ** 31))
    def test_data_processing(self, pq, gamma, seed):
        P, Q = pq
        r = np.random.default_rng(seed)
        W = Channel(r.dirichlet(np.ones(3), size=len(P)))
        assert egamma_discrete(W.apply(P), W.apply(Q), gamma) <= egamma_discrete(P, Q, gamma) + 1e-12


class TestEgammaBruteforce:
    def test_identical_distributions(self):
        v, A = egamma_sup_bruteforce([0.25, 0.75], [0.25, 0.75], 1.0, return_set=True)
        assert v == 0.0

    def test_optimal_set(self):
        v, A = egamma_sup_bruteforce([0.5, 0.5], [0.9, 0.1], 1.0, return_set=True)
        assert v == pytest.approx(0.4, abs=1e-15)
        assert A == frozenset({1})

    def test_random_triples(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 12))
            P, Q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            g = 1 + rng.exponential()
            assert egamma_sup_bruteforce(P, Q, g) == pytest.approx(egamma_discrete(P, Q, g), abs=1e-12)

    def test_alphabet_too_large(self):
        p = np.full(64, 1 / 64)
        with pytest.raises(AlphabetTooLargeError):
            egamma_sup_bruteforce(p, p, 1.0)


class TestGaussian:
    def test_q_values(self):
        assert q_function(0.0) == 0.5
        ref = float(mpmath.erfc(1 / mpmath.sqrt(2)) / 2)
        assert q_function(1.0) == pytest.approx(ref, rel=1e-14)
        assert q_function(1.0) == pytest.approx(0.158655, abs=1e-6)
        assert q_function(-1.0) == pytest.approx(1 - q_function(1.0), abs=1e-15)

    def test_q_deep_tail_against_mpmath(self):
        for v in (5.0, 10.0, 20.0, 30.0):
            ref = float(mpmath.erfc(v / mpmath.sqrt(2)) / 2)
            assert q_function(v) == pytest.approx(ref, rel=1e-12)

    def test_zero_gap(self):
        assert egamma_gaussian(0.0, 1.0, 1.0) == 0.0
        assert egamma_gaussian(0.0, 2.0, 5.0) == 0.0

    def test_calibration_constants(self):
        assert egamma_gaussian(1, 1, math.exp(0.5)) == pytest.approx(0.238, abs=0.005)
        assert egamma_gaussian(1, 1, math.exp(0.74)) == pytest.approx(0.180, abs=0.005)

    def test_closed_form_against_numeric_integral(self):
        from scipy import integrate, stats

        a, lam, g = 0.8, 0.7, math.exp(0.3)
        f = lambda y: max(stats.norm.pdf(y, a, lam) - g * stats.norm.pdf(y, 0, lam), 0.0)
        ref = integrate.quad(f, -10, 10, points=[a / 2], limit=200)[0]
        assert egamma_gaussian(a, lam, g) == pytest.approx(ref, abs=1e-9)

    def test_invalid_lambda(self):
        with pytest.raises(InvalidParameterError):
            egamma_gaussian(1.0, 0.0, 1.0)

    def test_theta_monotone(self):
        vals = [theta(0.5, a, 1.0) for a in np.linspace(0, 3, 30)]
        assert np.all(np.diff(vals) >= -1e-15)
        vals = [theta(0.5, 1.0, lam) for lam in np.linspace(0.2, 5, 30)]
        assert np.all(np.diff(vals) <= 1e-15)


class TestTailIntegral:
    def test_zero_tail(self):
        assert egamma_tail_integral(lambda t: 0.0, 0.5) == 0.0

    def test_gaussian_pair(self):
        v = egamma_tail_integral(gaussian_tail(1.0, 1.0), 0.5)
        assert v == pytest.approx(egamma_gaussian(1, 1, math.exp(0.5)), abs=1e-3)

    def test_discrete_step_tail(self):
        v = egamma_tail_integral(discrete_tail([0.5, 0.5], [0.9, 0.1]), 0.0)
        assert v == pytest.approx(0.4, abs=1e-3)

    def test_non_monotone_tail_rejected(self):
        with pytest.raises(ContractViolationError):
            egamma_tail_integral(lambda t: 0.5 + 0.4 * math.sin(t), 0.0)


class TestConcentration:
    def test_independent_model_has_no_tail(self):
        rep = concentration_check(GaussianFeatureModel(1, 0.0), 0.3, [0.1, 1.0], 10 ** 4, 0)
        assert all(r.empirical_tail == 0 for r in rep.rows)
        assert not rep.violations

    def test_gaussian_no_violations(self):
        rep = concentration_check(GaussianFeatureModel(1, 0.5), 0.5, [0.1, 0.5, 1.0], 10 ** 5, 1)
        assert not rep.violations

    def test_correlated_binary_under_marginal(self, correlated_binary):
        rep = concentration_check(correlated_binary, 0, [0.5], 10 ** 5, 2)
        assert rep.rows[0].empirical_tail == pytest.approx(0.5, abs=0.01)
        assert not rep.violations

    def test_csv_header(self):
        rep = concentration_check(GaussianFeatureModel(1, 0.2), 0.0, [1.0], 1000, 0)
        assert rep.to_csv().splitlines()[0].startswith("t,")

    def test_wilson_contains_proportion(self):
        lo, hi = wilson_interval(30, 100)
        assert lo < 0.3 < hi


class TestDpiCounterexample:
    def test_identity_channel_never_a_witness(self):
        joint = DiscreteJoint(np.full((2, 4), 1 / 8))
        assert find_tail_dpi_violation(joint, 500, 0) is None

    def test_witness_respects_egamma_dpi(self, rng):
        found = None
        for k in range(50):
            t = rng.dirichlet(np.full(8, 0.7)).reshape(2, 4)
            found = find_tail_dpi_violation(DiscreteJoint(t), 10 ** 4, k)
            if found is not None:
                break
        assert found is not None
        assert found.gap > 0
        assert found.dpi_holds


def test_leakage_egamma_directions(correlated_binary):
    assert leakage_egamma(correlated_binary, 0, 1.0) == pytest.approx(0.5)
    assert leakage_egamma(correlated_binary, 0, 1.0, "reverse") == pytest.approx(0.5)
    with pytest.raises(InvalidParameterError):
        leakage_egamma(correlated_binary, 0, 1.0, "sideways")
