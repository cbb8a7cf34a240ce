"""Exact second-moment formula, combinatorial ingredients, oracles."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from broken_sample.models import BernoulliModel, DiscreteModel, derive_rng, sample_dataset
from broken_sample.second_moment import (
    a_coefficients,
    a_limit_gap,
    brute_force_second_moment,
    proportional_product_bound,
    count_extensions,
    cycle_index_average,
    limit_product,
    second_moment,
    t_weights,
    two_core,
    unit_prepended,
)
from broken_sample.spectrum import discrete_spectrum, gaussian_values_truncated

# Symmetric binary pair pmf with non-trivial singular value exactly `lam`.
def binary_joint(lam):
    return BernoulliModel(1, 0.5, lam).cell_pmf()


class TestTWeights:
    def test_n3_m2(self):
        np.testing.assert_allclose(t_weights(3, 2), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_equal_sizes_collapse(self):
        w = t_weights(5, 5)
        np.testing.assert_allclose(w, [0, 0, 0, 0, 0, 1], atol=1e-15)

    def test_matches_exact_rationals(self):
        for n, m in [(4, 2), (7, 5), (12, 12), (9, 1), (20, 13)]:
            got = t_weights(n, m)
            for ell in range(m + 1):
                a, b = n - ell - 1, m - ell
                if ell == m:
                    exact = Fraction(1, math.comb(n, m))
                else:
                    exact = Fraction(math.comb(a, b) if 0 <= b <= a else 0, math.comb(n, m))
                assert got[ell] == pytest.approx(float(exact), rel=1e-13)

    @given(st.integers(min_value=1, max_value=400), st.data())
    @settings(max_examples=40, deadline=None)
    def test_sums_to_one(self, n, data):
        m = data.draw(st.integers(min_value=1, max_value=n))
        assert math.fsum(t_weights(n, m)) == pytest.approx(1.0, abs=1e-12)


class TestACoefficients:
    def test_unit_only(self):
        coeffs = a_coefficients([1.0], 6)
        np.testing.assert_allclose(coeffs.a, np.ones(7), atol=1e-15)

    def test_one_extra_value_geometric(self):
        # prod 1/((1-z)(1-0.25 z)) has coefficients (1 - 0.25^{l+1}) / 0.75
        coeffs = a_coefficients([1.0, 0.5], 10)
        expected = (1 - 0.25 ** (np.arange(11) + 1)) / 0.75
        np.testing.assert_allclose(coeffs.a, expected, atol=1e-14)
        np.testing.assert_allclose(coeffs.a[:3], [1.0, 1.25, 1.3125], atol=1e-15)

    def test_hand_recursion_cross_check(self):
        coeffs = a_coefficients([1.0, 0.5], 2)
        p1, p2 = coeffs.power_sums
        assert p1 == pytest.approx(1.25) and p2 == pytest.approx(1.0625)
        assert 2 * coeffs.a[2] == pytest.approx(p1 * coeffs.a[1] + p2 * coeffs.a[0])

    def test_non_decreasing_and_at_least_one(self):
        rng = derive_rng(5)
        vals = unit_prepended(np.sort(rng.random(6))[::-1] * 0.9)
        coeffs = a_coefficients(vals, 20)
        assert np.all(coeffs.a >= 1.0 - 1e-12)
        assert np.all(np.diff(coeffs.a) >= -1e-12)

    def test_requires_unit_head(self):
        with pytest.raises(ValueError, match="unit"):
            a_coefficients([0.5, 0.3], 3)

    def test_polynomial_multiplication_oracle(self):
        # Expand prod 1/(1 - z lam^2) by explicit series multiplication.
        vals = [1.0, 0.8, 0.45, 0.2]
        M = 12
        series = np.zeros(M + 1)
        series[0] = 1.0
        for lam in vals:
            geo = (lam**2) ** np.arange(M + 1)
            series = np.convolve(series, geo)[: M + 1]
        coeffs = a_coefficients(vals, M)
        np.testing.assert_allclose(coeffs.a, series, rtol=1e-12)


class TestCycleIndex:
    def test_identity_small_spectra(self):
        for vals in ([1.0, 0.5], [1.0, 0.8, 0.45, 0.2], [1.0, 1.0]):
            coeffs = a_coefficients(vals, 5)
            for ell in range(1, 6):
                assert cycle_index_average(vals, ell) == pytest.approx(
                    coeffs.a[ell], abs=1e-10)


class TestSecondMoment:
    def test_independence_is_one(self):
        assert second_moment(6, 3, [1.0]).value == pytest.approx(1.0, abs=1e-14)

    def test_equal_sizes_equals_a_n(self):
        vals = [1.0, 0.5, 0.25]
        res = second_moment(4, 4, vals)
        assert res.value == pytest.approx(a_coefficients(vals, 4).a[4], rel=1e-13)

    def test_matches_brute_force_n4_m3(self):
        joint = binary_joint(0.5)
        vals = unit_prepended(discrete_spectrum(joint).values)
        exact = second_moment(4, 3, vals).value
        oracle = brute_force_second_moment(4, 3, joint)
        assert exact == pytest.approx(oracle, rel=1e-10)

    def test_divergence_flag(self):
        res = second_moment(3, 3, [1.0, 1.0])
        assert res.diverges and math.isinf(res.limit_product)
        assert res.value == pytest.approx(4.0)  # a_3 of two unit values is l+1

    def test_power_sum_route_matches(self):
        vals = unit_prepended([0.6, 0.3, 0.1])
        sq = np.asarray(vals) ** 2
        p = np.array([np.sum(sq**j) for j in range(1, 6)])
        a = second_moment(7, 5, vals)
        b = second_moment(7, 5, power_sums=p, limit=limit_product(vals))
        assert a.value == pytest.approx(b.value, rel=1e-14)


class TestBruteForce:
    def test_independence(self):
        joint = np.outer([0.4, 0.6], [0.7, 0.3])
        assert brute_force_second_moment(3, 2, joint) == pytest.approx(1.0, abs=1e-12)

    def test_binary_n2_m2(self):
        assert brute_force_second_moment(2, 2, binary_joint(0.5)) == pytest.approx(
            1.3125, abs=1e-12)

    def test_binary_n3_m2(self):
        # (a_0 + a_1 + a_2) / 3 with a-sequence of (1, 0.5)
        assert brute_force_second_moment(3, 2, binary_joint(0.5)) == pytest.approx(
            1.1875, abs=1e-12)

    def test_size_guard(self):
        with pytest.raises(ValueError, match="size guard"):
            brute_force_second_moment(8, 7, binary_joint(0.5))

    def test_monte_carlo_identity_equal_sizes(self):
        # Empirical E0[Lbar^2] over H0 replicates vs a_n, within 5 sigma.
        n = 3
        model = DiscreteModel(binary_joint(0.5))
        vals = unit_prepended(discrete_spectrum(model.joint).values)
        a_n = a_coefficients(vals, n).a[n]
        rng = derive_rng(31)
        reps = 100_000
        xs = model.sample_x(rng, reps * n).reshape(reps, n)
        ys = model.sample_y(rng, reps * n).reshape(reps, n)
        lbar = np.zeros(reps)
        for pi in itertools.permutations(range(n)):
            term = np.ones(reps)
            for i in range(n):
                term *= model._lr[xs[:, pi[i]], ys[:, i]]
            lbar += term
        lbar /= math.factorial(n)
        sq = lbar**2
        se = sq.std(ddof=1) / math.sqrt(reps)
        assert abs(sq.mean() - a_n) < 5 * se


class TestTwoCore:
    def test_identity_injection(self):
        tc = two_core([0, 1, 2, 3])
        assert tc.core_set == (0, 1, 2, 3)
        assert tc.cycle_counts == {1: 4}

    def test_six_cycle_instance(self):
        # n=8, m=6, pi = (1->2, 2->3, 3->1, 4->7, 5->4, 6->8) one-based
        tc = two_core([1, 2, 0, 6, 3, 7])
        assert tc.core_set == (0, 1, 2)
        assert tc.cycle_counts == {3: 1}

    def test_all_outside_empty_core(self):
        m = 4
        tc = two_core([i + m for i in range(m)])
        assert tc.core_set == ()
        assert tc.cycle_counts == {}

    def test_rejects_non_injective(self):
        with pytest.raises(ValueError):
            two_core([0, 0, 1])

    def test_core_closure_property(self):
        rng = derive_rng(17)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            m = int(rng.integers(1, n + 1))
            pi = rng.permutation(n)[:m]
            tc = two_core(pi)
            core = set(tc.core_set)
            assert {pi[i] for i in core} == core
            # maximality: adding any index breaks closure under iteration
            for extra in set(range(m)) - core:
                orbit = extra
                stays = True
                for _ in range(m + 1):
                    orbit = pi[orbit]
                    if orbit >= m:
                        stays = False
                        break
                assert not stays
            assert sum(ln * c for ln, c in tc.cycle_counts.items()) == len(core)


class TestCountExtensions:
    def test_known_instance(self):
        assert count_extensions(8, 6, 3) == 24

    def test_full_core(self):
        assert count_extensions(9, 4, 4) == 1

    def test_zero_when_equal_sizes_partial_core(self):
        assert count_extensions(5, 5, 3) == 0

    @pytest.mark.parametrize("n,m", [(4, 3), (5, 4), (5, 3), (6, 2)])
    def test_exhaustive_grouping(self, n, m):
        # Group all injections by (core, restriction); each group's size
        # must equal count_extensions, and the sizes must add up to |S_{m,n}|.
        groups = {}
        for pi in itertools.permutations(range(n), m):
            tc = two_core(pi)
            key = (tc.core_set, tuple(pi[i] for i in tc.core_set))
            groups[key] = groups.get(key, 0) + 1
        total = 0
        for (core, _), size in groups.items():
            assert size == count_extensions(n, m, len(core))
            total += size
        assert total == math.perm(n, m)


class TestLimitGap:
    def test_geometric_gap_exact(self):
        res = a_limit_gap([1.0, 0.5], 30)
        expected = (1 / 3) * 4.0 ** (-np.arange(31))
        np.testing.assert_allclose(res.gaps, expected, atol=1e-12)
        assert res.fitted_rate == pytest.approx(4.0, rel=1e-2)

    def test_zero_lambda_all_gaps_vanish(self):
        res = a_limit_gap([1.0, 0.0], 12)
        np.testing.assert_array_equal(res.gaps, np.zeros(13))
        assert math.isinf(res.fitted_rate)

    def test_gaussian_tail_rate_above_one(self):
        vals, _, _ = gaussian_values_truncated(1, 0.6, 1e-14)
        res = a_limit_gap(unit_prepended(vals[:40]), 40)
        assert res.fitted_rate > 1.0

    def test_requires_subunit_lambda1(self):
        with pytest.raises(ValueError):
            a_limit_gap([1.0, 1.0], 5)


class TestCorollaryBound:
    def test_upper_bound_on_grid(self):
        # E0[Lbar^2] <= prod (1 - (m/n) lam^2)^{-1} whenever m < n
        rng = derive_rng(23)
        for _ in range(20):
            vals = unit_prepended(np.sort(rng.random(4))[::-1] * 0.95)
            n = int(rng.integers(3, 9))
            m = int(rng.integers(1, n))
            value = second_moment(n, m, vals).value
            bound = proportional_product_bound(n, m, vals)
            assert value <= bound * (1 + 1e-12)

    def test_infinite_at_equal_sizes(self):
        assert math.isinf(proportional_product_bound(4, 4, [1.0, 0.5]))
