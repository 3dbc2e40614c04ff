import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecast_archive.convert import (
    CONSISTENCY_GRID,
    ConversionError,
    UncoveredMassError,
    UncoveredSampleError,
    check_consistency,
    named_cdf,
    named_mean,
    named_ppf,
    named_to_bin,
    named_to_quantile,
    named_to_sample,
    sample_quantile,
    sample_to_bin,
    sample_to_quantile,
    to_point,
)
from forecast_archive.model import Bin, Named, NamedFamily, Point, Quantile, Sample

NORM = Named(NamedFamily.NORM, (0.0, 1.0))
GAMMA21 = Named(NamedFamily.GAMMA, (2.0, 1.0))
POIS2 = Named(NamedFamily.POIS, (2.0,))

# high-precision values frozen from an independent numerical-integration /
# root-finding oracle (40-digit arithmetic)
GAMMA21_CDF_AT_1 = 0.26424111765711535681
NORM_PPF_975 = 1.9599639845400542355


def pois_pmf(lam, k):
    return math.exp(-lam) * lam**k / math.factorial(k)


def pois_quantile_bruteforce(lam, level):
    cum = 0.0
    k = 0
    while True:
        cum += pois_pmf(lam, k)
        if cum >= level:
            return k
        k += 1


class TestNamedCdf:
    def test_norm_symmetry(self):
        assert named_cdf(NORM, 0.0) == pytest.approx(0.5, abs=1e-12)

    def test_pois_at_zero(self):
        assert named_cdf(POIS2, 0) == pytest.approx(math.exp(-2), abs=1e-12)

    def test_gamma_vs_integration_oracle(self):
        assert named_cdf(GAMMA21, 1.0) == pytest.approx(GAMMA21_CDF_AT_1, abs=1e-10)


class TestNamedQuantile:
    def test_norm_median(self):
        assert named_ppf(NORM, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_norm_975(self):
        assert named_ppf(NORM, 0.975) == pytest.approx(NORM_PPF_975, abs=1e-5)

    def test_pois_median_vs_bruteforce(self):
        assert named_ppf(POIS2, 0.5) == pois_quantile_bruteforce(2.0, 0.5) == 2

    def test_discrete_smallest_reaching_level(self):
        for level in (0.05, 0.25, 0.5, 0.9, 0.99):
            k = named_ppf(POIS2, level)
            assert named_cdf(POIS2, k) >= level
            if k > 0:
                assert named_cdf(POIS2, k - 1) < level

    def test_element_construction(self):
        q = named_to_quantile(NORM, [0.25, 0.5, 0.75])
        assert isinstance(q, Quantile)
        assert q.levels == (0.25, 0.5, 0.75)

    def test_inversion_property_continuous(self):
        lnorm = Named(NamedFamily.LNORM, (0.0, 0.5))
        for named in (NORM, GAMMA21, lnorm):
            for level in (0.025, 0.25, 0.5, 0.75, 0.975):
                assert named_cdf(named, named_ppf(named, level)) == pytest.approx(
                    level, abs=1e-8
                )


class TestNamedToSample:
    def test_deterministic(self):
        a = named_to_sample(NORM, 100, seed=11)
        b = named_to_sample(NORM, 100, seed=11)
        assert a == b
        assert named_to_sample(NORM, 100, seed=12) != a

    def test_clt_mean_bound(self):
        n = 100_000
        sample = named_to_sample(NORM, n, seed=5)
        assert abs(math.fsum(sample.values) / n) < 4 / math.sqrt(n)

    def test_degenerate_binom(self):
        sample = named_to_sample(Named(NamedFamily.BINOM, (1, 1.0)), 50, seed=3)
        assert set(sample.values) == {1}

    def test_discrete_values_are_ints(self):
        sample = named_to_sample(POIS2, 10, seed=1)
        assert all(isinstance(v, int) for v in sample.values)


class TestNamedToBin:
    def test_norm_symmetric_split(self):
        b = named_to_bin(NORM, [-10.0, 0.0], upper=10.0)
        assert b.probabilities[0] == pytest.approx(0.5, abs=1e-9)
        assert b.probabilities[1] == pytest.approx(0.5, abs=1e-9)

    def test_pois_point_masses(self):
        b = named_to_bin(Named(NamedFamily.POIS, (1.0,)), list(range(21)))
        assert b.probabilities[0] == pytest.approx(math.exp(-1), abs=1e-6)
        assert b.probabilities[1] == pytest.approx(math.exp(-1), abs=1e-6)

    def test_uncovered_mass_raises(self):
        with pytest.raises(UncoveredMassError):
            named_to_bin(NORM, [0.0], upper=1.0)

    def test_renormalized_to_one(self):
        b = named_to_bin(GAMMA21, [0.0, 1.0, 2.0, 4.0], upper=50.0)
        assert math.fsum(b.probabilities) == pytest.approx(1.0, abs=1e-12)


class TestSampleToBin:
    def test_counting(self):
        b = sample_to_bin(Sample((1, 1, 2, 3)), [1, 2, 3])
        assert b.probabilities == (0.5, 0.25, 0.25)

    def test_all_in_one_bin(self):
        b = sample_to_bin(Sample((2, 2, 2)), [1, 2, 3])
        assert b.probabilities == (0.0, 1.0, 0.0)

    def test_uncovered_sample(self):
        with pytest.raises(UncoveredSampleError):
            sample_to_bin(Sample((1, 99)), [1, 2, 3])

    def test_interval_membership(self):
        b = sample_to_bin(Sample((0.5, 1.0, 9.9, 10.0)), [0.0, 1.0, 10.0], upper=20.0)
        assert b.probabilities == (0.25, 0.5, 0.25)


class TestSampleToQuantile:
    def test_type1_examples(self):
        q = sample_to_quantile(Sample((10, 20, 30, 40)), [0.5, 0.75])
        assert q.values == (20, 30)

    def test_constant_sample(self):
        q = sample_to_quantile(Sample((7, 7, 7)), [0.1, 0.5, 0.9])
        assert q.values == (7, 7, 7)

    def test_unsorted_input(self):
        q = sample_to_quantile(Sample((40, 10, 30, 20)), [0.5])
        assert q.values == (20,)

    @given(
        st.lists(st.integers(-1000, 1000), min_size=1, max_size=40),
        st.sets(
            st.floats(min_value=0.01, max_value=0.99, allow_nan=False),
            min_size=1,
            max_size=6,
        ).map(sorted),
    )
    @settings(max_examples=80, deadline=None)
    def test_monotone_and_permutation_invariant(self, values, levels):
        import random

        q = sample_to_quantile(Sample(tuple(values)), levels)
        assert list(q.values) == sorted(q.values)
        shuffled = list(values)
        random.Random(0).shuffle(shuffled)
        assert sample_to_quantile(Sample(tuple(shuffled)), levels) == q


class TestToPoint:
    def test_named_median_symmetry(self):
        assert to_point(Named(NamedFamily.NORM, (3.0, 1.0)), "median").value == pytest.approx(3.0)

    def test_sample_mean(self):
        assert to_point(Sample((1, 2, 3, 4)), "mean").value == pytest.approx(2.5)

    def test_bin_median_crosses_half(self):
        # cumulative-sum oracle: 0.2, 0.7, 1.0 -> first >= 0.5 is the 2nd category
        b = Bin((("low", 0.2), ("moderate", 0.5), ("high", 0.3)))
        cum, oracle = 0.0, None
        for cat, prob in b.entries:
            cum += prob
            if cum >= 0.5:
                oracle = cat
                break
        assert oracle == "moderate"
        assert to_point(b, "median").value == "moderate"

    def test_named_median_equals_quantile_at_half(self):
        for named in (NORM, GAMMA21, POIS2, Named(NamedFamily.BINOM, (10, 0.3))):
            assert to_point(named, "median").value == named_to_quantile(named, [0.5]).values[0]

    def test_named_mean_analytic(self):
        assert named_mean(Named(NamedFamily.LNORM, (0.0, 1.0))) == pytest.approx(
            math.exp(0.5)
        )
        assert named_mean(Named(NamedFamily.NEGBIN, (5.0, 0.5))) == pytest.approx(5.0)

    def test_quantile_median_requires_level(self):
        q = Quantile(((0.25, 1.0), (0.75, 2.0)))
        with pytest.raises(ConversionError):
            to_point(q, "median")
        with pytest.raises(ConversionError):
            to_point(q, "mean")
        q2 = Quantile(((0.25, 1.0), (0.5, 1.5), (0.75, 2.0)))
        assert to_point(q2, "median").value == 1.5

    def test_bin_mean_weighted(self):
        b = Bin(((0.0, 0.25), (10.0, 0.75)))
        assert to_point(b, "mean").value == pytest.approx(7.5)


class TestConsistency:
    def test_named_self_consistency(self):
        q = named_to_quantile(NORM, list(CONSISTENCY_GRID))
        assert check_consistency([NORM, q], tolerance=1e-9) == []

    def test_point_vs_bin_median(self):
        b = Bin(((40.0, 0.2), (50.0, 0.5), (60.0, 0.3)))
        found = check_consistency([Point(5.0), b], tolerance=1.0)
        assert len(found) == 1
        assert found[0].level == 0.5
        assert {found[0].kind_a, found[0].kind_b} == {"point", "bin"}

    def test_sample_vs_named_monte_carlo(self):
        sample = named_to_sample(NORM, 100_000, seed=99)
        assert check_consistency([sample, NORM], tolerance=0.05) == []

    def test_categorical_probabilities(self):
        b = Bin((("low", 0.2), ("moderate", 0.5), ("high", 0.3)))
        close = Sample(tuple(["low"] * 2 + ["moderate"] * 5 + ["high"] * 3))
        assert check_consistency([b, close], tolerance=0.05) == []
        far = Sample(tuple(["low"] * 8 + ["moderate"] * 1 + ["high"] * 1))
        assert check_consistency([b, far], tolerance=0.05) != []

    def test_binary_implied_complement(self):
        b = Bin(((True, 0.7),))
        sample = Sample(tuple([True] * 7 + [False] * 3))
        assert check_consistency([b, sample], tolerance=0.01) == []

    def test_fewer_than_two_elements(self):
        assert check_consistency([NORM], tolerance=0.1) == []


class TestDistributionLawAgreement:
    """Sampling then binning must agree with direct binning."""

    @pytest.mark.parametrize(
        "named,cats,upper",
        [
            (NORM, [-10.0, -1.0, 0.0, 1.0], 10.0),
            (POIS2, list(range(26)), None),
        ],
    )
    def test_sampled_bins_match(self, named, cats, upper):
        n = 100_000
        direct = named_to_bin(named, cats, upper=upper)
        sample = named_to_sample(named, n, seed=20)
        empirical = sample_to_bin(sample, cats, upper=upper)
        for p, p_hat in zip(direct.probabilities, empirical.probabilities):
            bound = 3.0 * math.sqrt(p * (1.0 - p) / n)
            assert abs(p_hat - p) <= max(bound, 1e-12)


class TestSampleQuantileScalar:
    def test_open_interval_enforced(self):
        with pytest.raises(ConversionError):
            sample_quantile([1, 2, 3], 0.0)
        with pytest.raises(ConversionError):
            sample_quantile([1, 2, 3], 1.0)
