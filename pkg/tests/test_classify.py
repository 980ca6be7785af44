from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concentra.classify import (
    SIGN_CONCAVE,
    SIGN_CONVEX,
    SIGN_NEGATIVE,
    SIGN_POSITIVE,
    STRENGTH_MEDIUM,
    STRENGTH_STRONG,
    STRENGTH_WEAK,
    ClassifierThresholds,
    assign_classes,
    class_counts,
    classify_pattern,
    concavity_orientation,
    geometric_intervals,
)
from concentra.errors import InsufficientDataError, NumericError


def fit_view(slopes, r2):
    return SimpleNamespace(c1=np.asarray(slopes, dtype=float), r_squared=r2)


def moran_view(p):
    return SimpleNamespace(p_value=p)


def slopes_with_minority(n, minority_fraction, minority_sign, minority_at, densities):
    """Slope field with the minority sign placed along the density axis.

    ``minority_at`` is "high" or "low": where (by density rank) the
    minority-sign slopes sit.
    """
    slopes = np.full(n, 1.0 if minority_sign < 0 else -1.0)
    k = int(round(minority_fraction * n))
    order = np.argsort(densities)
    target = order[-k:] if minority_at == "high" else order[:k]
    slopes[target] = minority_sign
    return slopes


class TestConcavityOrientation:
    def test_negative_at_top_densities_is_concave(self):
        densities = np.arange(1.0, 101.0)
        slopes = np.where(densities > 90, -1.0, 1.0)
        assert concavity_orientation(slopes, densities) == SIGN_CONCAVE

    def test_positive_at_top_densities_is_convex(self):
        densities = np.arange(1.0, 101.0)
        slopes = np.where(densities > 90, 1.0, -1.0)
        assert concavity_orientation(slopes, densities) == SIGN_CONVEX

    def test_single_signed_rejected(self):
        with pytest.raises(ValueError):
            concavity_orientation([1.0, 2.0, 0.5], [1.0, 2.0, 3.0])

    def test_median_tie_falls_back_to_mean(self):
        densities = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 30.0])
        slopes = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        # medians tie at 2.0; the negative group's mean is dragged high
        assert concavity_orientation(slopes, densities) == SIGN_CONCAVE


class TestClassifyPattern:
    def test_autocorrelated_residuals_give_weak_untrusted(self):
        dens = np.linspace(1, 100, 100)
        v = classify_pattern(
            fit_view(np.full(100, 0.5), 0.36), moran_view(0.02), dens
        )
        assert v.strength == STRENGTH_WEAK
        assert not v.sign_trusted
        assert v.sign == SIGN_POSITIVE  # raw dominant sign still reported

    def test_consistent_negative_strong(self):
        dens = np.linspace(1, 100, 100)
        slopes = slopes_with_minority(100, 0.03, 1.0, "high", dens)
        v = classify_pattern(fit_view(slopes, 0.50), moran_view(0.13), dens)
        assert (v.sign, v.strength, v.sign_trusted) == (SIGN_NEGATIVE, STRENGTH_STRONG, True)

    def test_mixed_signs_concave_medium(self):
        dens = np.linspace(1, 100, 200)
        slopes = slopes_with_minority(200, 0.25, -1.0, "high", dens)
        v = classify_pattern(fit_view(slopes, 0.38), moran_view(0.68), dens)
        assert (v.sign, v.strength) == (SIGN_CONCAVE, STRENGTH_MEDIUM)
        assert v.dominant_sign_fraction == pytest.approx(0.75)

    def test_inverted_flips_concentric_sign_only(self):
        dens = np.linspace(1, 100, 50)
        v = classify_pattern(
            fit_view(np.full(50, -2.0), 0.52), moran_view(0.11), dens, inverted=True
        )
        assert v.sign == SIGN_POSITIVE
        assert v.inverted_semantics
        # non-concentric orientations are not flipped
        slopes = slopes_with_minority(50, 0.3, -1.0, "high", dens)
        v2 = classify_pattern(fit_view(slopes, 0.3), moran_view(0.5), dens, inverted=True)
        assert v2.sign == SIGN_CONCAVE

    def test_threshold_boundaries(self):
        dens = np.linspace(1, 100, 100)
        slopes = np.full(100, 1.0)
        # R^2 exactly at the strong threshold counts as strong
        v = classify_pattern(fit_view(slopes, 0.50), moran_view(0.5), dens)
        assert v.strength == STRENGTH_STRONG
        # Moran p exactly at alpha is not a rejection
        v2 = classify_pattern(fit_view(slopes, 0.3), moran_view(0.05), dens)
        assert v2.strength == STRENGTH_MEDIUM

    def test_sign_consistency_threshold_is_binding(self):
        dens = np.linspace(1, 100, 100)
        slopes = slopes_with_minority(100, 0.04, -1.0, "high", dens)
        strict = ClassifierThresholds(sign_consistency=0.97)
        v = classify_pattern(fit_view(slopes, 0.6), moran_view(0.5), dens, strict)
        assert v.sign == SIGN_CONCAVE
        lax = ClassifierThresholds(sign_consistency=0.95)
        v2 = classify_pattern(fit_view(slopes, 0.6), moran_view(0.5), dens, lax)
        assert v2.sign == SIGN_POSITIVE

    def test_nan_slopes_excluded(self):
        dens = np.linspace(1, 100, 40)
        slopes = np.full(40, 2.0)
        slopes[:5] = np.nan
        v = classify_pattern(fit_view(slopes, 0.7), moran_view(0.4), dens)
        assert v.sign == SIGN_POSITIVE

    def test_too_few_slopes(self):
        with pytest.raises(InsufficientDataError):
            classify_pattern(
                fit_view(np.ones(5), 0.5), moran_view(0.5), np.arange(5.0)
            )

    def test_scale_invariance_of_verdict(self):
        rng = np.random.default_rng(3)
        dens = rng.uniform(1, 500, 150)
        slopes = rng.normal(0.2, 0.05, 150)
        for scale in (1.0, 3.0, 1000.0):
            v = classify_pattern(fit_view(slopes * scale, 0.61), moran_view(0.3), dens)
            assert (v.sign, v.strength) == (SIGN_POSITIVE, STRENGTH_STRONG)


class TestGeometricIntervals:
    def test_uniform_values_prefer_equal_intervals(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(0, 1, 400)
        breaks = geometric_intervals(values, 4)
        widths = np.diff(breaks)
        # equal intervals win on uniform data: all widths (almost) equal
        assert widths.max() / widths.min() < 1.2

    def test_geometric_balances_powers_of_two(self):
        values = np.array([2.0**k for k in range(11)])
        breaks = geometric_intervals(values, 4)
        counts = class_counts(values, breaks)
        equal_breaks = np.linspace(values.min(), values.max(), 5)
        equal_counts = class_counts(values, equal_breaks)
        assert np.var(counts) < np.var(equal_counts)
        widths = np.diff(breaks)
        assert widths[-1] > widths[0]  # ratio above 1 was selected

    def test_breaks_cover_range_strictly_increasing(self):
        rng = np.random.default_rng(2)
        values = rng.lognormal(0, 1, 300)
        breaks = geometric_intervals(values, 7)
        assert breaks[0] == values.min()
        assert breaks[-1] == values.max()
        assert (np.diff(breaks) > 0).all()

    def test_constant_rejected(self):
        with pytest.raises(NumericError):
            geometric_intervals(np.ones(10), 4)

    def test_class_assignment_boundaries(self):
        breaks = np.array([0.0, 1.0, 2.0, 4.0])
        values = np.array([0.0, 0.99, 1.0, 3.9, 4.0])
        assert assign_classes(values, breaks).tolist() == [0, 0, 1, 2, 2]

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=8, max_size=200), st.integers(2, 9))
    def test_breaks_monotone_property(self, values, k):
        values = np.asarray(values)
        if np.unique(values).size < 2:
            return
        breaks = geometric_intervals(values, k)
        assert len(breaks) == k + 1
        assert (np.diff(breaks) > 0).all()
        assert class_counts(values, breaks).sum() == values.size
