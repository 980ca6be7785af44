"""Interpretation of a local-regression fit as a concentric pattern.

Three gates, applied in order:

1. Residual autocorrelation: a significant Moran's I on the fit's
   residuals means density alone cannot explain the determinant, so the
   effect is *weak* and the slope signs cannot be trusted (the dominant
   raw sign is still reported, flagged untrusted).
2. Sign consistency: when at least ``sign_consistency`` of the local
   slopes share the dominant sign the pattern is concentric with that
   sign; otherwise it is non-concentric, oriented concave or convex by
   where the minority sign sits along the density axis.
3. Strength: strong when the fit explains at least ``strong_r2`` of the
   determinant variance, medium otherwise.

Determinants measured through an inverse proxy (diffusion *delay* stands
in for penetration) carry an inverted flag that flips a concentric sign
at the end; concave/convex orientations are left alone.

Also here: geometric-interval class breaks for choropleth export, and
the static literature reference of expected pattern signs used in report
footnotes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, NumericError

SIGN_POSITIVE = "positive"
SIGN_NEGATIVE = "negative"
SIGN_CONCAVE = "non-concentric-concave"
SIGN_CONVEX = "non-concentric-convex"

STRENGTH_WEAK = "weak"
STRENGTH_MEDIUM = "medium"
STRENGTH_STRONG = "strong"

# Expected pattern signs per diffusion determinant from prior literature,
# for report footnotes only (never consulted by the classifier).
LITERATURE_PATTERNS = {
    "access_network_cost_per_user": "negative",
    "spectrum_usage": "positive",
    "competition": "positive",
    "state_subsidy": "negative",
    "community_commitment": "negative",
    "education": "positive",
    "income": "non-concentric-concave",
    "private_user_subsidy": "mixed",
    "service_penetration": "positive",
    "service_quality": "positive",
}

# Determinants that have no measurable proxy in this pipeline; reports
# emit them as unweighted "no data" rows with the literature sign.
REFERENCE_ONLY_DETERMINANTS = (
    ("access_network_cost_per_user", "negative"),
    ("spectrum_usage", "positive"),
    ("state_subsidy", "negative"),
    ("private_user_subsidy", "negative"),
)


@dataclass(frozen=True)
class ClassifierThresholds:
    alpha: float = 0.05
    strong_r2: float = 0.50
    sign_consistency: float = 0.95

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not 0 < self.strong_r2 < 1:
            raise ValueError("strong_r2 must be in (0, 1)")
        if not 0.5 < self.sign_consistency <= 1:
            raise ValueError("sign_consistency must be in (0.5, 1]")


@dataclass(frozen=True)
class PatternVerdict:
    sign: str
    strength: str
    sign_trusted: bool
    dominant_sign_fraction: float
    inverted_semantics: bool

    def __post_init__(self) -> None:
        if self.strength == STRENGTH_WEAK and self.sign_trusted:
            raise ValueError("weak verdicts cannot carry a trusted sign")


# Slopes within this relative tolerance of zero carry no sign: flat
# response plateaus (integer-valued proxies) produce +-1e-16-scale slopes
# whose float sign is arbitrary.
_SLOPE_ZERO_REL_TOL = 1e-9


def _slope_zero_tol(slopes: np.ndarray) -> float:
    peak = float(np.max(np.abs(slopes))) if slopes.size else 0.0
    return _SLOPE_ZERO_REL_TOL * peak


def _dominant_sign(slopes: np.ndarray) -> tuple[str, float]:
    """Dominant slope sign and its fraction; numerical zeros count as
    nonnegative."""
    tol = _slope_zero_tol(slopes)
    neg = int((slopes < -tol).sum())
    nonneg = slopes.size - neg
    if nonneg >= neg:
        return SIGN_POSITIVE, nonneg / slopes.size
    return SIGN_NEGATIVE, neg / slopes.size


def concavity_orientation(
    local_slopes: Sequence[float], densities: Sequence[float]
) -> str:
    """Orient a sign-changing slope field as concave or convex.

    Negative-slope regions sitting at higher densities mean the
    determinant peaks at intermediate density (concave); the mirror case
    is convex.  Ties on the median fall back to the mean, then to
    concave.  Requires both slope signs present.
    """
    slopes = np.asarray(local_slopes, dtype=float)
    dens = np.asarray(densities, dtype=float)
    if slopes.shape != dens.shape:
        raise ValueError("slopes and densities must align")
    tol = _slope_zero_tol(slopes)
    neg = slopes < -tol
    pos = slopes > tol
    if not neg.any() or not pos.any():
        raise ValueError("concavity orientation needs both slope signs")
    med_neg = float(np.median(dens[neg]))
    med_pos = float(np.median(dens[pos]))
    if med_neg > med_pos:
        return SIGN_CONCAVE
    if med_neg < med_pos:
        return SIGN_CONVEX
    mean_neg = float(dens[neg].mean())
    mean_pos = float(dens[pos].mean())
    if mean_neg > mean_pos:
        return SIGN_CONCAVE
    if mean_neg < mean_pos:
        return SIGN_CONVEX
    return SIGN_CONCAVE  # fully degenerate tie


def classify_pattern(
    fit,
    moran,
    densities: Sequence[float],
    thresholds: ClassifierThresholds = ClassifierThresholds(),
    inverted: bool = False,
) -> PatternVerdict:
    """Classify one determinant's density effect from its fit and Moran test.

    ``fit`` needs ``c1`` (local slopes, NaN for failed fits) and
    ``r_squared``; ``moran`` needs ``p_value``.  ``densities`` aligns
    with ``fit.c1``.
    """
    c1 = np.asarray(fit.c1, dtype=float)
    dens = np.asarray(densities, dtype=float)
    if c1.shape != dens.shape:
        raise ValueError("densities must align with the fit's slopes")
    ok = np.isfinite(c1)
    slopes = c1[ok]
    dens = dens[ok]
    if slopes.size < 10:
        raise InsufficientDataError(
            f"classification needs >= 10 local slopes, got {slopes.size}"
        )
    sign, fraction = _dominant_sign(slopes)
    tol = _slope_zero_tol(slopes)

    if moran.p_value < thresholds.alpha:
        strength = STRENGTH_WEAK
        trusted = False
    else:
        trusted = True
        if fraction >= thresholds.sign_consistency:
            pass  # concentric with the dominant sign
        elif (slopes < -tol).any() and (slopes > tol).any():
            sign = concavity_orientation(slopes, dens)
        # else: numerical zeros dilute a single-signed field; stays concentric
        strength = (
            STRENGTH_STRONG if fit.r_squared >= thresholds.strong_r2 else STRENGTH_MEDIUM
        )
    if inverted and sign in (SIGN_POSITIVE, SIGN_NEGATIVE):
        sign = SIGN_NEGATIVE if sign == SIGN_POSITIVE else SIGN_POSITIVE
    return PatternVerdict(
        sign=sign,
        strength=strength,
        sign_trusted=trusted,
        dominant_sign_fraction=fraction,
        inverted_semantics=inverted,
    )


# ---------------------------------------------------------------------------
# Geometric-interval class breaks


def _breaks_for_ratio(vmin: float, vmax: float, k: int, r: float) -> np.ndarray | None:
    """Breaks whose class widths form a geometric progression with ratio r."""
    span = vmax - vmin
    if r == 1.0:
        widths = np.full(k, span / k)
    else:
        w0 = span * (r - 1.0) / (r**k - 1.0)
        widths = w0 * r ** np.arange(k)
    if np.any(widths < span * 1e-12):
        return None  # would collapse classes at this ratio
    breaks = vmin + np.concatenate(([0.0], np.cumsum(widths)))
    breaks[-1] = vmax
    return breaks


def _count_variance(values: np.ndarray, breaks: np.ndarray) -> float:
    counts = class_counts(values, breaks)
    return float(np.var(counts))


def assign_classes(values: Sequence[float], breaks: np.ndarray) -> np.ndarray:
    """Class index per value: class i covers [b_i, b_{i+1}), last closed."""
    v = np.asarray(values, dtype=float)
    idx = np.searchsorted(breaks[1:-1], v, side="right")
    return np.clip(idx, 0, len(breaks) - 2)


def class_counts(values: Sequence[float], breaks: np.ndarray) -> np.ndarray:
    idx = assign_classes(values, breaks)
    return np.bincount(idx, minlength=len(breaks) - 1)


def geometric_intervals(values: Sequence[float], class_count: int = 7) -> np.ndarray:
    """Class breaks balancing per-class counts against interval length.

    Widths grow geometrically; the ratio is searched over [1.01, 100]
    (coarse log grid plus bisection refinement) to minimize the variance
    of per-class counts, and plain equal intervals win when no geometric
    ratio beats them.
    """
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        raise NumericError("no finite values to classify")
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    vmin, vmax = float(v.min()), float(v.max())
    if vmin == vmax:
        raise NumericError("constant values cannot be classified")

    def objective(r: float) -> float:
        breaks = _breaks_for_ratio(vmin, vmax, class_count, r)
        return math.inf if breaks is None else _count_variance(v, breaks)

    lo, hi = 1.01, 100.0
    grid = np.geomspace(lo, hi, 64)
    scores = [objective(r) for r in grid]
    best_idx = int(np.argmin(scores))
    best_r, best_score = float(grid[best_idx]), scores[best_idx]
    # bisect the bracket around the best grid point (objective is
    # piecewise constant in r, so refine by repeated interval halving)
    left = float(grid[max(best_idx - 1, 0)])
    right = float(grid[min(best_idx + 1, len(grid) - 1)])
    for _ in range(24):
        mids = np.linspace(left, right, 5)
        mscores = [objective(m) for m in mids]
        j = int(np.argmin(mscores))
        if mscores[j] < best_score or (mscores[j] == best_score and mids[j] < best_r):
            best_r, best_score = float(mids[j]), mscores[j]
        width = (right - left) / 4.0
        left = max(lo, best_r - width)
        right = min(hi, best_r + width)
        if right - left < 1e-9:
            break
    equal_breaks = _breaks_for_ratio(vmin, vmax, class_count, 1.0)
    if _count_variance(v, equal_breaks) <= best_score:
        return equal_breaks
    return _breaks_for_ratio(vmin, vmax, class_count, best_r)
