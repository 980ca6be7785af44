#!/usr/bin/env python3
"""Classify the six Finnish diffusion determinants from summary inputs.

Feeds the classifier the reported Moran p-values, R-squared values, and
local-slope sign profiles for the six determinants of the Finnish
broadband study, and prints the resulting pattern verdicts.  No raw
measurement data is involved: this demonstrates the interpretation rules
(weak via residual autocorrelation, concentric via sign consistency,
strong via explained variance, semantic inversion for the delay proxy)
on published summaries.
"""

from types import SimpleNamespace

import numpy as np

from concentra.classify import ClassifierThresholds, classify_pattern

# (determinant, moran_p, r_squared, dominant sign, minority share,
#  where the minority sign sits along the density axis, inverted proxy)
ROWS = [
    ("mbp_number", 0.02, 0.36, +1, 0.03, "spread", False),
    ("pct_dw_ownership", 0.13, 0.50, -1, 0.03, "high", False),
    ("pct_bachelors", 0.01, 0.68, +1, 0.02, "low", False),
    ("med_hh_income", 0.68, 0.38, -1, 0.22, "low", False),
    ("fourg_diffusion_delay", 0.11, 0.52, -1, 0.03, "spread", True),
    ("med_speed_mobile", 0.86, 0.31, +1, 0.17, "high", False),
]


def slope_profile(densities, dominant, share, where):
    slopes = np.full(densities.size, float(dominant))
    k = int(round(share * densities.size))
    order = np.argsort(densities)
    if where == "high":
        idx = order[-k:]
    elif where == "low":
        idx = order[:k]
    else:
        idx = order[:: max(densities.size // k, 1)][:k]
    slopes[idx] = -float(dominant)
    return slopes


def main() -> None:
    densities = np.linspace(5.0, 5000.0, 1000)
    print(f"{'determinant':<24}{'sign':<26}{'strength':<10}{'trusted':<8}")
    for name, p, r2, dom, share, where, inverted in ROWS:
        verdict = classify_pattern(
            SimpleNamespace(c1=slope_profile(densities, dom, share, where), r_squared=r2),
            SimpleNamespace(p_value=p),
            densities,
            ClassifierThresholds(),
            inverted=inverted,
        )
        mark = "" if verdict.sign_trusted else "*"
        print(f"{name:<24}{verdict.sign + mark:<26}{verdict.strength:<10}"
              f"{str(verdict.sign_trusted).lower():<8}")
    print("\n* slope sign reported but untrusted (residual autocorrelation)")


if __name__ == "__main__":
    main()
