"""Distribution functions needed for Wald tests and likelihood-ratio tests.

Implemented from scratch on top of math.erfc / math.lgamma so results do not
depend on an external stats library: normal CDF, regularized lower incomplete
gamma, and the chi-square CDF/quantile built on it.
"""

from __future__ import annotations

import math

_EPS = 1e-16
_MAX_ITER = 500


def normal_cdf(x: float) -> float:
    """Standard normal CDF via erfc; absolute error well below 1e-7."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def wald_pvalue(estimate: float, se: float) -> float:
    """Two-sided p-value 2*Phi(-|estimate/se|); 1.0 when se is infinite."""
    if se == 0.0:
        return 0.0 if estimate != 0.0 else 1.0
    if math.isinf(se):
        return 1.0
    z = abs(estimate / se)
    return math.erfc(z / math.sqrt(2.0))


def lower_gamma_regularized(a: float, x: float) -> float:
    """P(a, x), the regularized lower incomplete gamma function.

    Series expansion for x < a + 1, Lentz continued fraction otherwise
    (Numerical Recipes 6.2); relative error near machine precision.
    """
    if a <= 0.0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0.0:
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    log_prefactor = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        # series: P(a,x) = prefactor * sum_n x^n / (a (a+1) ... (a+n))
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(_MAX_ITER):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return min(1.0, math.exp(log_prefactor) * total)
    # continued fraction for Q(a,x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    q = math.exp(log_prefactor) * h
    return max(0.0, 1.0 - q)


def chisq_cdf(x: float, df: float) -> float:
    """Chi-square CDF with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if x < 0.0:
        raise ValueError(f"chi-square argument must be >= 0, got {x}")
    return lower_gamma_regularized(0.5 * df, 0.5 * x)


def chisq_quantile(prob: float, df: float) -> float:
    """Lower-tail chi-square quantile by bracketed bisection; |error| < 1e-8."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {prob}")
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    lo = 0.0
    hi = df + 10.0 * math.sqrt(2.0 * df) + 10.0
    for _ in range(200):
        if chisq_cdf(hi, df) >= prob:
            break
        hi *= 2.0
    else:
        raise ValueError("failed to bracket chi-square quantile")
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if chisq_cdf(mid, df) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
