"""Fit statistics, the likelihood-ratio global test and the estimates table.

The incomplete gamma and inverse normal routines live here rather than
coming from scipy so the numbers printed in output tables do not depend on
which scipy build is installed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveVariance

_MAX_TERMS = 10000
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x) by modified Lentz."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi_square_upper_tail(x: float, df: int) -> float:
    """P(X > x) for X ~ chi-square(df)."""
    if df <= 0:
        raise ValueError("df must be positive")
    if x <= 0:
        return 1.0
    a, half = df / 2.0, x / 2.0
    if half < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_series(a, half)))
    return min(1.0, max(0.0, _gamma_continued_fraction(a, half)))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Acklam's rational approximation to the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(prob: float) -> float:
    """Inverse standard normal CDF, polished with one Halley step."""
    if not 0.0 < prob < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    if prob > 0.5:
        # 1 - prob is exact here and avoids cancellation in the Halley step
        return -normal_quantile(1.0 - prob)
    lo = 0.02425
    if prob < lo:
        q = math.sqrt(-2.0 * math.log(prob))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = prob - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    err = normal_cdf(x) - prob
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class ModelFitStats:
    neg2loglik_null: float
    neg2loglik_fit: float
    aic: float
    bic: float
    p: int
    total_events: int

    @property
    def aic_null(self) -> float:
        return self.neg2loglik_null

    @property
    def bic_null(self) -> float:
        return self.neg2loglik_null


def model_fit_stats(loglik_null: float, loglik_fit: float, p: int, total_events: int) -> ModelFitStats:
    if total_events < 1:
        raise ValueError("BIC needs at least one event")
    m2 = -2.0 * loglik_fit
    return ModelFitStats(
        neg2loglik_null=-2.0 * loglik_null,
        neg2loglik_fit=m2,
        aic=m2 + 2 * p,
        bic=m2 + p * math.log(total_events),
        p=p,
        total_events=int(total_events),
    )


@dataclass(frozen=True)
class GlobalTest:
    test: str
    chisq: float
    df: int
    pvalue: float


def global_null_test(loglik_null: float, loglik_fit: float, p: int) -> GlobalTest:
    """Likelihood-ratio test of beta = 0.

    A slightly negative statistic (within 1e-8 of zero) is clamped to zero.
    """
    chisq = 2.0 * (loglik_fit - loglik_null)
    if chisq < 0:
        if chisq < -2e-8:
            raise ValueError(f"fitted loglik is below the null loglik by {-chisq / 2:.3g}")
        chisq = 0.0
    pvalue = chi_square_upper_tail(chisq, p) if p > 0 else 1.0
    return GlobalTest("Likelihood Ratio", chisq, p, pvalue)


@dataclass(frozen=True)
class ParameterEstimateRow:
    name: str
    estimate: float
    stderr: float
    chisq: float
    pvalue: float
    hazard_ratio: float
    ci_lower: float
    ci_upper: float
    df: int = 1


def parameter_table(beta_hat, covariance, names, alpha: float = 0.05) -> list[ParameterEstimateRow]:
    beta_hat = np.asarray(beta_hat, dtype=float)
    variances = np.diag(np.asarray(covariance, dtype=float))
    z = normal_quantile(1.0 - alpha / 2.0)
    rows = []
    for name, b, var in zip(names, beta_hat, variances):
        if not var > 0:
            raise NonPositiveVariance(f"variance of {name} is {var}")
        se = math.sqrt(var)
        chisq = float((b / se) ** 2)
        rows.append(ParameterEstimateRow(
            name=name,
            estimate=float(b),
            stderr=se,
            chisq=chisq,
            pvalue=chi_square_upper_tail(chisq, 1),
            hazard_ratio=math.exp(b),
            ci_lower=math.exp(b - z * se),
            ci_upper=math.exp(b + z * se),
        ))
    return rows
