"""Baseline hazard, survival, and subject-level residual diagnostics.

Residuals are computed at the partner and never leave it; only the binned
summaries produced by :func:`bin_residuals` are meant for transmission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRiskSet
from .model import AnalysisDataset, Ties

_LOG_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class BaselineHazard:
    """Cumulative baseline hazard per stratum as right-continuous steps."""

    steps: dict  # stratum -> (times, cumulative values)
    estimator: str = "BRESLOW"

    def at(self, stratum, t) -> np.ndarray:
        """h0_cum(t) for an array of times, zero before the first step."""
        t = np.asarray(t, dtype=float)
        if stratum not in self.steps:
            return np.zeros_like(t)
        times, cum = self.steps[stratum]
        idx = np.searchsorted(times, t, side="right") - 1
        padded = np.concatenate([[0.0], cum])
        return padded[idx + 1]


def baseline_cumulative_hazard(summaries, ties=Ties.BRESLOW) -> BaselineHazard:
    """Breslow (d / S0) or, for Efron ties, Fleming-Harrington increments.

    ``summaries`` are the global risk-set summaries at the final estimate.
    Grid times without events contribute no step.
    """
    ties = Ties.parse(ties)
    steps = {}
    for s in summaries:
        keep = np.flatnonzero(s.tie_count > 0)
        inc = np.zeros(len(keep))
        for out, j in enumerate(keep):
            d = int(s.tie_count[j])
            if ties is Ties.EFRON:
                denom = s.s0[j] - (np.arange(d) / d) * s.q0[j]
                if np.any(denom <= 0):
                    raise DegenerateRiskSet(f"stratum {s.stratum}: empty risk set at {s.times[j]}")
                inc[out] = np.sum(1.0 / denom)
            else:
                if not s.s0[j] > 0:
                    raise DegenerateRiskSet(f"stratum {s.stratum}: empty risk set at {s.times[j]}")
                inc[out] = d / s.s0[j]
        steps[s.stratum] = (s.times[keep].copy(), np.cumsum(inc))
    estimator = "FLEMING_HARRINGTON" if ties is Ties.EFRON else "BRESLOW"
    return BaselineHazard(steps, estimator)


@dataclass(frozen=True, eq=False)
class ResidualRecords:
    """Column-wise subject diagnostics for one partner."""

    linear_predictor: np.ndarray
    cumulative_hazard: np.ndarray
    survival: np.ndarray
    martingale: np.ndarray
    deviance: np.ndarray
    event: np.ndarray
    strata: tuple
    partner_id: int = 0
    flagged: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.martingale)


def deviance_residual(martingale, event) -> np.ndarray:
    """sign(M) * sqrt(-2 [M + event * log(event - M)]), with 0 log(.) = 0."""
    m = np.asarray(martingale, dtype=float)
    ev = np.asarray(event, dtype=float)
    arg = np.where(ev > 0, np.maximum(ev - m, _LOG_FLOOR), 1.0)
    inner = -2.0 * (m + ev * np.log(arg))
    return np.sign(m) * np.sqrt(np.maximum(inner, 0.0))


def evaluate_subject_diagnostics(ds: AnalysisDataset, beta_hat, baseline: BaselineHazard) -> ResidualRecords:
    beta_hat = np.asarray(beta_hat, dtype=float)
    theta = ds.covariates @ beta_hat
    h0 = np.zeros(len(ds))
    for key, rows in ds.stratum_indices().items():
        h0[rows] = baseline.at(key, ds.time[rows])
    cum = np.exp(theta) * h0
    event = ds.event.astype(float)
    mart = event - cum
    flagged = (event > 0) & (cum <= 0)
    return ResidualRecords(
        linear_predictor=theta,
        cumulative_hazard=cum,
        survival=np.exp(-cum),
        martingale=mart,
        deviance=deviance_residual(mart, event),
        event=ds.event.copy(),
        strata=ds.strata,
        partner_id=ds.partner_id,
        flagged=flagged,
    )


def combine_covariate_means(parts) -> dict:
    """Global per-stratum covariate means from partner (sums, totals) maps."""
    sums, totals = {}, {}
    for part in parts:
        for key, (s, w) in part.items():
            sums[key] = sums.get(key, 0.0) + np.asarray(s, dtype=float)
            totals[key] = totals.get(key, 0.0) + w
    return {key: sums[key] / totals[key] for key in sorted(sums) if totals[key] > 0}


def baseline_survival_at_means(baseline: BaselineHazard, means: dict, beta_hat) -> dict:
    """S(t) = exp(-exp(beta' Zbar_m) h0_cum(t)) at each stratum's event times."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    out = {}
    for key, (times, cum) in baseline.steps.items():
        if key not in means or len(times) == 0:
            continue
        out[key] = (times, np.exp(-math.exp(float(means[key] @ beta_hat)) * cum))
    return out


@dataclass(frozen=True)
class ResidualBin:
    bin: int
    count: int
    mean_linear_predictor: float
    mean_martingale: float
    mean_deviance: float


@dataclass(frozen=True)
class BinnedResidualSummary:
    partner_id: int
    bins: tuple
    effective_groups: int
    suppressed: bool = False


def average_ranks(values) -> np.ndarray:
    """Zero-based ranks with ties sharing their mean rank."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop - 1) / 2.0
        start = stop
    return ranks


def _assign_bins(ranks, groups, n):
    return np.floor(ranks * groups / n).astype(np.int64)


def bin_residuals(records: ResidualRecords, groups: int, min_count: int, max_groups: int = 10000) -> BinnedResidualSummary:
    """Group one partner's residuals into percentile bins of the linear predictor.

    The bin count starts at ``min(groups, N // min_count, max_groups)`` and
    is lowered until every non-empty bin holds at least ``min_count`` rows.
    A partner with fewer than ``min_count`` rows gets one suppressed bin,
    which is never transmitted.
    """
    n = len(records)
    if n == 0:
        return BinnedResidualSummary(records.partner_id, (), 0, suppressed=True)
    g = max(1, min(groups, n // min_count, max_groups))
    ranks = average_ranks(records.linear_predictor)
    while True:
        labels = _assign_bins(ranks, g, n)
        counts = np.bincount(labels, minlength=g)
        if g == 1 or np.all(counts[counts > 0] >= min_count):
            break
        g -= 1
    bins = []
    for b, label in enumerate(np.flatnonzero(counts)):
        sel = labels == label
        bins.append(ResidualBin(
            bin=b + 1,
            count=int(sel.sum()),
            mean_linear_predictor=float(np.mean(records.linear_predictor[sel])),
            mean_martingale=float(np.mean(records.martingale[sel])),
            mean_deviance=float(np.mean(records.deviance[sel])),
        ))
    return BinnedResidualSummary(records.partner_id, tuple(bins), g, suppressed=n < min_count)
