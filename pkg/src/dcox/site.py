"""Computations a data partner runs on its private rows.

Everything returned from here is an aggregate: per (stratum, event time)
risk-set sums for the center-aggregated path, or per stratum
(loglik, gradient, Hessian) triples when the partner identifier is a
stratification variable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRiskSet, GridMismatch, NonFiniteIntermediate
from .model import AnalysisDataset, Ties


class Scope(str, enum.Enum):
    STRATUM = "STRATUM"
    SITE = "SITE"
    GLOBAL = "GLOBAL"


@dataclass(frozen=True)
class EventTimeGrid:
    """Sorted distinct event times per stratum with freq-weighted tie counts.

    ``counts`` may be ``None`` for a stratum whose grid came from an
    externally supplied event-time set; the tie counts then arrive with the
    partners' summaries.
    """

    times: dict
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        times = {key: np.asarray(t, dtype=float) for key, t in self.times.items()}
        counts = {}
        for key in times:
            c = self.counts.get(key)
            counts[key] = None if c is None else np.asarray(c, dtype=np.int64)
        for key, t in times.items():
            if t.size and np.any(np.diff(t) <= 0):
                raise ValueError(f"grid times for stratum {key} are not strictly increasing")
        object.__setattr__(self, "times", dict(sorted(times.items())))
        object.__setattr__(self, "counts", {k: counts[k] for k in self.times})

    @property
    def strata(self) -> tuple:
        return tuple(self.times)

    def n_times(self, key) -> int:
        return len(self.times.get(key, ()))

    def same_times(self, other: "EventTimeGrid") -> bool:
        if self.strata != other.strata:
            return False
        return all(np.array_equal(self.times[k], other.times[k]) for k in self.strata)


@dataclass(frozen=True, eq=False)
class RiskSetSummary:
    """Risk-set aggregates for one stratum, one row per grid time.

    Shapes: ``d0, s0, q0, tie_count`` are (J,), ``d1, s1, q1`` are (J, p),
    ``s2, q2`` are (J, p, p). The ``q*`` arrays are ``None`` unless the
    Efron method asked for them.
    """

    stratum: tuple
    times: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    tie_count: np.ndarray
    q0: np.ndarray | None = None
    q1: np.ndarray | None = None
    q2: np.ndarray | None = None

    @property
    def has_efron_terms(self) -> bool:
        return self.q0 is not None

    def __add__(self, other: "RiskSetSummary") -> "RiskSetSummary":
        if self.stratum != other.stratum or not np.array_equal(self.times, other.times):
            raise GridMismatch(f"cannot add summaries over different grids (stratum {self.stratum})")
        q = {}
        if self.has_efron_terms and other.has_efron_terms:
            q = dict(q0=self.q0 + other.q0, q1=self.q1 + other.q1, q2=self.q2 + other.q2)
        return RiskSetSummary(
            stratum=self.stratum,
            times=self.times,
            d0=self.d0 + other.d0,
            d1=self.d1 + other.d1,
            s0=self.s0 + other.s0,
            s1=self.s1 + other.s1,
            s2=self.s2 + other.s2,
            tie_count=self.tie_count + other.tie_count,
            **q,
        )


@dataclass(frozen=True, eq=False)
class ScoreContribution:
    loglik: float
    gradient: np.ndarray
    hessian: np.ndarray
    scope: Scope = Scope.STRATUM
    stratum: tuple | None = None

    def __add__(self, other: "ScoreContribution") -> "ScoreContribution":
        return ScoreContribution(
            loglik=self.loglik + other.loglik,
            gradient=self.gradient + other.gradient,
            hessian=self.hessian + other.hessian,
            scope=Scope.GLOBAL,
        )

    @classmethod
    def zero(cls, p: int, scope: Scope = Scope.GLOBAL) -> "ScoreContribution":
        return cls(0.0, np.zeros(p), np.zeros((p, p)), scope)

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.loglik)
            and np.all(np.isfinite(self.gradient))
            and np.all(np.isfinite(self.hessian))
        )


@dataclass(frozen=True)
class CensoringSummary:
    """Freq-weighted event and censoring counts keyed by stratum."""

    counts: dict  # stratum -> (total, events, censored)

    @staticmethod
    def percent(total, censored) -> float:
        return 100.0 * censored / total if total else 0.0

    @property
    def total(self) -> tuple:
        tot = ev = cens = 0
        for t, e, c in self.counts.values():
            tot, ev, cens = tot + t, ev + e, cens + c
        return tot, ev, cens

    def __add__(self, other: "CensoringSummary") -> "CensoringSummary":
        merged = dict(self.counts)
        for key, (t, e, c) in other.counts.items():
            t0, e0, c0 = merged.get(key, (0, 0, 0))
            merged[key] = (t0 + t, e0 + e, c0 + c)
        return CensoringSummary(dict(sorted(merged.items())))


def _linear_predictor(covariates: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return covariates @ beta


def _risk_weights(ds: AnalysisDataset, rows: np.ndarray, beta: np.ndarray) -> np.ndarray:
    eta = _linear_predictor(ds.covariates[rows], beta)
    with np.errstate(over="ignore"):
        r = np.exp(eta)
    if not np.all(np.isfinite(r)):
        worst = float(np.max(np.abs(eta)))
        raise NonFiniteIntermediate(f"exp(beta'Z) overflowed: |beta'Z| reached {worst:.6g}")
    return ds.weight[rows] * ds.freq[rows] * r


def extract_local_event_times(ds: AnalysisDataset) -> EventTimeGrid:
    times, counts = {}, {}
    for key, rows in ds.stratum_indices().items():
        ev = rows[ds.event[rows] == 1]
        if ev.size == 0:
            continue
        uniq, inverse = np.unique(ds.time[ev], return_inverse=True)
        d = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(d, inverse, ds.freq[ev])
        times[key], counts[key] = uniq, d
    return EventTimeGrid(times, counts)


def _event_slots(ds, ev_rows, grid_times, stratum):
    t = ds.time[ev_rows]
    if len(grid_times) == 0:
        ok = np.zeros(len(t), dtype=bool)
        slot = ok.astype(np.intp)
    else:
        slot = np.searchsorted(grid_times, t)
        ok = (slot < len(grid_times)) & (grid_times[np.minimum(slot, len(grid_times) - 1)] == t)
    if not np.all(ok):
        missing = sorted(set(t[~ok].tolist()))
        raise GridMismatch(f"stratum {stratum}: local event times {missing[:5]} missing from designated grid")
    return slot


def compute_site_summaries(ds: AnalysisDataset, beta, grid: EventTimeGrid, ties=Ties.BRESLOW) -> list[RiskSetSummary]:
    """Risk-set sums for every (stratum, time) of ``grid``.

    Rows are sorted by time once per stratum and the risk-set sums come from
    suffix cumulative sums evaluated at each grid time, so the cost is
    O(N p^2) regardless of the number of grid times. Strata of the grid with
    no local rows are zero-filled.
    """
    ties = Ties.parse(ties)
    beta = np.asarray(beta, dtype=float)
    p = ds.p
    by_stratum = ds.stratum_indices()
    for key, rows in by_stratum.items():
        if key not in grid.times and np.any(ds.event[rows] == 1):
            raise GridMismatch(f"stratum {key} has local events but is absent from the designated grid")

    out = []
    for key, grid_times in grid.times.items():
        J = len(grid_times)
        rows = by_stratum.get(key, np.empty(0, dtype=np.intp))
        d0, d1 = np.zeros(J), np.zeros((J, p))
        tie = np.zeros(J, dtype=np.int64)
        s0, s1, s2 = np.zeros(J), np.zeros((J, p)), np.zeros((J, p, p))
        q = dict(q0=np.zeros(J), q1=np.zeros((J, p)), q2=np.zeros((J, p, p))) if ties is Ties.EFRON else {}
        if rows.size:
            order = rows[np.argsort(ds.time[rows], kind="stable")]
            t = ds.time[order]
            z = ds.covariates[order]
            r = _risk_weights(ds, order, beta)
            rz = r[:, None] * z
            rzz = r[:, None, None] * (z[:, :, None] * z[:, None, :])  # exactly symmetric
            # suffix sums with a trailing zero row: suffix[i] = sum over order[i:]
            suf0 = np.concatenate([np.cumsum(r[::-1])[::-1], [0.0]])
            suf1 = np.concatenate([np.cumsum(rz[::-1], axis=0)[::-1], np.zeros((1, p))])
            suf2 = np.concatenate([np.cumsum(rzz[::-1], axis=0)[::-1], np.zeros((1, p, p))])
            start = np.searchsorted(t, grid_times, side="left")
            s0, s1, s2 = suf0[start], suf1[start], suf2[start]

            is_ev = ds.event[order] == 1
            if np.any(is_ev):
                slot = _event_slots(ds, order[is_ev], grid_times, key)
                wf = ds.weight[order][is_ev] * ds.freq[order][is_ev]
                np.add.at(d0, slot, wf)
                np.add.at(d1, slot, wf[:, None] * z[is_ev])
                np.add.at(tie, slot, ds.freq[order][is_ev])
                if q:
                    np.add.at(q["q0"], slot, r[is_ev])
                    np.add.at(q["q1"], slot, rz[is_ev])
                    np.add.at(q["q2"], slot, rzz[is_ev])
        out.append(RiskSetSummary(key, grid_times, d0, d1, s0, s1, s2, tie, **q))
    return out


def score_from_summary(summary: RiskSetSummary, beta, ties=Ties.BRESLOW, tie_count=None) -> ScoreContribution:
    """Stratum loglik, gradient and Hessian from (global) risk-set sums.

    Breslow is evaluated as the single-term case of the Efron loop, so a
    time with one event gives bit-identical results under both methods.
    ``tie_count`` overrides ``summary.tie_count`` as the Efron divisor.
    """
    ties = Ties.parse(ties)
    beta = np.asarray(beta, dtype=float)
    p = len(beta)
    d = summary.tie_count if tie_count is None else np.asarray(tie_count)
    if ties is Ties.EFRON and not summary.has_efron_terms:
        raise ValueError("Efron scores need Q terms in the summary")
    loglik = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    for j in range(len(summary.times)):
        dj = int(d[j])
        if dj <= 0:
            continue
        if ties is Ties.EFRON:
            frac = np.arange(dj) / dj
            S0 = summary.s0[j] - frac * summary.q0[j]
            S1 = summary.s1[j][None, :] - frac[:, None] * summary.q1[j][None, :]
            S2 = summary.s2[j][None] - frac[:, None, None] * summary.q2[j][None]
            factor = summary.d0[j] / dj
        else:
            S0 = summary.s0[j][None]
            S1 = summary.s1[j][None, :]
            S2 = summary.s2[j][None]
            factor = summary.d0[j]
        if np.any(S0 <= 0):
            raise DegenerateRiskSet(
                f"stratum {summary.stratum}: empty risk set at event time {summary.times[j]}"
            )
        mean1 = S1 / S0[:, None]
        loglik += beta @ summary.d1[j] - factor * np.sum(np.log(S0))
        grad += summary.d1[j] - factor * np.sum(mean1, axis=0)
        hess -= factor * np.sum(S2 / S0[:, None, None] - mean1[:, :, None] * mean1[:, None, :], axis=0)
    return ScoreContribution(float(loglik), grad, hess, Scope.STRATUM, summary.stratum)


def compute_site_contributions(ds: AnalysisDataset, beta, ties=Ties.BRESLOW) -> list[ScoreContribution]:
    """Per-stratum score triples for a partner that owns its strata outright."""
    grid = extract_local_event_times(ds)
    summaries = compute_site_summaries(ds, beta, grid, ties)
    return [score_from_summary(s, beta, ties) for s in summaries]


def compute_censoring_summary(ds: AnalysisDataset) -> CensoringSummary:
    counts = {}
    for key, rows in ds.stratum_indices().items():
        total = int(ds.freq[rows].sum())
        events = int(ds.freq[rows][ds.event[rows] == 1].sum())
        counts[key] = (total, events, total - events)
    return CensoringSummary(counts)


def compute_covariate_means(ds: AnalysisDataset) -> dict:
    """Per stratum ``(weighted covariate sums, weight total)``; freq multiplies weight."""
    out = {}
    for key, rows in ds.stratum_indices().items():
        wf = ds.weight[rows] * ds.freq[rows]
        out[key] = (wf @ ds.covariates[rows], float(wf.sum()))
    return out
