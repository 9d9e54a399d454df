"""Analysis-center reductions over partner payloads."""

from __future__ import annotations

import numpy as np

from .errors import GridMismatch, MissingPartnerPayload
from .model import Ties
from .site import EventTimeGrid, RiskSetSummary, ScoreContribution, Scope, score_from_summary


def merge_event_time_grids(grids) -> EventTimeGrid:
    """Union of partner grids per stratum, summing tie counts.

    ``grids`` is either a mapping partner id -> grid or a sequence of grids.
    """
    if isinstance(grids, dict):
        grids = [grids[k] for k in sorted(grids)]
    grids = list(grids)
    if not grids:
        raise MissingPartnerPayload("no partner grids to merge")
    strata = sorted({key for g in grids for key in g.strata})
    times, counts = {}, {}
    for key in strata:
        union = np.unique(np.concatenate([g.times[key] for g in grids if key in g.times]))
        d = np.zeros(len(union), dtype=np.int64)
        known = True
        for g in grids:
            if key not in g.times:
                continue
            if g.counts[key] is None:
                known = False
                continue
            d[np.searchsorted(union, g.times[key])] += g.counts[key]
        times[key] = union
        counts[key] = d if known else None
    return EventTimeGrid(times, counts)


def aggregate_summaries(parts: dict, grid: EventTimeGrid) -> list[RiskSetSummary]:
    """Sum partner summaries elementwise in ascending partner-id order.

    ``parts`` maps partner id to that partner's list of summaries; every
    partner must have reported every stratum of ``grid`` on exactly its times.
    """
    if not parts:
        raise MissingPartnerPayload("no partner summaries received")
    out = []
    for key, times in grid.times.items():
        total = None
        for pid in sorted(parts):
            found = [s for s in parts[pid] if s.stratum == key]
            if not found:
                raise MissingPartnerPayload(f"partner {pid} sent no summary for stratum {key}")
            s = found[0]
            if not np.array_equal(s.times, times):
                raise GridMismatch(f"partner {pid} summarised stratum {key} over a different grid")
            total = s if total is None else total + s
        out.append(total)
    for pid, summaries in parts.items():
        extra = {s.stratum for s in summaries} - set(grid.times)
        if extra:
            raise GridMismatch(f"partner {pid} sent strata {sorted(extra)} outside the designated grid")
    return out


def stratum_scores_from_summaries(summaries, beta, ties=Ties.BRESLOW) -> list[ScoreContribution]:
    """Stratum score triples from globally summed risk-set summaries.

    The Efron divisor uses the global tie count carried on each summary.
    """
    return [score_from_summary(s, beta, ties) for s in summaries]


def total_score(parts, p: int | None = None) -> ScoreContribution:
    parts = list(parts)
    if not parts:
        if p is None:
            raise ValueError("need p to total an empty list of contributions")
        return ScoreContribution.zero(p)
    loglik = 0.0
    grad = np.zeros_like(parts[0].gradient)
    hess = np.zeros_like(parts[0].hessian)
    for c in parts:
        loglik += c.loglik
        grad = grad + c.gradient
        hess = hess + c.hessian
    return ScoreContribution(float(loglik), grad, hess, Scope.GLOBAL)
