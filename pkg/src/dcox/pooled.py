"""In-process score providers and the pooled individual-level oracle fit.

``ShardProvider`` evaluates the same aggregates the protocol moves, but as
plain function calls over a list of partner datasets. ``fit_pooled`` runs
the Newton engine on a single pooled dataset, the reference the distributed
run must match.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .aggregate import aggregate_summaries, merge_event_time_grids, stratum_scores_from_summaries, total_score
from .diagnostics import (
    BinnedResidualSummary, baseline_cumulative_hazard, baseline_survival_at_means, bin_residuals,
    combine_covariate_means, evaluate_subject_diagnostics,
)
from .errors import MaxIterationsExceeded
from .model import AnalysisDataset, ComputationPath, ModelSpec, select_computation_path
from .newton import run_fit
from .site import (
    compute_censoring_summary, compute_covariate_means, compute_site_contributions,
    compute_site_summaries, extract_local_event_times,
)
from .tables import RunOutcome


class ShardProvider:
    """Global score at beta from per-partner datasets, without serialisation.

    Records every evaluation in ``calls`` as ``(beta, ScoreContribution)``.
    """

    def __init__(self, shards, spec: ModelSpec, path: ComputationPath | None = None):
        self.shards = sorted(shards, key=lambda d: d.partner_id)
        self.spec = spec
        self.path = path or select_computation_path(spec)
        self.grid = merge_event_time_grids([extract_local_event_times(d) for d in self.shards])
        self.calls: list = []
        self.last_summaries = None

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        if self.path is ComputationPath.SITE_AGGREGATED:
            parts = [c for d in self.shards for c in compute_site_contributions(d, beta, self.spec.ties)]
            parts.sort(key=lambda c: c.stratum)
            score = total_score(parts, self.spec.p)
        else:
            summaries = aggregate_summaries(
                {d.partner_id: compute_site_summaries(d, beta, self.grid, self.spec.ties) for d in self.shards},
                self.grid,
            )
            self.last_summaries = summaries
            score = total_score(stratum_scores_from_summaries(summaries, beta, self.spec.ties), self.spec.p)
        self.calls.append((beta.copy(), score))
        return score


def _fit_or_partial(provider, spec):
    try:
        return run_fit(provider, spec)
    except MaxIterationsExceeded as exc:
        return exc.result


def fit_pooled(ds: AnalysisDataset, spec: ModelSpec, partner_ids=None) -> RunOutcome:
    """Fit on pooled rows and produce the same outcome structure as a distributed run.

    ``partner_ids`` (one per row) groups residual bins by partner, mirroring
    what each partner would report; without it all rows form one group.
    """
    grid = extract_local_event_times(ds)
    state = {}

    def provider(beta):
        summaries = compute_site_summaries(ds, beta, grid, spec.ties)
        state["summaries"] = summaries
        return total_score(stratum_scores_from_summaries(summaries, beta, spec.ties), spec.p)

    fit = _fit_or_partial(provider, spec)
    censoring = compute_censoring_summary(ds)
    outcome = RunOutcome(
        spec=spec, fit=fit, path="POOLED", censoring=censoring,
        dataset_name=spec.reg_ds_in or ds.name, dropped_rows=ds.dropped_rows, n_obs=len(ds),
    )
    if not fit.converged:
        return outcome
    # the last provider call was the covariance evaluation at beta_hat
    outcome.baseline = baseline_cumulative_hazard(state["summaries"], spec.ties)
    outcome.covariate_means = combine_covariate_means([compute_covariate_means(ds)])
    outcome.survival = baseline_survival_at_means(outcome.baseline, outcome.covariate_means, fit.beta_hat)
    residuals = evaluate_subject_diagnostics(ds, fit.beta_hat, outcome.baseline)
    groups = np.zeros(len(ds), dtype=np.int64) if partner_ids is None else np.asarray(partner_ids, dtype=np.int64)
    bins = []
    for pid in np.unique(groups):
        rows = np.flatnonzero(groups == pid)
        sub = evaluate_subject_diagnostics(ds.subset(rows), fit.beta_hat, outcome.baseline)
        sub = replace(sub, partner_id=int(pid))
        bins.append(bin_residuals(sub, spec.groups, spec.min_count_per_grp_glob, spec.max_numb_of_grp))
    outcome.residual_bins = bins
    outcome.fit.metadata["martingale_sum"] = float(np.sum(residuals.martingale))
    return outcome


def fit_shards(shards, spec: ModelSpec, path: ComputationPath | None = None):
    """Distributed algorithm without transport; returns ``(fit, provider)``."""
    provider = ShardProvider(shards, spec, path)
    return _fit_or_partial(provider, spec), provider


__all__ = ["ShardProvider", "fit_pooled", "fit_shards", "BinnedResidualSummary"]
