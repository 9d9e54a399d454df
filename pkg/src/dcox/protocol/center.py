"""Analysis-center side of a run: handshake, Newton rounds, diagnostics, stop."""

from __future__ import annotations

import logging

import numpy as np

from ..aggregate import aggregate_summaries, merge_event_time_grids, stratum_scores_from_summaries, total_score
from ..diagnostics import (
    BaselineHazard, baseline_cumulative_hazard, baseline_survival_at_means, combine_covariate_means,
)
from ..errors import ConfigError, DcoxError, MaxIterationsExceeded, MissingPartnerPayload, PartnerFailure
from ..model import ComputationPath, ModelSpec, Ties, select_computation_path
from ..newton import run_fit
from ..site import CensoringSummary, EventTimeGrid
from ..tables import RunOutcome
from . import payloads
from .messages import MessageKind, RoundMessage, spec_to_meta
from .transport import Transport, to_center, to_partner

log = logging.getLogger(__name__)


class CenterSession:
    """Round bookkeeping for one run; also serves as the Newton score provider."""

    def __init__(self, spec: ModelSpec, transport: Transport, path: ComputationPath):
        if not spec.partner_ids:
            raise ConfigError("dp_cd_list (partner_ids) is empty")
        self.spec = spec
        self.transport = transport
        self.path = path
        self.partners = sorted(spec.partner_ids)
        self.round = -1
        self.grid: EventTimeGrid | None = None
        self.final_summaries = None
        self.final_baselines: dict = {}
        self.handshakes: dict = {}

    def exchange(self, kind: MessageKind, tables_for, meta=None, expect: MessageKind | None = None) -> dict:
        """Send one round to every partner and collect their replies."""
        self.round += 1
        for pid in self.partners:
            msg = RoundMessage(self.spec.run_id, self.round, kind, dict(meta or {}), tables_for(pid))
            self.transport.send(to_partner(pid), msg)
        replies = {}
        for pid in self.partners:
            reply = self.transport.await_message(to_center(pid), self.spec.run_id, self.round)
            if reply.kind is MessageKind.STOP:
                raise PartnerFailure(pid, reply.meta.get("reason", "unspecified error"))
            if expect is not None and reply.kind is not expect:
                raise MissingPartnerPayload(f"partner {pid} answered {reply.kind.value}, expected {expect.value}")
            replies[pid] = reply
        return replies

    def broadcast_stop(self, status: str, reason: str) -> None:
        self.round += 1
        for pid in self.partners:
            msg = RoundMessage(self.spec.run_id, self.round, MessageKind.STOP, {"status": status, "reason": reason})
            try:
                self.transport.send(to_partner(pid), msg)
            except DcoxError as exc:  # best effort on the way out
                log.warning("could not send STOP to partner %s: %s", pid, exc)

    def handshake(self, event_time_set: EventTimeGrid | None = None) -> None:
        want_grid = self.path is ComputationPath.CENTER_AGGREGATED and event_time_set is None
        meta = {**spec_to_meta(self.spec), "path": self.path.value, "want_grid": int(want_grid)}
        self.handshakes = self.exchange(MessageKind.HANDSHAKE_REQUEST, lambda pid: {}, meta,
                                        expect=MessageKind.HANDSHAKE_REPLY)
        if self.path is ComputationPath.CENTER_AGGREGATED:
            if event_time_set is not None:
                self.grid = self._expand_event_time_set(event_time_set)
            else:
                grids = {}
                for pid, reply in self.handshakes.items():
                    if "grid" not in reply.tables:
                        raise MissingPartnerPayload(f"partner {pid} sent no event-time grid")
                    grids[pid] = payloads.grid_from_table(reply.tables["grid"])
                self.grid = merge_event_time_grids(grids)

    def _expand_event_time_set(self, grid: EventTimeGrid) -> EventTimeGrid:
        """An unstratified time list applies to every stratum seen at handshake."""
        if grid.strata != ((),) or not self.spec.strata_vars:
            return grid
        times = grid.times[()]
        return EventTimeGrid({key: times for key in self.censoring().counts})

    def censoring(self) -> CensoringSummary:
        total = CensoringSummary({})
        for pid in self.partners:
            total = total + payloads.censoring_from_table(self.handshakes[pid].tables["censoring"])
        return total

    def covariate_means(self) -> dict:
        return combine_covariate_means(
            payloads.covsums_from_table(self.handshakes[pid].tables["covsums"], self.spec.p)
            for pid in self.partners
        )

    def _iterate(self, beta, final: bool):
        spec = self.spec
        efron = spec.ties is Ties.EFRON

        def tables_for(pid):
            out = {"beta": payloads.beta_table(spec.independent_vars, beta)}
            if self.path is ComputationPath.CENTER_AGGREGATED:
                out["grid"] = payloads.grid_table(self.grid, with_counts=False)
            return out

        replies = self.exchange(MessageKind.ITERATE, tables_for, {"final": int(final)},
                                expect=MessageKind.SUMMARY_REPLY)
        if self.path is ComputationPath.SITE_AGGREGATED:
            contributions = []
            for pid, reply in replies.items():
                if "score" not in reply.tables:
                    raise MissingPartnerPayload(f"partner {pid} sent no score table")
                contributions += payloads.scores_from_table(reply.tables["score"], spec.p)
                if final:
                    if "baseline" not in reply.tables:
                        raise MissingPartnerPayload(f"partner {pid} sent no baseline hazard")
                    self.final_baselines[pid] = payloads.baseline_from_table(reply.tables["baseline"], "")
            contributions.sort(key=lambda c: c.stratum)
            return total_score(contributions, spec.p)

        parts = {}
        for pid, reply in replies.items():
            if "summary" not in reply.tables:
                raise MissingPartnerPayload(f"partner {pid} sent no risk-set summary")
            parts[pid] = payloads.summaries_from_table(reply.tables["summary"], spec.p, efron)
        summaries = aggregate_summaries(parts, self.grid)
        if final:
            self.final_summaries = summaries
        return total_score(stratum_scores_from_summaries(summaries, beta, spec.ties), spec.p)

    def __call__(self, beta):
        return self._iterate(np.asarray(beta, dtype=float), final=False)

    def evaluate_final(self, beta):
        return self._iterate(np.asarray(beta, dtype=float), final=True)

    def baseline(self) -> BaselineHazard:
        estimator = "FLEMING_HARRINGTON" if self.spec.ties is Ties.EFRON else "BRESLOW"
        if self.path is ComputationPath.CENTER_AGGREGATED:
            return baseline_cumulative_hazard(self.final_summaries, self.spec.ties)
        steps = {}
        for pid in self.partners:
            steps.update(self.final_baselines[pid].steps)
        return BaselineHazard(dict(sorted(steps.items())), estimator)

    def finalize(self, beta_hat, baseline: BaselineHazard) -> list:
        spec = self.spec
        strata_of = {
            pid: set(payloads.censoring_from_table(self.handshakes[pid].tables["censoring"]).counts)
            for pid in self.partners
        }

        def tables_for(pid):
            return {
                "beta": payloads.beta_table(spec.independent_vars, beta_hat),
                "baseline": payloads.baseline_table(baseline, strata_of[pid]),
            }

        replies = self.exchange(MessageKind.FINALIZE, tables_for, {"estimator": baseline.estimator},
                                expect=MessageKind.DIAGNOSTICS_REPLY)
        return [payloads.bins_from_table(replies[pid].tables["bins"], pid, replies[pid].meta) for pid in self.partners]


def orchestrate_center(spec: ModelSpec, transport: Transport, *, event_time_set: EventTimeGrid | None = None,
                       path: ComputationPath | None = None) -> RunOutcome:
    """Run the whole exchange and return the center's view of the results.

    ``path`` forces a computation path (used to check that both paths agree
    on partner-stratified models). On any failure a STOP with
    ``status=error`` goes to every partner before the error propagates. A
    run that exhausts ``max_iter`` still finishes cleanly; its outcome has
    ``fit.converged == False`` and no diagnostics.
    """
    path = path or select_computation_path(spec)
    session = CenterSession(spec, transport, path)
    try:
        session.handshake(event_time_set if path is ComputationPath.CENTER_AGGREGATED else None)
        try:
            fit = run_fit(session, spec)
        except MaxIterationsExceeded as exc:
            fit = exc.result
        outcome = RunOutcome(
            spec=spec, fit=fit, path=path.value, censoring=session.censoring(),
            dataset_name=spec.reg_ds_in or next(iter(session.handshakes.values())).meta.get("dataset", ""),
            dropped_rows=sum(int(r.meta.get("dropped_rows", 0)) for r in session.handshakes.values()),
            n_obs=sum(int(r.meta.get("n_rows", 0)) for r in session.handshakes.values()),
        )
        if fit.converged:
            outcome.baseline = session.baseline()
            outcome.covariate_means = session.covariate_means()
            outcome.survival = baseline_survival_at_means(outcome.baseline, outcome.covariate_means, fit.beta_hat)
            outcome.residual_bins = session.finalize(fit.beta_hat, outcome.baseline)
            session.broadcast_stop("ok", fit.reason)
        else:
            session.broadcast_stop("not_converged", fit.reason)
        fit.metadata["rounds"] = session.round + 1
        return outcome
    except BaseException as exc:
        session.broadcast_stop("error", f"{type(exc).__name__}: {exc}")
        raise
