"""Data-partner event loop: await a center message, compute, reply, repeat."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from ..diagnostics import baseline_cumulative_hazard, bin_residuals, evaluate_subject_diagnostics
from ..errors import DcoxError, MalformedPayload, ProtocolError, exit_code_for
from ..model import ComputationPath, Ties, ingest_dataset
from ..site import (
    compute_censoring_summary, compute_covariate_means, compute_site_summaries,
    extract_local_event_times, score_from_summary,
)
from . import payloads
from .messages import MessageKind, RoundMessage, encode_stratum, spec_from_meta
from .transport import Transport, to_center, to_partner

log = logging.getLogger(__name__)


class PartnerNode:
    """State a partner keeps between rounds. Subject rows never leave it."""

    def __init__(self, data_path, partner_id: int, run_id: str, min_count_per_grp: int | None = None,
                 output_dir=None):
        self.data_path = data_path
        self.partner_id = int(partner_id)
        self.run_id = run_id
        self.min_count_override = min_count_per_grp
        self.output_dir = Path(output_dir) if output_dir else None
        self.spec = None
        self.ds = None
        self.path = None
        self.residuals = None
        self.binned = None

    # each handler returns the reply message, or None for STOP
    def handle(self, msg: RoundMessage) -> RoundMessage | None:
        handler = {
            MessageKind.HANDSHAKE_REQUEST: self._handshake,
            MessageKind.ITERATE: self._iterate,
            MessageKind.FINALIZE: self._finalize,
            MessageKind.STOP: lambda m: None,
        }.get(msg.kind)
        if handler is None:
            raise MalformedPayload(f"partner cannot handle {msg.kind.value}")
        if msg.kind is not MessageKind.HANDSHAKE_REQUEST and msg.kind is not MessageKind.STOP and self.ds is None:
            raise ProtocolError(f"{msg.kind.value} received before handshake")
        return handler(msg)

    def _reply(self, msg, kind, tables=None, meta=None) -> RoundMessage:
        return RoundMessage(self.run_id, msg.round, kind, meta or {}, tables or {})

    def _handshake(self, msg):
        self.spec = spec_from_meta(msg.meta)
        self.path = ComputationPath(msg.meta.get("path", ComputationPath.CENTER_AGGREGATED.value))
        self.ds = ingest_dataset(self.data_path, self.spec, self.partner_id)
        tables = {
            "censoring": payloads.censoring_table(compute_censoring_summary(self.ds)),
            "covsums": payloads.covsums_table(compute_covariate_means(self.ds), self.spec.p),
        }
        if msg.meta.get("want_grid") == "1":
            tables["grid"] = payloads.grid_table(extract_local_event_times(self.ds), with_counts=True)
        meta = {"n_rows": len(self.ds), "dropped_rows": self.ds.dropped_rows, "dataset": self.ds.name}
        return self._reply(msg, MessageKind.HANDSHAKE_REPLY, tables, meta)

    def _iterate(self, msg):
        spec = self.spec
        beta = payloads.beta_from_table(msg.tables["beta"], spec.independent_vars)
        efron = spec.ties is Ties.EFRON
        final = msg.meta.get("final") == "1"
        if self.path is ComputationPath.SITE_AGGREGATED:
            summaries = compute_site_summaries(self.ds, beta, extract_local_event_times(self.ds), spec.ties)
            scores = [score_from_summary(s, beta, spec.ties) for s in summaries]
            tables = {"score": payloads.scores_table(scores, spec.p)}
            if final:
                baseline = baseline_cumulative_hazard(summaries, spec.ties)
                tables["baseline"] = payloads.baseline_table(baseline)
        else:
            if "grid" not in msg.tables:
                raise MalformedPayload("ITERATE for the center-aggregated path lacks grid.csv")
            grid = payloads.grid_from_table(msg.tables["grid"])
            summaries = compute_site_summaries(self.ds, beta, grid, spec.ties)
            tables = {"summary": payloads.summaries_table(summaries, spec.p, efron)}
        return self._reply(msg, MessageKind.SUMMARY_REPLY, tables, {"final": int(final)})

    def _finalize(self, msg):
        spec = self.spec
        beta = payloads.beta_from_table(msg.tables["beta"], spec.independent_vars)
        baseline = payloads.baseline_from_table(msg.tables["baseline"], msg.meta.get("estimator", "BRESLOW"))
        self.residuals = evaluate_subject_diagnostics(self.ds, beta, baseline)
        min_count = self.min_count_override or spec.min_count_per_grp_glob
        self.binned = bin_residuals(self.residuals, spec.groups, min_count, spec.max_numb_of_grp)
        if self.output_dir is not None:
            self._write_individual_output()
        meta = {
            "effective_groups": self.binned.effective_groups,
            "suppressed": int(self.binned.suppressed),
            "min_count_per_grp": min_count,
        }
        return self._reply(msg, MessageKind.DIAGNOSTICS_REPLY, {"bins": payloads.bins_table(self.binned)}, meta)

    def _write_individual_output(self):
        """Keep the subject-level diagnostics on the partner's own disk."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        r = self.residuals
        out = self.output_dir / f"{self.run_id}_dp{self.partner_id}_residuals.csv"
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stratum", "time", "event", *self.spec.independent_vars, "linear_predictor",
                        "cumulative_hazard", "survival", "martingale", "deviance"])
            for i in range(len(r)):
                w.writerow([encode_stratum(r.strata[i]), repr(float(self.ds.time[i])), int(r.event[i]),
                            *(repr(float(z)) for z in self.ds.covariates[i]),
                            *(repr(float(v)) for v in (r.linear_predictor[i], r.cumulative_hazard[i],
                                                       r.survival[i], r.martingale[i], r.deviance[i]))])


def orchestrate_partner(data_path, partner_id: int, transport: Transport, run_id: str,
                        min_count_per_grp: int | None = None, output_dir=None) -> int:
    """Serve center requests until STOP. Returns a process exit code.

    A local failure is reported to the center as a STOP message with
    ``status=error`` so the center can abort the run.
    """
    node = PartnerNode(data_path, partner_id, run_id, min_count_per_grp, output_dir)
    inbox, outbox = to_partner(partner_id), to_center(partner_id)
    round_ = 0
    while True:
        msg = transport.await_message(inbox, run_id, round_)
        if msg.kind is MessageKind.STOP:
            log.info("partner %s: STOP (%s)", partner_id, msg.meta.get("reason", ""))
            return 0
        try:
            reply = node.handle(msg)
        except DcoxError as exc:
            log.error("partner %s failed in round %d: %s", partner_id, round_, exc)
            err = RoundMessage(run_id, msg.round, MessageKind.STOP,
                               {"status": "error", "reason": f"{type(exc).__name__}: {exc}"})
            transport.send(outbox, err)
            return exit_code_for(exc)
        transport.send(outbox, reply)
        round_ = msg.round + 1

