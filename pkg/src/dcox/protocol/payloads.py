"""Conversions between in-process aggregates and wire tables."""

from __future__ import annotations

import numpy as np

from ..diagnostics import BaselineHazard, BinnedResidualSummary, ResidualBin
from ..errors import MalformedPayload
from ..site import CensoringSummary, EventTimeGrid, RiskSetSummary, ScoreContribution, Scope
from .messages import (
    Table, decode_stratum, encode_stratum, float_rows, pack_tri, tri_columns, unpack_tri,
    vec_columns,
)


def _group_by_stratum(table: Table) -> dict:
    out: dict = {}
    col = table.columns.index("stratum")
    for i, row in enumerate(table.rows):
        out.setdefault(decode_stratum(row[col]), []).append(i)
    return out


def beta_table(names, beta) -> Table:
    return Table(("name", "value"), [(n, float(b)) for n, b in zip(names, beta)])


def beta_from_table(table: Table, names) -> np.ndarray:
    values = dict(zip(table.column("name"), table.column("value")))
    try:
        return np.array([float(values[n]) for n in names])
    except KeyError as exc:
        raise MalformedPayload(f"beta.csv: no value for {exc.args[0]!r}") from None


def grid_table(grid: EventTimeGrid, with_counts: bool) -> Table:
    cols = ("stratum", "time", "count") if with_counts else ("stratum", "time")
    rows = []
    for key, times in grid.times.items():
        counts = grid.counts.get(key)
        for j, t in enumerate(times):
            rows.append((encode_stratum(key), float(t), int(counts[j])) if with_counts else (encode_stratum(key), float(t)))
    return Table(cols, rows)


def grid_from_table(table: Table) -> EventTimeGrid:
    times, counts = {}, {}
    has_counts = "count" in table.columns
    for key, idx in _group_by_stratum(table).items():
        sub = Table(table.columns, [table.rows[i] for i in idx])
        times[key] = float_rows(sub, ["time"])[:, 0]
        counts[key] = float_rows(sub, ["count"])[:, 0].astype(np.int64) if has_counts else None
    return EventTimeGrid(times, counts)


def summary_columns(p: int, efron: bool) -> list[str]:
    cols = ["stratum", "time", "d0", *vec_columns("d1", p), "s0", *vec_columns("s1", p),
            *tri_columns("s2", p), "tie_count"]
    if efron:
        cols += ["q0", *vec_columns("q1", p), *tri_columns("q2", p)]
    return cols


def summaries_table(summaries, p: int, efron: bool) -> Table:
    rows = []
    for s in summaries:
        key = encode_stratum(s.stratum)
        for j in range(len(s.times)):
            row = [key, float(s.times[j]), s.d0[j], *s.d1[j], s.s0[j], *s.s1[j], *pack_tri(s.s2[j]), int(s.tie_count[j])]
            if efron:
                row += [s.q0[j], *s.q1[j], *pack_tri(s.q2[j])]
            rows.append(tuple(row))
    return Table(summary_columns(p, efron), rows)


def summaries_from_table(table: Table, p: int, efron: bool) -> list[RiskSetSummary]:
    cols = summary_columns(p, efron)[1:]
    out = []
    ntri = p * (p + 1) // 2
    for key, idx in sorted(_group_by_stratum(table).items()):
        data = float_rows(Table(table.columns, [table.rows[i] for i in idx]), cols)
        pos = 0

        def take(width):
            nonlocal pos
            block = data[:, pos:pos + width]
            pos += width
            return block

        times = take(1)[:, 0]
        d0 = take(1)[:, 0]
        d1 = take(p)
        s0 = take(1)[:, 0]
        s1 = take(p)
        s2 = np.array([unpack_tri(r, p) for r in take(ntri)]).reshape(len(idx), p, p)
        tie = take(1)[:, 0].astype(np.int64)
        q = {}
        if efron:
            q["q0"] = take(1)[:, 0]
            q["q1"] = take(p)
            q["q2"] = np.array([unpack_tri(r, p) for r in take(ntri)]).reshape(len(idx), p, p)
        out.append(RiskSetSummary(key, times, d0, d1, s0, s1, s2, tie, **q))
    return out


def score_columns(p: int) -> list[str]:
    return ["stratum", "loglik", *vec_columns("g", p), *tri_columns("h", p)]


def scores_table(contributions, p: int) -> Table:
    rows = [
        (encode_stratum(c.stratum), c.loglik, *c.gradient, *pack_tri(c.hessian))
        for c in contributions
    ]
    return Table(score_columns(p), rows)


def scores_from_table(table: Table, p: int) -> list[ScoreContribution]:
    data = float_rows(table, score_columns(p)[1:])
    strata = [decode_stratum(s) for s in table.column("stratum")]
    return [
        ScoreContribution(float(row[0]), row[1:1 + p].copy(), unpack_tri(row[1 + p:], p), Scope.STRATUM, key)
        for key, row in zip(strata, data)
    ]


def baseline_table(baseline: BaselineHazard, strata=None) -> Table:
    rows = []
    for key, (times, cum) in baseline.steps.items():
        if strata is not None and key not in strata:
            continue
        rows += [(encode_stratum(key), float(t), float(c)) for t, c in zip(times, cum)]
    return Table(("stratum", "time", "cumhaz"), rows)


def baseline_from_table(table: Table, estimator: str) -> BaselineHazard:
    steps = {}
    for key, idx in sorted(_group_by_stratum(table).items()):
        data = float_rows(Table(table.columns, [table.rows[i] for i in idx]), ["time", "cumhaz"])
        steps[key] = (data[:, 0], data[:, 1])
    return BaselineHazard(steps, estimator)


def censoring_table(summary: CensoringSummary) -> Table:
    return Table(("stratum", "total", "event", "censored"),
                 [(encode_stratum(k), t, e, c) for k, (t, e, c) in summary.counts.items()])


def censoring_from_table(table: Table) -> CensoringSummary:
    data = float_rows(table, ["total", "event", "censored"]).astype(np.int64)
    keys = [decode_stratum(s) for s in table.column("stratum")]
    return CensoringSummary({k: tuple(int(v) for v in row) for k, row in zip(keys, data)})


def covsums_table(sums: dict, p: int) -> Table:
    return Table(("stratum", "total_weight", *vec_columns("sum", p)),
                 [(encode_stratum(k), w, *s) for k, (s, w) in sums.items()])


def covsums_from_table(table: Table, p: int) -> dict:
    data = float_rows(table, ["total_weight", *vec_columns("sum", p)])
    keys = [decode_stratum(s) for s in table.column("stratum")]
    return {k: (row[1:].copy(), float(row[0])) for k, row in zip(keys, data)}


BIN_COLUMNS = ("bin", "count", "mean_linear_predictor", "mean_martingale", "mean_deviance")


def bins_table(summary: BinnedResidualSummary) -> Table:
    if summary.suppressed:
        return Table(BIN_COLUMNS, [])
    return Table(BIN_COLUMNS, [
        (b.bin, b.count, b.mean_linear_predictor, b.mean_martingale, b.mean_deviance)
        for b in summary.bins
    ])


def bins_from_table(table: Table, partner_id: int, meta: dict) -> BinnedResidualSummary:
    data = float_rows(table, BIN_COLUMNS)
    bins = tuple(ResidualBin(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in data)
    return BinnedResidualSummary(
        partner_id=partner_id,
        bins=bins,
        effective_groups=int(meta.get("effective_groups", len(bins))),
        suppressed=meta.get("suppressed", "0") == "1",
    )
