"""The output-table catalog written to the center's ``msoc/`` directory."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .model import ModelSpec
from .newton import FitResult
from .protocol.messages import format_value
from .site import CensoringSummary
from .stats import global_null_test, model_fit_stats, parameter_table

TABLE_NAMES = (
    "BASELN_HAZARD", "BASELN_SURVIVAL", "CENS_SUM", "CONVRG_STATUS", "COV_EST",
    "GLOB_NULL_CHISQ", "ITER_PARMS_HIST", "MODELFIT", "MODELINFO", "MODEL_COEFF",
    "P_EST", "RESID_SUM", "RESID_SUM_BY_PCT",
)

MISSING_DATA_POLICY = "rows with missing or non-numeric model variables are dropped"


@dataclass
class RunOutcome:
    """Everything the center knows at the end of a run."""

    spec: ModelSpec
    fit: FitResult
    path: str
    censoring: CensoringSummary
    covariate_means: dict = field(default_factory=dict)
    baseline: object = None
    survival: dict = field(default_factory=dict)
    residual_bins: list = field(default_factory=list)
    dataset_name: str = ""
    dropped_rows: int = 0
    n_obs: int = 0


@dataclass
class OutputBundle:
    prefix: str
    tables: dict  # name -> (columns, rows)

    def filename(self, name: str) -> str:
        return f"{self.prefix}{name.lower()}.csv"

    def render(self, name: str) -> str:
        columns, rows = self.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(v) for v in row])
        return buf.getvalue()


def _strata_columns(spec):
    return list(spec.strata_vars)


def _cens_rows(spec, censoring: CensoringSummary):
    pct = CensoringSummary.percent
    if not spec.strata_vars:
        t, e, c = censoring.total
        return ["Total", "Event", "Censored", "PctCensored"], [(t, e, c, pct(t, c))]
    cols = ["Stratum", *_strata_columns(spec), "Total", "Event", "Censored", "PctCensored"]
    rows = []
    for m, (key, (t, e, c)) in enumerate(censoring.counts.items(), start=1):
        rows.append((m, *[_fmt_key(v) for v in key], t, e, c, pct(t, c)))
    t, e, c = censoring.total
    rows.append(("Total", *[""] * len(spec.strata_vars), t, e, c, pct(t, c)))
    return cols, rows


def _fmt_key(v):
    return int(v) if float(v).is_integer() else v


def _stratum_index(outcome):
    return {key: m for m, key in enumerate(outcome.censoring.counts, start=1)}


def _step_rows(outcome, steps, value_name):
    spec = outcome.spec
    index = _stratum_index(outcome)
    cols = ["Stratum", *_strata_columns(spec), spec.dependent_var, value_name]
    rows = []
    for key, (times, values) in steps.items():
        for t, v in zip(times, values):
            rows.append((index.get(key, 0), *[_fmt_key(x) for x in key], float(t), float(v)))
    return cols, rows


def build_bundle(outcome: RunOutcome) -> OutputBundle:
    """Lay out every catalog table from a finished run.

    A run that did not converge gets only MODELINFO, CENS_SUM, CONVRG_STATUS
    and ITER_PARMS_HIST.
    """
    spec, fit = outcome.spec, outcome.fit
    names = list(spec.independent_vars)
    p = spec.p
    tables = {}

    tables["MODELINFO"] = (["Description", "Value"], [
        ("Data Set", outcome.dataset_name),
        ("Dependent Variable", spec.dependent_var),
        ("Censoring Variable", spec.censoring_var),
        ("Censoring Value(s)", _fmt_key(spec.censoring_level)),
        ("Ties Handling", spec.ties.value),
        ("Strata Variables", " ".join(spec.strata_vars)),
        ("Data Partners", " ".join(str(k) for k in spec.partner_ids)),
        ("Computation Path", outcome.path),
        ("Number of Observations Used", outcome.n_obs),
        ("Rows Dropped (missing data)", outcome.dropped_rows),
        ("Missing Data Policy", MISSING_DATA_POLICY),
        ("Null Model", "loglik evaluated at beta = 0"),
    ])
    tables["CENS_SUM"] = _cens_rows(spec, outcome.censoring)

    last_delta = fit.history[-1].max_delta if len(fit.history) > 1 else None
    tables["CONVRG_STATUS"] = (["Status", "Converged", "Reason", "Iterations", "Criterion", "CriterionValue", "MaxDelta"], [
        (0 if fit.converged else 1, int(fit.converged), fit.reason, fit.iterations_used,
         "XCONV", spec.xconv, "" if last_delta is None else last_delta),
    ])
    tables["ITER_PARMS_HIST"] = (["Iteration", "LogLik", "Neg2LogLik", *names, "MaxDelta"], [
        (rec.iteration, rec.loglik, -2.0 * rec.loglik, *rec.beta, "" if rec.max_delta is None else rec.max_delta)
        for rec in fit.history
    ])
    if not fit.converged:
        return OutputBundle(f"{spec.run_id}_", tables)

    _, total_events, _ = outcome.censoring.total
    fs = model_fit_stats(fit.loglik_null, fit.loglik_final, p, total_events)
    tables["MODELFIT"] = (["Criterion", "WithoutCovariates", "WithCovariates"], [
        ("-2 LOG L", fs.neg2loglik_null, fs.neg2loglik_fit),
        ("AIC", fs.aic_null, fs.aic),
        ("SBC", fs.bic_null, fs.bic),
    ])
    test = global_null_test(fit.loglik_null, fit.loglik_final, p)
    tables["GLOB_NULL_CHISQ"] = (["Test", "ChiSq", "DF", "ProbChiSq"], [
        (test.test, test.chisq, test.df, test.pvalue),
    ])
    rows = parameter_table(fit.beta_hat, fit.covariance, names, spec.alpha)
    tables["P_EST"] = (["Parameter", "DF", "Estimate", "StdErr", "ChiSq", "ProbChiSq",
                        "HazardRatio", "HRLowerCL", "HRUpperCL"], [
        (r.name, r.df, r.estimate, r.stderr, r.chisq, r.pvalue, r.hazard_ratio, r.ci_lower, r.ci_upper)
        for r in rows
    ])
    tables["MODEL_COEFF"] = (["_TYPE_", "_NAME_", *names], [("PARMS", spec.dependent_var, *fit.beta_hat)])
    tables["COV_EST"] = (["Parameter", *names], [
        (name, *fit.covariance[i]) for i, name in enumerate(names)
    ])
    steps = outcome.baseline.steps if outcome.baseline is not None else {}
    tables["BASELN_HAZARD"] = _step_rows(outcome, steps, "CumHazard")
    tables["BASELN_SURVIVAL"] = _step_rows(outcome, outcome.survival, "Survival")

    bins = [(s.partner_id, b) for s in outcome.residual_bins for b in s.bins]
    tables["RESID_SUM_BY_PCT"] = (["dp_cd", "Bin", "Count", "MeanLinearPredictor", "MeanMartingale", "MeanDeviance"], [
        (pid, b.bin, b.count, b.mean_linear_predictor, b.mean_martingale, b.mean_deviance) for pid, b in bins
    ])
    counted = sum(b.count for _, b in bins)
    resid = [
        ("Observations", outcome.n_obs),
        ("Events", total_events),
        ("LogLik", fit.loglik_final),
        ("Neg2LogLik", fs.neg2loglik_fit),
        ("AIC", fs.aic),
        ("SBC", fs.bic),
        ("LikelihoodRatioChiSq", test.chisq),
        ("Iterations", fit.iterations_used),
        ("BinnedObservations", counted),
        ("SuppressedPartners", " ".join(str(s.partner_id) for s in outcome.residual_bins if s.suppressed)),
    ]
    if counted:
        resid.append(("MeanMartingale", sum(b.count * b.mean_martingale for _, b in bins) / counted))
        resid.append(("MeanDeviance", sum(b.count * b.mean_deviance for _, b in bins) / counted))
    tables["RESID_SUM"] = (["Statistic", "Value"], resid)
    return OutputBundle(f"{spec.run_id}_", {k: tables[k] for k in TABLE_NAMES if k in tables})


def failure_bundle(spec: ModelSpec, exc: BaseException) -> OutputBundle:
    """CONVRG_STATUS alone, recording why a run aborted."""
    return OutputBundle(f"{spec.run_id}_", {
        "CONVRG_STATUS": (["Status", "Converged", "Reason", "Iterations", "Criterion", "CriterionValue", "MaxDelta"], [
            (2, 0, f"{type(exc).__name__}: {exc}", "", "XCONV", spec.xconv, ""),
        ]),
    })


def write_bundle(bundle: OutputBundle, destination) -> list[Path]:
    dest = Path(destination)
    written = []
    try:
        dest.mkdir(parents=True, exist_ok=True)
        for name in bundle.tables:
            path = dest / bundle.filename(name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(bundle.render(name))
            written.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write output tables to {dest}: {exc}") from exc
    return written


def read_bundle(directory, prefix: str | None = None) -> OutputBundle:
    """Load a written bundle back; values stay strings."""
    directory = Path(directory)
    if prefix is None:
        hits = sorted(directory.glob("*_modelinfo.csv"))
        if not hits:
            raise IoFailure(f"no *_modelinfo.csv in {directory}")
        prefix = hits[0].name[: -len("modelinfo.csv")]
    tables = {}
    for name in TABLE_NAMES:
        path = directory / f"{prefix}{name.lower()}.csv"
        if path.exists():
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
            tables[name] = (rows[0], [tuple(r) for r in rows[1:]])
    return OutputBundle(prefix, tables)


def as_float_matrix(rows, start: int = 0) -> np.ndarray:
    return np.array([[float(v) for v in row[start:]] for row in rows])
