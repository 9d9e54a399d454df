"""Domain types, dataset ingestion and computation-path selection."""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyDataset, MissingColumn, NonPositiveTime

#: Name of the stratification variable that identifies a data partner.
PARTNER_VAR = "dp_cd"

StratumKey = tuple  # ordered tuple of stratification values; () when unstratified


class Ties(str, enum.Enum):
    BRESLOW = "BRESLOW"
    EFRON = "EFRON"

    @classmethod
    def parse(cls, value) -> "Ties":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ConfigError(f"ties must be BRESLOW or EFRON, got {value!r}") from None


class ComputationPath(str, enum.Enum):
    """Where the sum over event times happens.

    ``SITE_AGGREGATED`` lets partners collapse their strata into a fixed-size
    (loglik, gradient, Hessian) triple; ``CENTER_AGGREGATED`` ships per event
    time risk-set summaries to the center.
    """

    SITE_AGGREGATED = "SITE_AGGREGATED"
    CENTER_AGGREGATED = "CENTER_AGGREGATED"


@dataclass(frozen=True)
class SubjectRecord:
    time: float
    event: int
    covariates: tuple
    stratum: StratumKey = ()
    weight: float = 1.0
    freq: int = 1
    partner_id: int = 0


@dataclass(frozen=True)
class ModelSpec:
    """Model and run parameters for one analysis; see ``cli.SPEC_KEYS`` for the config key of each field."""

    dependent_var: str
    censoring_var: str
    independent_vars: tuple
    censoring_level: float = 0.0
    strata_vars: tuple = ()
    ties: Ties = Ties.BRESLOW
    weight_var: str | None = None
    freq_var: str | None = None
    xconv: float = 1e-4
    max_iter: int = 20
    alpha: float = 0.05
    groups: int = 10
    min_count_per_grp_glob: int = 6
    max_numb_of_grp: int = 10000
    initial_estimates: tuple | None = None
    run_id: str = "dc1"
    partner_ids: tuple = ()
    reg_ds_in: str = ""

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("independent_vars", tuple(self.independent_vars))
        set_("strata_vars", tuple(self.strata_vars))
        set_("partner_ids", tuple(int(k) for k in self.partner_ids))
        set_("ties", Ties.parse(self.ties))
        set_("censoring_level", float(self.censoring_level))
        if not self.independent_vars:
            raise ConfigError("independent_vars must not be empty")
        clash = {self.dependent_var, self.censoring_var} & set(self.independent_vars)
        if clash:
            raise ConfigError(f"independent_vars overlap outcome variables: {sorted(clash)}")
        if len(set(self.independent_vars)) != len(self.independent_vars):
            raise ConfigError("independent_vars contains duplicates")
        if len(set(self.partner_ids)) != len(self.partner_ids):
            raise ConfigError("partner_ids contains duplicates")
        if not self.xconv > 0:
            raise ConfigError("xconv must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be a positive integer")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        for name in ("groups", "min_count_per_grp_glob", "max_numb_of_grp"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.initial_estimates is None:
            set_("initial_estimates", (0.0,) * self.p)
        else:
            init = tuple(float(v) for v in self.initial_estimates)
            if len(init) != self.p:
                raise ConfigError(f"initial_estimates has {len(init)} values, expected {self.p}")
            set_("initial_estimates", init)

    @property
    def p(self) -> int:
        return len(self.independent_vars)

    def referenced_columns(self) -> list[str]:
        cols = [self.dependent_var, self.censoring_var, *self.independent_vars]
        cols += [s for s in self.strata_vars if s != PARTNER_VAR]
        cols += [v for v in (self.weight_var, self.freq_var) if v]
        return cols


def select_computation_path(spec: ModelSpec) -> ComputationPath:
    if PARTNER_VAR in spec.strata_vars:
        return ComputationPath.SITE_AGGREGATED
    return ComputationPath.CENTER_AGGREGATED


@dataclass(frozen=True, eq=False)
class AnalysisDataset:
    """A partner's usable rows, stored column-wise.

    ``strata`` holds one key per row; ``stratum_keys`` lists the distinct keys
    in lexicographic order, which defines the stratum index.
    """

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    weight: np.ndarray
    freq: np.ndarray
    strata: tuple
    covariate_names: tuple
    partner_id: int = 0
    dropped_rows: int = 0
    name: str = ""
    stratum_keys: tuple = field(init=False)

    def __post_init__(self):
        for arr in (self.time, self.event, self.covariates, self.weight, self.freq):
            arr.setflags(write=False)
        object.__setattr__(self, "stratum_keys", tuple(sorted(set(self.strata))))

    def __len__(self):
        return len(self.time)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(
                time=float(self.time[i]),
                event=int(self.event[i]),
                covariates=tuple(float(z) for z in self.covariates[i]),
                stratum=self.strata[i],
                weight=float(self.weight[i]),
                freq=int(self.freq[i]),
                partner_id=self.partner_id,
            )
            for i in range(len(self))
        ]

    def stratum_indices(self) -> dict:
        """Map each stratum key to the row indices belonging to it."""
        out: dict = {key: [] for key in self.stratum_keys}
        for i, key in enumerate(self.strata):
            out[key].append(i)
        return {key: np.asarray(idx, dtype=np.intp) for key, idx in out.items()}

    def subset(self, rows: Sequence[int]) -> "AnalysisDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return AnalysisDataset(
            time=self.time[rows].copy(),
            event=self.event[rows].copy(),
            covariates=self.covariates[rows].copy(),
            weight=self.weight[rows].copy(),
            freq=self.freq[rows].copy(),
            strata=tuple(self.strata[i] for i in rows),
            covariate_names=self.covariate_names,
            partner_id=self.partner_id,
            name=self.name,
        )


def make_dataset(time, event, covariates, *, strata=None, weight=None, freq=None,
                 covariate_names=None, partner_id=0, name="") -> AnalysisDataset:
    """Build a dataset directly from arrays (used by tests and the pooled path)."""
    time = np.asarray(time, dtype=float)
    n = len(time)
    covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
    event = np.asarray(event, dtype=np.int64)
    if strata is None:
        strata = [()] * n
    strata = tuple(tuple(s) if isinstance(s, (tuple, list)) else (s,) for s in strata)
    if covariate_names is None:
        covariate_names = tuple(f"z{i + 1}" for i in range(covariates.shape[1]))
    if n and (not np.all(np.isfinite(time)) or np.any(time <= 0)):
        raise NonPositiveTime("event/censoring times must be positive and finite")
    return AnalysisDataset(
        time=time,
        event=event,
        covariates=covariates,
        weight=np.ones(n) if weight is None else np.asarray(weight, dtype=float),
        freq=np.ones(n, dtype=np.int64) if freq is None else np.asarray(freq, dtype=np.int64),
        strata=strata,
        covariate_names=tuple(covariate_names),
        partner_id=partner_id,
        name=name,
    )


def _parse_number(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _open_source(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), os.fspath(source)
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source, getattr(source, "name", "<stream>")
    raise TypeError(f"cannot read tabular data from {type(source).__name__}")


def ingest_dataset(source, spec: ModelSpec, partner_id: int = 0) -> AnalysisDataset:
    """Read a comma-separated file into an :class:`AnalysisDataset`.

    Rows with a missing or non-numeric value in any referenced column are
    dropped and counted. Rows with a negative weight or a frequency below one
    are dropped as well. A non-positive time on an otherwise usable row is an
    error rather than a drop, since it points at a coding problem upstream.
    """
    handle, label = _open_source(source)
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{label} has no header row")
        header = [h.strip() for h in header]
        position = {name: i for i, name in enumerate(header)}
        for col in spec.referenced_columns():
            if col not in position:
                raise MissingColumn(col, label)
        partner_in_file = PARTNER_VAR in position
        needed = spec.referenced_columns()
        if PARTNER_VAR in spec.strata_vars and partner_in_file:
            needed = needed + [PARTNER_VAR]

        times, events, covs, weights, freqs, strata = [], [], [], [], [], []
        dropped = 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            values = {}
            for col in needed:
                idx = position[col]
                values[col] = _parse_number(row[idx]) if idx < len(row) else None
            if any(v is None for v in values.values()):
                dropped += 1
                continue
            weight = values[spec.weight_var] if spec.weight_var else 1.0
            freq = values[spec.freq_var] if spec.freq_var else 1.0
            if weight < 0 or freq < 1 or freq != int(freq):
                dropped += 1
                continue
            t = values[spec.dependent_var]
            if t <= 0:
                raise NonPositiveTime(f"{label}: non-positive time {t} in {spec.dependent_var!r}")
            key = []
            for s in spec.strata_vars:
                if s == PARTNER_VAR and not partner_in_file:
                    key.append(float(partner_id))
                else:
                    key.append(values[s])
            times.append(t)
            events.append(int(values[spec.censoring_var] != spec.censoring_level))
            covs.append([values[v] for v in spec.independent_vars])
            weights.append(weight)
            freqs.append(int(freq))
            strata.append(tuple(key))
    finally:
        if isinstance(source, (str, os.PathLike)):
            handle.close()

    if not times:
        raise EmptyDataset(f"{label} has no usable rows ({dropped} dropped)")
    p = spec.p
    return AnalysisDataset(
        time=np.asarray(times, dtype=float),
        event=np.asarray(events, dtype=np.int64),
        covariates=np.asarray(covs, dtype=float).reshape(len(times), p),
        weight=np.asarray(weights, dtype=float),
        freq=np.asarray(freqs, dtype=np.int64),
        strata=tuple(strata),
        covariate_names=spec.independent_vars,
        partner_id=partner_id,
        dropped_rows=dropped,
        name=spec.reg_ds_in or os.path.splitext(os.path.basename(label))[0],
    )


def concat_datasets(parts: Iterable[AnalysisDataset]) -> AnalysisDataset:
    """Stack partner datasets (pooled-oracle helper)."""
    parts = list(parts)
    return AnalysisDataset(
        time=np.concatenate([d.time for d in parts]),
        event=np.concatenate([d.event for d in parts]),
        covariates=np.vstack([d.covariates for d in parts]),
        weight=np.concatenate([d.weight for d in parts]),
        freq=np.concatenate([d.freq for d in parts]),
        strata=tuple(s for d in parts for s in d.strata),
        covariate_names=parts[0].covariate_names,
        partner_id=0,
        dropped_rows=sum(d.dropped_rows for d in parts),
        name=parts[0].name,
    )


def read_event_time_set(source, spec: ModelSpec):
    """Load a table of event times (column named after the dependent variable).

    Strata columns, when present, key the times by stratum; otherwise the
    list applies to every stratum. Tie counts are left unknown.
    """
    from .site import EventTimeGrid

    handle, label = _open_source(source)
    try:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or spec.dependent_var not in reader.fieldnames:
            raise MissingColumn(spec.dependent_var, label)
        strata_cols = [s for s in spec.strata_vars if s in reader.fieldnames]
        times: dict = {}
        for row in reader:
            t = _parse_number(row[spec.dependent_var])
            if t is None:
                continue
            key = tuple(float(row[s]) for s in strata_cols) if len(strata_cols) == len(spec.strata_vars) else ()
            times.setdefault(key, set()).add(t)
    finally:
        if isinstance(source, (str, os.PathLike)):
            handle.close()
    return EventTimeGrid({k: sorted(v) for k, v in times.items()})
