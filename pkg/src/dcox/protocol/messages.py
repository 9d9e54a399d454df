"""Round messages and their CSV wire format.

A message is a set of small CSV files: ``meta.csv`` (key, value), one file
per payload table, and ``manifest.csv`` listing every payload file with its
row count and column names. Floats are written with ``repr`` so they
round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import MalformedPayload
from ..model import ModelSpec

MANIFEST = "manifest.csv"
META = "meta.csv"
TRIGGER = "files_done.ok"


class MessageKind(str, enum.Enum):
    HANDSHAKE_REQUEST = "HANDSHAKE_REQUEST"
    HANDSHAKE_REPLY = "HANDSHAKE_REPLY"
    ITERATE = "ITERATE"
    SUMMARY_REPLY = "SUMMARY_REPLY"
    FINALIZE = "FINALIZE"
    DIAGNOSTICS_REPLY = "DIAGNOSTICS_REPLY"
    STOP = "STOP"


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = tuple(self.columns)

    def column(self, name) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]


@dataclass
class RoundMessage:
    run_id: str
    round: int
    kind: MessageKind
    meta: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = MessageKind(self.kind)


# Tables and leading columns every message of a kind must carry; columns that
# depend on p (d1_1, s2_2_1, ...) are checked by the consumer.
REQUIRED = {
    MessageKind.HANDSHAKE_REQUEST: {},
    MessageKind.HANDSHAKE_REPLY: {
        "censoring": ("stratum", "total", "event", "censored"),
        "covsums": ("stratum", "total_weight"),
    },
    MessageKind.ITERATE: {"beta": ("name", "value")},
    MessageKind.SUMMARY_REPLY: {},
    MessageKind.FINALIZE: {"beta": ("name", "value"), "baseline": ("stratum", "time", "cumhaz")},
    MessageKind.DIAGNOSTICS_REPLY: {
        "bins": ("bin", "count", "mean_linear_predictor", "mean_martingale", "mean_deviance"),
    },
    MessageKind.STOP: {},
}

OPTIONAL = {
    "grid": ("stratum", "time"),
    "summary": ("stratum", "time", "d0", "s0", "tie_count"),
    "score": ("stratum", "loglik"),
    "baseline": ("stratum", "time", "cumhaz"),
}


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def encode_stratum(key: tuple) -> str:
    return ";".join(repr(float(v)) for v in key)


def decode_stratum(text: str) -> tuple:
    return tuple(float(v) for v in text.split(";")) if text else ()


def _write_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def encode(msg: RoundMessage) -> dict:
    """Serialise to ``{filename: text}``; the manifest is included, the trigger is not."""
    meta = {"run_id": msg.run_id, "round": msg.round, "kind": msg.kind.value, **msg.meta}
    files = {META: _write_csv(("key", "value"), sorted(meta.items()))}
    manifest = [(META, len(meta), "key;value")]
    for name in sorted(msg.tables):
        table = msg.tables[name]
        fname = f"{name}.csv"
        files[fname] = _write_csv(table.columns, table.rows)
        manifest.append((fname, len(table.rows), ";".join(table.columns)))
    files[MANIFEST] = _write_csv(("file", "rows", "columns"), manifest)
    return files


def _read_csv(text: str, fname: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedPayload(f"{fname}: empty file (no header)")
    return tuple(rows[0]), [tuple(r) for r in rows[1:]]


def decode(files: dict) -> RoundMessage:
    if MANIFEST not in files:
        raise MalformedPayload(f"payload has no {MANIFEST}")
    _, entries = _read_csv(files[MANIFEST], MANIFEST)
    parsed = {}
    for entry in entries:
        if len(entry) != 3:
            raise MalformedPayload(f"{MANIFEST}: bad row {entry!r}")
        fname, nrows, cols = entry
        if fname not in files:
            raise MalformedPayload(f"file {fname} listed in manifest is missing")
        header, rows = _read_csv(files[fname], fname)
        for col in cols.split(";") if cols else ():
            if col not in header:
                raise MalformedPayload(f"{fname}: missing declared column {col!r}")
        if len(rows) != int(nrows):
            raise MalformedPayload(f"{fname}: manifest declares {nrows} rows, found {len(rows)}")
        parsed[fname] = (header, rows)

    if META not in parsed:
        raise MalformedPayload(f"manifest does not list {META}")
    meta = dict(parsed.pop(META)[1])
    for key in ("run_id", "round", "kind"):
        if key not in meta:
            raise MalformedPayload(f"{META}: missing key {key!r}")
    try:
        kind = MessageKind(meta.pop("kind"))
    except ValueError as exc:
        raise MalformedPayload(f"{META}: {exc}") from None
    run_id, rnd = meta.pop("run_id"), int(meta.pop("round"))
    tables = {fname[:-4]: Table(header, rows) for fname, (header, rows) in parsed.items()}

    for name, cols in REQUIRED[kind].items():
        if name not in tables:
            raise MalformedPayload(f"{kind.value} payload lacks {name}.csv")
    for name, table in tables.items():
        needed = REQUIRED[kind].get(name) or OPTIONAL.get(name, ())
        for col in needed:
            if col not in table.columns:
                raise MalformedPayload(f"{name}.csv: missing column {col!r}")
    return RoundMessage(run_id, rnd, kind, meta, tables)


# -- model spec carried by the handshake -------------------------------------

_SPEC_FIELDS = (
    "dependent_var", "censoring_var", "censoring_level", "independent_vars", "strata_vars",
    "ties", "weight_var", "freq_var", "groups", "min_count_per_grp_glob", "max_numb_of_grp",
    "run_id", "reg_ds_in",
)


def spec_to_meta(spec: ModelSpec) -> dict:
    out = {}
    for name in _SPEC_FIELDS:
        value = getattr(spec, name)
        if isinstance(value, tuple):
            value = " ".join(value)
        elif value is None:
            value = ""
        elif isinstance(value, enum.Enum):
            value = value.value
        out[f"spec.{name}"] = format_value(value)
    return out


def spec_from_meta(meta: dict) -> ModelSpec:
    get = lambda name: meta.get(f"spec.{name}", "")  # noqa: E731
    try:
        return ModelSpec(
            dependent_var=get("dependent_var"),
            censoring_var=get("censoring_var"),
            censoring_level=float(get("censoring_level")),
            independent_vars=tuple(get("independent_vars").split()),
            strata_vars=tuple(get("strata_vars").split()),
            ties=get("ties"),
            weight_var=get("weight_var") or None,
            freq_var=get("freq_var") or None,
            groups=int(get("groups")),
            min_count_per_grp_glob=int(get("min_count_per_grp_glob")),
            max_numb_of_grp=int(get("max_numb_of_grp")),
            run_id=get("run_id"),
            reg_ds_in=get("reg_ds_in"),
        )
    except (ValueError, TypeError) as exc:
        raise MalformedPayload(f"handshake model specification is invalid: {exc}") from None


# -- numeric packing helpers --------------------------------------------------

def tri_columns(prefix: str, p: int) -> list[str]:
    """Lower-triangle column names, row-major: prefix_1_1, prefix_2_1, prefix_2_2, ..."""
    return [f"{prefix}_{i + 1}_{j + 1}" for i in range(p) for j in range(i + 1)]


def pack_tri(mat) -> list[float]:
    mat = np.asarray(mat)
    p = mat.shape[0]
    return [float(mat[i, j]) for i in range(p) for j in range(i + 1)]


def unpack_tri(values, p: int) -> np.ndarray:
    out = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            out[i, j] = out[j, i] = values[k]
            k += 1
    return out


def vec_columns(prefix: str, p: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(p)]


def float_rows(table: Table, columns) -> np.ndarray:
    """Pull ``columns`` out of a table as a float matrix, naming any missing column."""
    idx = []
    for col in columns:
        if col not in table.columns:
            raise MalformedPayload(f"missing column {col!r}")
        idx.append(table.columns.index(col))
    try:
        return np.array([[float(row[i]) for i in idx] for row in table.rows], dtype=float).reshape(len(table.rows), len(idx))
    except ValueError as exc:
        raise MalformedPayload(f"non-numeric value: {exc}") from None
