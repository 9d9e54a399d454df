"""Split one pooled file into horizontally partitioned partner shards."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, IoFailure, MissingColumn, SizeMismatch
from .model import PARTNER_VAR

DEFAULT_SEED = 20180401


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path} has no header")
    return rows[0], rows[1:]


def partition_rows(n: int, sizes, seed: int = DEFAULT_SEED, events=None, event_counts=None) -> list[np.ndarray]:
    """Row indices for each shard after a seeded shuffle.

    With ``event_counts`` the events and censored rows are shuffled
    separately so shard ``k`` receives exactly ``event_counts[k]`` events.
    Indices within a shard are returned in ascending order.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes) or sum(sizes) != n:
        raise SizeMismatch(f"shard sizes {sizes} sum to {sum(sizes)}, dataset has {n} rows")
    rng = np.random.default_rng(seed)
    if event_counts is None:
        order = rng.permutation(n)
        cuts = np.cumsum(sizes)[:-1]
        return [np.sort(part) for part in np.split(order, cuts)]

    event_counts = [int(e) for e in event_counts]
    events = np.asarray(events, dtype=bool)
    ev_rows = rng.permutation(np.flatnonzero(events))
    cens_rows = rng.permutation(np.flatnonzero(~events))
    cens_counts = [s - e for s, e in zip(sizes, event_counts)]
    if len(event_counts) != len(sizes) or sum(event_counts) != len(ev_rows) or min(cens_counts) < 0:
        raise SizeMismatch(f"event counts {event_counts} do not fit sizes {sizes} with {len(ev_rows)} events")
    ev_parts = np.split(ev_rows, np.cumsum(event_counts)[:-1])
    cens_parts = np.split(cens_rows, np.cumsum(cens_counts)[:-1])
    return [np.sort(np.concatenate([a, b])) for a, b in zip(ev_parts, cens_parts)]


def partition_file(source, sizes, out_paths, seed: int = DEFAULT_SEED, event_var: str | None = None,
                   censoring_level: str = "0", event_counts=None) -> list[Path]:
    """Write shards of ``source`` with a ``dp_cd`` column valued 1..K appended.

    ``event_var`` and ``event_counts`` together pin the number of events per
    shard; rows whose ``event_var`` differs from ``censoring_level`` count as
    events.
    """
    header, rows = _read_rows(source)
    if len(out_paths) != len(sizes):
        raise ConfigError(f"{len(sizes)} sizes but {len(out_paths)} output paths")
    events = None
    if event_counts is not None:
        if event_var is None:
            raise ConfigError("event_counts requires event_var")
        if event_var not in header:
            raise MissingColumn(event_var, source)
        col = header.index(event_var)
        events = [float(r[col]) != float(censoring_level) for r in rows]
    parts = partition_rows(len(rows), sizes, seed, events, event_counts)
    keep = [i for i, name in enumerate(header) if name != PARTNER_VAR]
    written = []
    for k, (idx, dest) in enumerate(zip(parts, out_paths), start=1):
        dest = Path(dest)
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([header[i] for i in keep] + [PARTNER_VAR])
                for i in idx:
                    w.writerow([rows[i][j] for j in keep] + [k])
        except OSError as exc:
            raise IoFailure(f"cannot write {dest}: {exc}") from exc
        written.append(dest)
    return written
