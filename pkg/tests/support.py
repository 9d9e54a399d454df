"""Shared builders for the recidivism fixture and threaded distributed runs."""

import csv
import threading
from importlib import resources
from pathlib import Path

import numpy as np

from dcox.model import ModelSpec, make_dataset
from dcox.partition import partition_rows
from dcox.protocol.center import orchestrate_center
from dcox.protocol.partner import orchestrate_partner
from dcox.protocol.transport import LoopbackTransport

COVARIATES = ("fin", "age", "prio")


def rossi_path() -> Path:
    return Path(str(resources.files("dcox") / "data" / "rossi.csv"))


def rossi_columns():
    with open(rossi_path(), newline="") as fh:
        rows = list(csv.DictReader(fh))
    time = np.array([float(r["week"]) for r in rows])
    event = np.array([int(r["arrest"]) for r in rows])
    z = np.array([[float(r[c]) for c in COVARIATES] for r in rows])
    return time, event, z


def example_spec(example=1, **overrides):
    base = dict(dependent_var="week", censoring_var="arrest", independent_vars=COVARIATES,
                partner_ids=(1, 2, 3), reg_ds_in="rossi")
    if example == 1:
        base.update(run_id="dc1")
    else:
        base.update(run_id="dc2", strata_vars=("dp_cd",), ties="EFRON")
    base.update(overrides)
    return ModelSpec(**base)


def rossi_shards(seed=1, sizes=(134, 149, 149), stratify_by_partner=False, event_counts=None):
    time, event, z = rossi_columns()
    parts = partition_rows(len(time), sizes, seed, event.astype(bool), event_counts)
    shards = []
    for k, idx in enumerate(parts, start=1):
        strata = [(float(k),)] * len(idx) if stratify_by_partner else None
        shards.append(make_dataset(time[idx], event[idx], z[idx], strata=strata, partner_id=k,
                                   covariate_names=COVARIATES, name="rossi"))
    return shards, parts


def write_shards(tmp_path, seed=1, sizes=(134, 149, 149), event_counts=None):
    from dcox.partition import partition_file

    paths = [tmp_path / f"dp{k}" / "rossi.csv" for k in range(1, len(sizes) + 1)]
    return partition_file(rossi_path(), sizes, paths, seed=seed, event_var="arrest" if event_counts else None,
                          event_counts=event_counts)


def run_distributed(spec, shard_paths, transport=None, min_counts=None, **center_kwargs):
    """Center plus one thread per partner over a shared transport."""
    transport = transport or LoopbackTransport()
    codes = {}
    min_counts = min_counts or {}

    def serve(k, path):
        codes[k] = orchestrate_partner(path, k, transport, spec.run_id, min_counts.get(k))

    threads = [threading.Thread(target=serve, args=(k, p), daemon=True)
               for k, p in zip(spec.partner_ids, shard_paths)]
    for t in threads:
        t.start()
    try:
        outcome = orchestrate_center(spec, transport, **center_kwargs)
    finally:
        for t in threads:
            t.join(timeout=30)
    return outcome, codes, transport




# one "criterion N: PASS|FAIL ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []
