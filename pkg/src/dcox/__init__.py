"""Distributed Cox proportional-hazards regression over horizontally partitioned data."""

from .errors import DcoxError
from .model import ComputationPath, ModelSpec, Ties, ingest_dataset, select_computation_path
from .newton import FitResult, run_fit
from .pooled import fit_pooled, fit_shards

__version__ = "0.1.0"

__all__ = [
    "ComputationPath", "DcoxError", "FitResult", "ModelSpec", "Ties",
    "fit_pooled", "fit_shards", "ingest_dataset", "run_fit", "select_computation_path",
]
