"""Fault-tolerant parallel FP-Growth and KNN on an emulated one-sided fabric."""

from .kernels import BACKEND
from .harness.runner import Metrics, RunConfig, RunResult, run_experiment

__version__ = "0.1.0"

__all__ = ["BACKEND", "Metrics", "RunConfig", "RunResult", "run_experiment", "__version__"]
