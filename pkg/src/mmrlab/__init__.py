"""Robust time-series classification lab: alternating classification and
fuzzy-clustering training with scheduled label correction, plus a
human-in-the-loop relabeling extension, under false-label-injection attacks."""

from .attack import NoiseSpec, inject, make_matrix
from .data import Dataset, GeneratorSpec, generate, load, save, split
from .hil import HilConfig, OracleAnnotator, ScriptedAnnotator
from .model import MmrModel, ModelConfig
from .trainer import RunConfig, RunResult, run, save_run

__all__ = [
    "Dataset", "GeneratorSpec", "generate", "split", "save", "load",
    "NoiseSpec", "make_matrix", "inject",
    "ModelConfig", "MmrModel",
    "HilConfig", "OracleAnnotator", "ScriptedAnnotator",
    "RunConfig", "RunResult", "run", "save_run",
]
