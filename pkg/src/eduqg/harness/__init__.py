"""Experiment orchestration: the five-model matrix, human baselines, reports."""

from .config import ExperimentConfig, ModelKey
from .matrix import DESIGNATED_BASELINES, STAGE_PLANS, RunManifest, human_baseline, run_matrix
from .reporting import ReportStyle, examples_table, render_report

__all__ = [
    "DESIGNATED_BASELINES",
    "ExperimentConfig",
    "ModelKey",
    "ReportStyle",
    "RunManifest",
    "STAGE_PLANS",
    "examples_table",
    "human_baseline",
    "render_report",
    "run_matrix",
]
