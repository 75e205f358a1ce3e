"""Rounded offline evaluation harness for top-K recommender systems.

Treats the model under test as a black box and scores it on three tiers:
standard ranking metrics, per-slice metrics, and behavioral tests, executed
under a seeded rotating fold protocol with bootstrapped statistical
verification of result reports.
"""

from ._version import __version__
from .datamodel import Dataset, generate_synthetic, load_dataset, save_dataset
from .folds import FoldPlan, RunSplit, materialize_split, partition, rotation_schedule
from .harness import EvalConfig, run_evaluation
from .metrics import GroundTruth, MetricReport, RankedList, evaluate_standard
from .scoring import DEFAULT_INCLUDED_TESTS, RunReport, aggregate, bootstrap_mean_ci, verify

__all__ = [
    "__version__",
    "Dataset",
    "DEFAULT_INCLUDED_TESTS",
    "EvalConfig",
    "FoldPlan",
    "GroundTruth",
    "MetricReport",
    "RankedList",
    "RunReport",
    "RunSplit",
    "aggregate",
    "bootstrap_mean_ci",
    "evaluate_standard",
    "generate_synthetic",
    "load_dataset",
    "materialize_split",
    "partition",
    "rotation_schedule",
    "run_evaluation",
    "save_dataset",
    "verify",
]
