from picore.config import ExperimentConfig, load_experiment
from picore.coreset import CoresetSelection, FeatureMatrix, select
from picore.dataset import Dataset, generate_dataset
from picore.field import Field, GridSpec
from picore.fno import FnoConfig, FnoParams, fno_forward, fno_init
from picore.pipeline import (
    ExperimentReport,
    account_costs,
    compare_methods,
    run_experiment,
    run_full,
    run_picore,
    run_supervised,
    run_unsupervised_baseline,
)
from picore.solvers import PdeKind, solve

__all__ = [
    "ExperimentConfig",
    "load_experiment",
    "CoresetSelection",
    "FeatureMatrix",
    "select",
    "Dataset",
    "generate_dataset",
    "Field",
    "GridSpec",
    "FnoConfig",
    "FnoParams",
    "fno_forward",
    "fno_init",
    "ExperimentReport",
    "account_costs",
    "compare_methods",
    "run_experiment",
    "run_full",
    "run_picore",
    "run_supervised",
    "run_unsupervised_baseline",
    "PdeKind",
    "solve",
]
