"""Dataset IO, splits, experiment orchestration and report emission."""

from .experiment import ExperimentConfig, check_propositions, run_ablation, run_benchmark
from .io import dataset_digest, load_dataset, save_dataset
from .report import emit_report
from .splits import nested_subsample, split_stratified

__all__ = [
    "ExperimentConfig",
    "check_propositions",
    "dataset_digest",
    "emit_report",
    "load_dataset",
    "nested_subsample",
    "run_ablation",
    "run_benchmark",
    "save_dataset",
    "split_stratified",
]
