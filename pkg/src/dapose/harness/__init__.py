from .config import ExperimentConfig, load_config, save_config
from .dataset import load_dataset, load_datasets, save_dataset, save_datasets
from .runner import RunReport, run_experiment

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "load_config",
    "load_dataset",
    "load_datasets",
    "run_experiment",
    "save_config",
    "save_dataset",
    "save_datasets",
]
