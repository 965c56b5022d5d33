"""Copula-frailty models for multi-type recurrent event data, fitted by Monte Carlo EM."""

from .event_data import Dataset, SubjectData, load_dataset, save_dataset
from .frailty import FrailtyModel
from .mcem import ConvergenceConfig, FitConfig, FitResult, fit, practical_convergence
from .frailty_posterior import MHConfig
from .simulate import SimConfig, generate_dataset, study_setting, run_study

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "SubjectData",
    "load_dataset",
    "save_dataset",
    "FrailtyModel",
    "MHConfig",
    "ConvergenceConfig",
    "FitConfig",
    "FitResult",
    "fit",
    "practical_convergence",
    "SimConfig",
    "generate_dataset",
    "study_setting",
    "run_study",
]
