"""Soft clustered federated learning: FedSoft with IFCA and FedEM baselines."""

from .core import (
    ClientState,
    ConfigurationError,
    ContractViolation,
    DegenerateProblemError,
    ExperimentConfig,
    FederationDataset,
    RoundTrace,
    Seeds,
    SolverConfig,
    SolverDivergenceError,
)
from .datagen import PartitionPattern, generate_classification_federation, generate_federation
from .fedsoft import run_experiment
from .models import LossModel, model_for

__version__ = "0.1.0"
