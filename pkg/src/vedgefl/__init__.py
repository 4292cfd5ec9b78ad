"""Generative-AI-assisted federated learning over a vehicular edge: system model,
vehicle selection, joint bandwidth/power/generation allocation and a toy FL engine."""
from .allocator import (AllocationDecision, AllocationProblem, AllocatorConfig, bandwidth_allocate, bcd_solve,
                        generation_budget, power_assign)
from .bound import BoundParams, evaluate_bound
from .config import RunConfig, load_config
from .core import (DataQuality, LabelHistogram, ModelParams, WeightPolicy, aggregate, compute_emd,
                   compute_kappa)
from .errors import ContractViolation, DomainError, InfeasibleError, TrainingDivergedError
from .kernels import BACKEND
from .selection import SelectionConfig, select_vehicles, share_labels
from .simulate import RoundRecord, Simulation

__version__ = "0.1.0"

__all__ = [
    "AllocationDecision", "AllocationProblem", "AllocatorConfig", "BACKEND", "BoundParams",
    "ContractViolation", "DataQuality", "DomainError", "InfeasibleError", "LabelHistogram", "ModelParams",
    "RoundRecord", "RunConfig", "SelectionConfig", "Simulation", "TrainingDivergedError", "WeightPolicy",
    "aggregate", "bandwidth_allocate", "bcd_solve", "compute_emd", "compute_kappa", "evaluate_bound",
    "generation_budget", "load_config", "power_assign", "select_vehicles", "share_labels",
]
