"""renforge: LMI-constrained learning of recurrent equilibrium networks.

Learns read-out parameters of a fixed random reservoir by convex
optimisation, with well-posedness, contraction, and incremental-ISS
certificates enforced as LMI constraints; supports structured (networked)
plants with distributed training.
"""

__version__ = "0.1.0"

from .activations import ActivationSpec, get_activation, validate_activation
from .engine import active_engine
from .model import (
    ContractionCertificate,
    Hyperparameters,
    ReadOut,
    TrainedModel,
    Trajectory,
    assemble_trained,
    fit_index,
    simulate_trained,
    simulate_untrained,
    solve_equilibrium,
)

__all__ = [
    "ActivationSpec",
    "ContractionCertificate",
    "Hyperparameters",
    "ReadOut",
    "TrainedModel",
    "Trajectory",
    "active_engine",
    "assemble_trained",
    "fit_index",
    "get_activation",
    "simulate_trained",
    "simulate_untrained",
    "solve_equilibrium",
    "validate_activation",
    "__version__",
]
