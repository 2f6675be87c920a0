"""Benchmark inverse problems."""

from .darcy import (
    DarcyProblem,
    KLField,
    darcy_inverse_problem,
    darcy_observe,
    darcy_solve,
    generate_synthetic_data,
    interpolate_pressure,
    kl_log_permeability,
    load_synthetic,
    observation_nodes,
    save_synthetic,
)
from .elliptic import (
    Elliptic1DProblem,
    elliptic1d_forward,
    elliptic1d_gradient,
    elliptic1d_initial_positions,
)

__all__ = [
    "DarcyProblem",
    "Elliptic1DProblem",
    "KLField",
    "darcy_inverse_problem",
    "darcy_observe",
    "darcy_solve",
    "elliptic1d_forward",
    "elliptic1d_gradient",
    "elliptic1d_initial_positions",
    "generate_synthetic_data",
    "interpolate_pressure",
    "kl_log_permeability",
    "load_synthetic",
    "observation_nodes",
    "save_synthetic",
]
