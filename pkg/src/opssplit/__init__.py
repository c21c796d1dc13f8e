"""Learning PDE dynamics by operator splitting: fixed finite-difference
convolutions carry the linear terms, small trainable operator networks learn
the non-linear ones, and their sum integrates in time as a neural ODE.
"""

from .datasets import Dataset, NormStats, SimParams, Trajectory, normalize, read_dataset, subsample, write_dataset
from .estimators import (
    AutoregressiveSurrogate,
    NeuralOdeSurrogate,
    OperatorSplitSurrogate,
    load_fitted,
    make_surrogate,
    save_fitted,
)
from .integrators import BlowUpError, IntegratorConfig, euler_step, rk4_step
from .metrics import nrmse, operator_compare, run_scenarios, theorem_shift_harness
from .operators import ConvOperatorConfig, OperatorModel, SpectralOperatorConfig, build_model
from .rhs import SplitRHS, build_compressible_rhs, build_incompressible_rhs, lie_compose, strang_compose
from .simulate import sample_params, solve_compressible, solve_incompressible
from .stencils import StencilKernel, apply_stencil, make_stencil, measure_order
from .training import TrainConfig, adam_step, relative_lp_loss, train

__version__ = "0.1.0"

__all__ = [
    "AutoregressiveSurrogate",
    "BlowUpError",
    "ConvOperatorConfig",
    "Dataset",
    "IntegratorConfig",
    "NeuralOdeSurrogate",
    "NormStats",
    "OperatorModel",
    "OperatorSplitSurrogate",
    "SimParams",
    "SpectralOperatorConfig",
    "SplitRHS",
    "StencilKernel",
    "TrainConfig",
    "Trajectory",
    "adam_step",
    "apply_stencil",
    "build_compressible_rhs",
    "build_incompressible_rhs",
    "build_model",
    "euler_step",
    "lie_compose",
    "load_fitted",
    "make_stencil",
    "make_surrogate",
    "measure_order",
    "normalize",
    "nrmse",
    "operator_compare",
    "read_dataset",
    "relative_lp_loss",
    "rk4_step",
    "run_scenarios",
    "sample_params",
    "save_fitted",
    "solve_compressible",
    "solve_incompressible",
    "strang_compose",
    "subsample",
    "theorem_shift_harness",
    "train",
    "write_dataset",
]
