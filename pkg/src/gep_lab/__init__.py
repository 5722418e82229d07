"""Numerical laboratory for two-layer teacher-student inference and its
noisy generalized-linear equivalent, joined by an interpolating channel."""

from .kernels import (
    ACTIVATIONS,
    READOUTS,
    GaussEquivParams,
    OutputKernel,
    gauss_equiv_params,
    get_activation,
)
from .model import ModelSpec, kappa, make_model
from .posterior import ChainConfig, LogTarget, importance_ensemble, mala_chain
from .sampling import Dataset, gen_dataset, gen_side_info

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS", "READOUTS", "GaussEquivParams", "OutputKernel",
    "gauss_equiv_params", "get_activation", "ModelSpec", "kappa",
    "make_model", "ChainConfig", "LogTarget", "importance_ensemble",
    "mala_chain", "Dataset", "gen_dataset", "gen_side_info", "__version__",
]
