"""Coupled analysis transform learning for fast inversion of compressive measurements."""

__version__ = "0.1.0"

from .baseline import CsSolverConfig, cs_reconstruct, dct_basis, soft_threshold
from .coupled import (
    CoupledModel,
    TrainConfig,
    TrainTrace,
    coupled_objective,
    load_model,
    reconstruct,
    save_model,
    train,
)
from .data import ErrorStats, error_stats, load_windows_csv, nmse, save_matrix_csv, synth_signals
from .errors import DataError, DimensionError, NumericalError, SingularTransformError
from .sensing import SensingMatrix, bernoulli_matrix, compress
from .transform import tl_objective, update_coefficients, update_transform

__all__ = [
    "CoupledModel", "CsSolverConfig", "DataError", "DimensionError", "ErrorStats",
    "NumericalError", "SensingMatrix", "SingularTransformError", "TrainConfig",
    "TrainTrace", "bernoulli_matrix", "compress", "coupled_objective",
    "cs_reconstruct", "dct_basis", "error_stats", "load_model", "load_windows_csv",
    "nmse", "reconstruct", "save_matrix_csv", "save_model", "soft_threshold",
    "synth_signals", "tl_objective", "train", "update_coefficients", "update_transform",
]
