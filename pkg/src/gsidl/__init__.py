"""Leak localisation in water networks from few pressure sensors.

Graph-state interpolation fills in unmeasured heads; label-consistent
dictionary learning classifies the resulting residuals by leak node.
"""

from .dictionary import classify, ksvd_train, lcksvd_train
from .errors import (ConfigurationError, DegenerateDatasetError, GsiDlError, InputError, NetworkError,
                     TrainingAbortedError)
from .graph import NetworkGraph, SensorLayout, build_matrices, grid_network, load_network, orient_edges
from .gsi import GraphStateInterpolator, InterpolationProblem, interpolate, local_estimate
from .hydraulics import ScenarioSpec, generate_dataset, simulate
from .localize import (DLParams, GSIParams, GsiDlModel, classify_ensemble, classify_gsi_dl,
                       select_virtual_sensors, train_ensemble, train_gsi_dl, vote)
from .omp import omp

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DLParams", "DegenerateDatasetError", "GSIParams", "GraphStateInterpolator",
    "GsiDlError", "GsiDlModel", "InputError", "InterpolationProblem", "NetworkError", "NetworkGraph",
    "ScenarioSpec", "SensorLayout", "TrainingAbortedError", "build_matrices", "classify", "classify_ensemble",
    "classify_gsi_dl", "generate_dataset", "grid_network", "interpolate", "ksvd_train", "lcksvd_train",
    "load_network", "local_estimate", "omp", "orient_edges", "select_virtual_sensors", "simulate",
    "train_ensemble", "train_gsi_dl", "vote",
]
