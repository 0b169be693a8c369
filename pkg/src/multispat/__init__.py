"""Multivariate spatial latent Gaussian models.

Shared-component Besag models for areal counts, SPDE Matérn fields for
geostatistical data and log-Gaussian Cox processes for point patterns, fitted
with a Laplace approximation over a hyperparameter grid.
"""

__version__ = "0.1.0"

from .areal import AdjacencyGraph, besag_precision, iid_precision, read_graph
from .estimator import LatentGaussianModel
from .exceptions import (
    AssemblyError,
    ConvergenceError,
    DataError,
    InvalidGeometryError,
    ParseError,
    StructuralError,
)
from .geometry import Mesh, Polygon, Projector, build_mesh, dual_weights, projector_matrix
from .inference import FitResult, explore_hyper, fit, gaussian_approx, log_posterior_hyper
from .lgm import Gaussian, LatentModel, Poisson, assemble, besag, copy, covariate, iid, intercept, spde_effect
from .spde import MaternParams, PcPriorSpec, fem_matrices, matern_covariance, matern_precision
from .stack import MISSING, StackedData, join_stacks, stack_areal, stack_geostat, stack_point_pattern

__all__ = [
    "AdjacencyGraph", "AssemblyError", "ConvergenceError", "DataError", "FitResult", "Gaussian",
    "InvalidGeometryError", "LatentGaussianModel", "LatentModel", "MISSING", "MaternParams", "Mesh",
    "ParseError", "PcPriorSpec", "Poisson", "Polygon", "Projector", "StackedData", "StructuralError",
    "assemble", "besag", "besag_precision", "build_mesh", "copy", "covariate", "dual_weights",
    "explore_hyper", "fem_matrices", "fit", "gaussian_approx", "iid", "iid_precision", "intercept",
    "join_stacks", "log_posterior_hyper", "matern_covariance", "matern_precision", "projector_matrix",
    "read_graph", "spde_effect", "stack_areal", "stack_geostat", "stack_point_pattern",
]
