"""scikit-learn style wrapper around model assembly and fitting.

The "X" of this estimator is a :class:`~multispat.stack.StackedData`; responses
live inside the stack, so ``y`` is accepted only for signature compatibility.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .inference import fit as _fit
from .lgm import assemble
from .stack import StackedData


class LatentGaussianModel(BaseEstimator):
    """Grid-Laplace fit of a multivariate latent Gaussian model.

    Parameters
    ----------
    effects : sequence of EffectSpec
        Latent effects, wired to stack blocks by name.
    families : sequence
        One likelihood per response column (``"poisson"``, ``"gaussian"`` or a
        family object).
    z_scores : sequence of float
        Standardised grid offsets used to explore the hyperparameter posterior.
    threads : int
        Worker threads for grid-point evaluations; results do not depend on it.
    variance_method : {"auto", "solve", "takahashi"}
    diffuse_precision : float
        Prior precision of intercepts and covariate coefficients.

    Attributes
    ----------
    model_ : LatentModel
    result_ : FitResult
    """

    def __init__(self, effects=(), families=("poisson",), z_scores=(-2.0, -1.0, 0.0, 1.0, 2.0),
                 threads=1, variance_method="auto", diffuse_precision=1e-6):
        self.effects = effects
        self.families = families
        self.z_scores = z_scores
        self.threads = threads
        self.variance_method = variance_method
        self.diffuse_precision = diffuse_precision

    def _validate_params(self):
        if not isinstance(self.threads, (int, np.integer)) or self.threads < 1:
            raise ValueError(f"threads must be a positive integer, got {self.threads!r}")
        if self.variance_method not in ("auto", "solve", "takahashi"):
            raise ValueError(f"unknown variance_method {self.variance_method!r}")
        if len(self.z_scores) == 0:
            raise ValueError("z_scores must not be empty")
        if not self.diffuse_precision > 0:
            raise ValueError("diffuse_precision must be positive")

    def fit(self, X: StackedData, y=None):
        if not isinstance(X, StackedData):
            raise TypeError(f"expected a StackedData, got {type(X).__name__}")
        self._validate_params()
        self.model_ = assemble(X, self.effects, self.families,
                               diffuse_precision=self.diffuse_precision)
        self.result_ = _fit(self.model_, z_scores=tuple(self.z_scores), threads=self.threads,
                            variance_method=self.variance_method)
        self.n_latent_ = self.model_.n_latent
        self.hyper_names_ = self.model_.hyper_names
        return self

    def predict(self, tag, return_std=False):
        """Posterior mean (and sd) of the linear predictor on rows tagged ``tag``."""
        check_is_fitted(self, "result_")
        mean, sd = self.result_.predict_rows(tag)
        return (mean, sd) if return_std else mean

    def effect(self, name):
        """Posterior mean and sd of one latent effect."""
        check_is_fitted(self, "result_")
        return self.result_.effect(name)

    @property
    def hyper_summaries_(self):
        check_is_fitted(self, "result_")
        return self.result_.hyper_summaries

    def score(self, X=None, y=None):
        """Log marginal likelihood of the fitted data (``X`` is ignored)."""
        check_is_fitted(self, "result_")
        return self.result_.log_marginal_likelihood
