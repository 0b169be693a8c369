"""Laplace-approximation inference for latent Gaussian models.

For each hyperparameter value the latent field's full conditional is replaced by
a Gaussian fitted at its mode (Newton iterations with step halving, linear
constraints imposed by conditioning by kriging). The resulting Laplace
approximation of the hyperparameter posterior is maximised, explored on a grid
of z-scores along the Hessian eigenvectors, and the grid mixture gives posterior
summaries of latent effects and linear predictors.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp

from .exceptions import ConvergenceError
from .lgm import Gaussian, LatentModel
from .sparse import NotPositiveDefiniteError, SparseCholesky

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
TAKAHASHI_ABOVE = 5000


class _Likelihood:
    """Observed rows of a model with vectorised log-likelihood derivatives."""

    def __init__(self, model: LatentModel):
        st = model.stack
        obs = st.observed
        rows, cols = np.nonzero(obs)
        self.rows = rows
        self.col = cols
        self.y = st.response.data[rows, cols]
        self.e = st.exposure[rows]
        self.gauss = np.array([isinstance(model.families[k], Gaussian) for k in cols], dtype=bool)
        self.Z = model.Z[rows].tocsr()
        pos = self.e > 0
        self.const = np.where(
            ~self.gauss & pos,
            self.y * np.log(np.where(pos, self.e, 1.0)) - gammaln(self.y + 1.0),
            0.0,
        )

    def precisions(self, model, theta):
        return model.observation_precisions(theta)[self.col]

    def evaluate(self, eta, prec):
        """Log-likelihood, gradient and negative Hessian diagonal w.r.t. eta."""
        g = self.gauss
        mass = ~g & (self.e > 0)
        mu = np.zeros_like(eta)
        with np.errstate(over="ignore"):
            # overflow gives -inf log-likelihood, which the line search rejects
            mu[mass] = self.e[mass] * np.exp(eta[mass])
        r = self.y - eta
        ll = np.where(
            g,
            0.5 * np.log(np.where(g, prec, 1.0)) - 0.5 * LOG_2PI - 0.5 * np.where(g, prec, 0.0) * r * r,
            self.const + self.y * eta - mu,
        )
        grad = np.where(g, np.where(g, prec, 0.0) * r, self.y - mu)
        W = np.where(g, np.where(g, prec, 0.0), mu)
        return float(ll.sum()), grad, W


@dataclass
class GaussianApprox:
    """Gaussian approximation of the latent full conditional at one theta."""

    theta: np.ndarray
    mode: np.ndarray
    precision: sp.csc_matrix
    factor: SparseCholesky
    prior_factor: SparseCholesky
    log_det: float
    log_like: float
    unconstrained_mean: np.ndarray
    iterations: int
    prior_precision: sp.csc_matrix = None
    log_posterior: float = None

    def constraint_terms(self, A):
        """``V = Q_c^{-1} A^T`` and ``S = A V`` for the constraint rows ``A``."""
        if A.shape[0] == 0:
            return np.zeros((len(self.mode), 0)), np.zeros((0, 0))
        V = self.factor.solve(A.T)
        V = V.reshape(len(self.mode), A.shape[0])
        return V, A @ V


def _krige(x, factor, A, e):
    if A.shape[0] == 0:
        return x
    V = factor.solve(A.T).reshape(len(x), A.shape[0])
    S = A @ V
    return x - V @ np.linalg.solve(S, A @ x - e)


def gaussian_approx(model: LatentModel, theta, x0=None, tol=1e-8, max_iter=50,
                    max_halvings=30) -> GaussianApprox:
    """Mode and precision of the Gaussian approximation to ``p(x | y, theta)``.

    Raises
    ------
    ConvergenceError
        If Newton's method does not converge in ``max_iter`` iterations (the last
        iterate is attached) or the posterior precision is not positive definite.
    """
    theta = np.asarray(theta, dtype=float)
    lik = getattr(model, "_lik_cache", None)
    if lik is None:
        lik = _Likelihood(model)
        object.__setattr__(model, "_lik_cache", lik)
    Q = model.prior_precision(theta)
    A, e = model.constraints, model.constraint_values
    prec = lik.precisions(model, theta)
    d = model.n_latent
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)

    def objective(x):
        ll, _, _ = lik.evaluate(lik.Z @ x, prec)
        return ll - 0.5 * x @ (Q @ x)

    f = objective(x)
    converged = False
    for it in range(1, max_iter + 1):
        eta = lik.Z @ x
        _, g, W = lik.evaluate(eta, prec)
        Qc = (Q + lik.Z.T @ sp.diags(W) @ lik.Z).tocsc()
        try:
            fac = SparseCholesky(Qc)
        except NotPositiveDefiniteError as exc:
            raise ConvergenceError(
                f"posterior precision is not positive definite at theta={theta.tolist()} "
                f"({exc}); review the priors or increase the jitter",
                last=x,
            ) from exc
        xu = fac.solve(lik.Z.T @ (g + W * eta))
        step = _krige(xu, fac, A, e) - x
        t, f_new = 1.0, objective(x + step)
        for _ in range(max_halvings):
            if f_new >= f - 1e-10 * (1.0 + abs(f)):
                break
            t *= 0.5
            f_new = objective(x + t * step)
        x_new = x + t * step
        delta = np.max(np.abs(x_new - x)) if d else 0.0
        x, f = x_new, f_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"Newton iterations did not converge in {max_iter} steps at theta={theta.tolist()}",
            last=x,
        )
    # Gaussian approximation at the mode
    eta = lik.Z @ x
    ll, g, W = lik.evaluate(eta, prec)
    Qc = (Q + lik.Z.T @ sp.diags(W) @ lik.Z).tocsc()
    fac = SparseCholesky(Qc)
    xu = fac.solve(lik.Z.T @ (g + W * eta))
    try:
        prior_fac = SparseCholesky(Q)
    except NotPositiveDefiniteError as exc:
        raise ConvergenceError(f"prior precision is not positive definite: {exc}") from exc
    return GaussianApprox(
        theta=theta,
        mode=x,
        precision=Qc,
        factor=fac,
        prior_factor=prior_fac,
        log_det=fac.logdet(),
        log_like=ll,
        unconstrained_mean=xu,
        iterations=it,
        prior_precision=Q,
    )


def _log_normal_cov(r, S):
    c = len(r)
    if c == 0:
        return 0.0
    sign, ld = np.linalg.slogdet(S)
    return -0.5 * c * LOG_2PI - 0.5 * ld - 0.5 * r @ np.linalg.solve(S, r)


def log_posterior_hyper(model: LatentModel, theta, ga: GaussianApprox | None = None,
                        x0=None) -> float:
    """Laplace approximation of ``log p(theta | y)`` up to an additive constant.

    ``log p(y | x*, theta) + log p(x* | theta) + log p(theta) - log p_G(x* | y, theta)``,
    with both Gaussian densities conditioned on the sum-to-zero constraints.
    """
    if ga is None:
        ga = gaussian_approx(model, theta, x0=x0)
    A, e = model.constraints, model.constraint_values
    x = ga.mode
    d = len(x)
    Q = ga.prior_precision
    lp_prior_x = 0.5 * ga.prior_factor.logdet() - 0.5 * d * LOG_2PI - 0.5 * x @ (Q @ x)
    dev = x - ga.unconstrained_mean
    lp_gauss_x = 0.5 * ga.log_det - 0.5 * d * LOG_2PI - 0.5 * dev @ (ga.precision @ dev)
    if A.shape[0]:
        Vp = ga.prior_factor.solve(A.T).reshape(d, A.shape[0])
        lp_prior_x -= _log_normal_cov(e, A @ Vp)
        Vc = ga.factor.solve(A.T).reshape(d, A.shape[0])
        lp_gauss_x -= _log_normal_cov(e - A @ ga.unconstrained_mean, A @ Vc)
    lp = ga.log_like + lp_prior_x + model.log_hyper_prior(theta) - lp_gauss_x
    ga.log_posterior = float(lp)
    return float(lp)


@dataclass
class HyperGrid:
    points: np.ndarray
    log_weights: np.ndarray
    log_posteriors: np.ndarray
    mode: np.ndarray
    curvature: np.ndarray
    scale: np.ndarray
    z_points: np.ndarray
    axis_fallback: bool = False
    approximations: list = field(default_factory=list, repr=False)
    trace: list = field(default_factory=list, repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def _map(fn, items, threads):
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def explore_hyper(model: LatentModel, init=None, z_scores=(-2.0, -1.0, 0.0, 1.0, 2.0),
                  threads=1, fd_step=1e-3, max_evals=500, prune=1e-5) -> HyperGrid:
    """Locate the hyperparameter mode and lay a weighted grid around it."""
    m = model.n_hyper
    if m == 0:
        ga = gaussian_approx(model, np.zeros(0))
        lp = log_posterior_hyper(model, np.zeros(0), ga)
        return HyperGrid(
            points=np.zeros((1, 0)), log_weights=np.zeros(1), log_posteriors=np.array([lp]),
            mode=np.zeros(0), curvature=np.zeros((0, 0)), scale=np.zeros((0, 0)),
            z_points=np.zeros((1, 0)), approximations=[ga],
        )
    theta0 = model.theta0 if init is None else np.asarray(init, dtype=float)
    if not np.all(np.isfinite(theta0)):
        raise ValueError("initial theta must be finite")

    trace = []
    state = {"x": None}

    def neg_lp(theta):
        try:
            ga = gaussian_approx(model, theta, x0=state["x"])
            val = log_posterior_hyper(model, theta, ga)
        except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError):
            trace.append((np.array(theta), -np.inf))
            return np.inf
        if not np.isfinite(val):
            trace.append((np.array(theta), -np.inf))
            return np.inf
        state["x"] = ga.mode
        trace.append((np.array(theta), val))
        return -val

    simplex = np.vstack([theta0] + [theta0 + 0.5 * np.eye(m)[i] for i in range(m)])
    res = minimize(
        neg_lp, theta0, method="Nelder-Mead",
        options=dict(maxfev=max_evals, fatol=1e-5, xatol=1e-4, initial_simplex=simplex,
                     adaptive=m > 2),
    )
    if not res.success or not np.isfinite(res.fun):
        raise ConvergenceError(
            f"hyperparameter optimisation failed after {res.nfev} evaluations: {res.message}",
            last=trace,
        )
    mode = np.asarray(res.x, dtype=float)
    ga_mode = gaussian_approx(model, mode, x0=state["x"])
    lp_mode = log_posterior_hyper(model, mode, ga_mode)
    x_mode = ga_mode.mode

    def f(theta):
        return -log_posterior_hyper(model, theta, x0=x_mode)

    H = _fd_hessian(f, mode, -lp_mode, fd_step)
    evals, evecs = np.linalg.eigh(H)
    fallback = bool(np.any(evals <= 0.0))
    if fallback:
        logger.warning("Hessian of -log p(theta|y) is not positive definite; using axis-aligned grid")
        diag = np.diag(H)
        sd = np.where(diag > 0, 1.0 / np.sqrt(np.abs(diag)), 1.0)
        scale = np.diag(sd)
    else:
        scale = evecs / np.sqrt(evals)[None, :]

    z_points = np.array(list(itertools.product(list(z_scores), repeat=m)), dtype=float)
    points = mode[None, :] + z_points @ scale.T

    def evaluate(theta):
        try:
            ga = gaussian_approx(model, theta, x0=x_mode)
            return ga, log_posterior_hyper(model, theta, ga)
        except (ConvergenceError, np.linalg.LinAlgError):
            return None, -np.inf

    results = _map(evaluate, list(points), threads)
    lps = np.array([r[1] for r in results])
    best = int(np.argmax(lps))
    if lps[best] > lp_mode:
        mode, lp_ref = points[best], lps[best]
    else:
        lp_ref = lp_mode
    floor = np.log(prune) if prune > 0 else -np.inf
    keep = np.isfinite(lps) & (lps - lp_ref >= floor)
    if not keep.any():
        raise ConvergenceError("no grid point could be evaluated", last=trace)
    lw = lps[keep] - logsumexp(lps[keep])
    return HyperGrid(
        points=points[keep],
        log_weights=lw,
        log_posteriors=lps[keep],
        mode=mode,
        curvature=H,
        scale=scale,
        z_points=z_points[keep],
        axis_fallback=fallback,
        approximations=[r[0] for r, k in zip(results, keep) if k],
        trace=trace,
    )


def _fd_hessian(f, x, fx, h):
    m = len(x)
    H = np.empty((m, m))
    E = np.eye(m) * h
    for i in range(m):
        H[i, i] = (f(x + E[i]) - 2.0 * fx + f(x - E[i])) / (h * h)
        for j in range(i):
            H[i, j] = H[j, i] = (
                f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
            ) / (4.0 * h * h)
    return H


def marginal_variances(ga: GaussianApprox, A, method="auto") -> np.ndarray:
    """Diagonal of the constrained posterior covariance of the latent field."""
    d = len(ga.mode)
    if d == 0:
        return np.zeros(0)
    if method == "auto":
        method = "solve" if d <= TAKAHASHI_ABOVE else "takahashi"
    if method == "solve":
        var = ga.factor.inverse_diagonal()
    elif method == "takahashi":
        var = ga.factor.selected_inverse().diagonal()
    else:
        raise ValueError(f"unknown method {method!r}")
    if A.shape[0]:
        V, S = ga.constraint_terms(A)
        var = var - np.einsum("ij,ij->i", V @ np.linalg.inv(S), V)
    return np.maximum(var, 0.0)


def predictor_moments(ga: GaussianApprox, Z, A, block=512):
    """Mean and variance of ``Z x`` under the constrained Gaussian approximation."""
    Z = sp.csr_matrix(Z)
    mean = Z @ ga.mode
    var = np.empty(Z.shape[0])
    if A.shape[0]:
        V, S = ga.constraint_terms(A)
        ZV = Z @ V
        corr = np.einsum("ij,ij->i", ZV @ np.linalg.inv(S), ZV)
    else:
        corr = np.zeros(Z.shape[0])
    for start in range(0, Z.shape[0], block):
        stop = min(start + block, Z.shape[0])
        Zb = Z[start:stop]
        X = ga.factor.solve_blocks(Zb.T.tocsc())
        var[start:stop] = np.asarray(Zb.multiply(X.T).sum(axis=1)).ravel()
    return mean, np.maximum(var - corr, 0.0)


@dataclass
class FitResult:
    model: LatentModel
    grid: HyperGrid
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    predictor_mean: np.ndarray
    predictor_sd: np.ndarray
    hyper_summaries: dict
    log_marginal_likelihood: float

    def effect(self, name):
        """Posterior mean and sd of one effect's latent values."""
        sl = self.model.latent_slice(name)
        return self.latent_mean[sl], self.latent_sd[sl]

    def predict_rows(self, tag):
        return predict_rows(self, tag)


def fit(model: LatentModel, z_scores=(-2.0, -1.0, 0.0, 1.0, 2.0), threads=1, init=None,
        variance_method="auto") -> FitResult:
    """Fit a latent Gaussian model and summarise the grid mixture posterior."""
    grid = explore_hyper(model, init=init, z_scores=z_scores, threads=threads)
    A = model.constraints
    w = grid.weights

    def moments(ga):
        lv = marginal_variances(ga, A, variance_method)
        pm, pv = predictor_moments(ga, model.Z, A)
        return ga.mode, lv, pm, pv

    mom = _map(moments, grid.approximations, threads)
    lm = sum(wi * m[0] for wi, m in zip(w, mom))
    lv = sum(wi * (m[1] + (m[0] - lm) ** 2) for wi, m in zip(w, mom))
    pm = sum(wi * m[2] for wi, m in zip(w, mom))
    pv = sum(wi * (m[3] + (m[2] - pm) ** 2) for wi, m in zip(w, mom))

    hyper = {}
    for i, h in enumerate(model.hypers):
        t = grid.points[:, i]
        tm = float(w @ t)
        nat = h.to_natural(t)
        nm = float(w @ nat)
        hyper[h.name] = dict(
            theta_mean=tm,
            theta_sd=float(np.sqrt(max(w @ (t - tm) ** 2, 0.0))),
            mean=nm,
            sd=float(np.sqrt(max(w @ (nat - nm) ** 2, 0.0))),
            mode=float(h.to_natural(grid.mode[i])),
        )
    if model.n_hyper:
        zs = np.sort(np.unique(np.asarray(z_scores, dtype=float)))
        dz = float(np.mean(np.diff(zs))) if len(zs) > 1 else 1.0
        log_vol = np.linalg.slogdet(grid.scale)[1] + model.n_hyper * np.log(dz)
        mlik = float(logsumexp(grid.log_posteriors) + log_vol)
    else:
        mlik = float(grid.log_posteriors[0])
    return FitResult(
        model=model,
        grid=grid,
        latent_mean=np.asarray(lm, dtype=float),
        latent_sd=np.sqrt(np.maximum(lv, 0.0)),
        predictor_mean=np.asarray(pm, dtype=float),
        predictor_sd=np.sqrt(np.maximum(pv, 0.0)),
        hyper_summaries=hyper,
        log_marginal_likelihood=mlik,
    )


def predict_rows(result: FitResult, tag):
    """Linear-predictor means and sds of the stack rows carrying ``tag``."""
    idx = result.model.stack.index(tag)
    return result.predictor_mean[idx], result.predictor_sd[idx]
