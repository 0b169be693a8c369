"""Brute-force reference computations for small models.

Nothing here touches the sparse engine: posteriors are computed with dense
linear algebra, hyperparameter marginals by quadrature, and the joint posterior
of latent field and hyperparameters by random-walk Metropolis.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import simpson
from scipy.special import gammaln, logsumexp

from .lgm import Gaussian, LatentModel

logger = logging.getLogger(__name__)

MAX_DENSE_DIM = 2000


@dataclass
class DenseModel:
    """Dense restatement of a latent Gaussian model at fixed hyperparameters.

    Only observed rows are kept in ``Z``/``y``. ``precision`` holds the Gaussian
    observation precision per row and NaN for Poisson rows.
    """

    Q: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    exposure: np.ndarray
    gaussian: np.ndarray
    precision: np.ndarray
    A: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        if self.Q.shape[0] > MAX_DENSE_DIM:
            raise ValueError(f"dense oracle limited to {MAX_DENSE_DIM} latent values")

    @classmethod
    def from_model(cls, model: LatentModel, theta) -> "DenseModel":
        st = model.stack
        theta = np.asarray(theta, dtype=float)
        rows, cols = np.nonzero(st.observed)
        prec = model.observation_precisions(theta)[cols]
        gauss = np.array([isinstance(model.families[k], Gaussian) for k in cols], dtype=bool)
        return cls(
            Q=sum(c(theta) * M for c, M in _dense_prior_terms(model)),
            Z=model.Z[rows].toarray(),
            y=st.response.data[rows, cols].copy(),
            exposure=st.exposure[rows].copy(),
            gaussian=gauss,
            precision=np.where(gauss, prec, np.nan),
            A=np.array(model.constraints, dtype=float),
            e=np.array(model.constraint_values, dtype=float),
        )


def _condition(mean, cov, A, e):
    if A.shape[0] == 0:
        return mean, cov
    CA = cov @ A.T
    S = A @ CA
    K = np.linalg.solve(S, CA.T).T
    return mean - K @ (A @ mean - e), cov - K @ CA.T


def exact_gaussian_posterior(dm: DenseModel):
    """Closed-form posterior mean and covariance of an all-Gaussian model."""
    if not np.all(dm.gaussian):
        raise ValueError("exact posterior needs Gaussian likelihoods only")
    W = dm.precision
    P = dm.Q + dm.Z.T @ (W[:, None] * dm.Z)
    c = sla.cho_factor(P, lower=True)
    mean = sla.cho_solve(c, dm.Z.T @ (W * dm.y))
    cov = sla.cho_solve(c, np.eye(len(P)))
    return _condition(mean, cov, dm.A, dm.e)


def gaussian_log_marginal(dm: DenseModel) -> float:
    """log p(y | theta) of an all-Gaussian model from the marginal covariance of y.

    With constraints ``A x = e`` the result is ``log p(y | A x = e)``, obtained from
    the joint Gaussian of ``(y, A x)``.
    """
    if not np.all(dm.gaussian):
        raise ValueError("marginal likelihood oracle needs Gaussian likelihoods only")
    Sigma = np.linalg.inv(dm.Q)
    Sigma = 0.5 * (Sigma + Sigma.T)
    n, c = len(dm.y), dm.A.shape[0]
    M = np.vstack([dm.Z, dm.A])
    C = M @ Sigma @ M.T
    C[:n, :n] += np.diag(1.0 / dm.precision)
    v = np.concatenate([dm.y, dm.e])
    out = _mvn_logpdf(v, C)
    if c:
        out -= _mvn_logpdf(dm.e, C[n:, n:])
    return out


def _mvn_logpdf(v, C):
    sign, ld = np.linalg.slogdet(C)
    return float(-0.5 * len(v) * np.log(2 * np.pi) - 0.5 * ld - 0.5 * v @ np.linalg.solve(C, v))


@dataclass
class QuadratureResult:
    log_norm: float
    mean: float
    var: float


def quadrature_1d(logf, lo, hi, n=2001) -> QuadratureResult:
    """Composite Simpson integration of ``exp(logf)`` on ``[lo, hi]``.

    Returns the log of the integral and the normalised mean and variance.
    """
    x = np.linspace(lo, hi, n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lf = np.asarray([logf(v) for v in x], dtype=float)
    lf = np.where(np.isnan(lf), -np.inf, lf)
    top = np.max(lf)
    f = np.exp(lf - top)
    Z = simpson(f, x=x)
    mean = simpson(x * f, x=x) / Z
    var = simpson((x - mean) ** 2 * f, x=x) / Z
    return QuadratureResult(log_norm=float(np.log(Z) + top), mean=float(mean), var=float(var))


def effective_sample_size(chain) -> np.ndarray:
    """ESS per column via Geyer's initial monotone positive-sequence estimator."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    n, p = chain.shape
    out = np.empty(p)
    for j in range(p):
        x = chain[:, j] - chain[:, j].mean()
        v = x @ x / n
        if v == 0:
            out[j] = n
            continue
        f = np.fft.rfft(x, 2 * n)
        acf = np.fft.irfft(f * np.conj(f))[:n] / (n * v)
        pairs = acf[: (n // 2) * 2].reshape(-1, 2).sum(axis=1)
        pos = np.nonzero(pairs <= 0)[0]
        pairs = pairs[: pos[0]] if len(pos) else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        out[j] = n / max(tau, 1.0 / n)
    return out


@dataclass
class MHResult:
    """Random-walk Metropolis output.

    ``latent`` and ``theta`` are post-burn-in draws; ``latent_mcse`` etc. are
    Monte-Carlo standard errors derived from effective sample sizes.
    """

    latent: np.ndarray
    theta: np.ndarray
    latent_mean: np.ndarray
    latent_mcse: np.ndarray
    theta_mean: np.ndarray
    theta_mcse: np.ndarray
    ess: np.ndarray
    acceptance_rate: float
    proposal_scale: np.ndarray
    warning: bool

    def to_csv(self, path, latent_names=None, theta_names=None):
        latent_names = latent_names or [f"x{i}" for i in range(self.latent.shape[1])]
        theta_names = theta_names or [f"theta{i}" for i in range(self.theta.shape[1])]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(list(latent_names) + list(theta_names))
            for a, b in zip(self.latent, self.theta):
                w.writerow([repr(float(v)) for v in np.concatenate([a, b])])


def mh_sample(model: LatentModel, iterations=200_000, seed=0, init_theta=None,
              init_latent=None, adapt_fraction=0.2, burn_fraction=0.25,
              thin=1) -> MHResult:
    """Adaptive random-walk Metropolis on the joint posterior of ``(x, theta)``.

    The latent vector is parametrised on the constraint subspace ``x = x0 + N z``
    (``N`` an orthonormal null-space basis), where the constrained Gaussian prior
    has precision ``N^T Q N``. Per-coordinate proposal scales are tuned on the first
    ``adapt_fraction`` of iterations and then frozen.
    """
    d = model.n_latent
    if d > 200:
        raise ValueError("mh_sample is meant for latent dimension <= 200")
    rng = np.random.default_rng(seed)
    st = model.stack
    rows, cols = np.nonzero(st.observed)
    Z = model.Z[rows].toarray()
    y = st.response.data[rows, cols]
    ex = st.exposure[rows]
    gauss = np.array([isinstance(model.families[k], Gaussian) for k in cols], dtype=bool)
    pos = ex > 0
    pois_const = np.where(~gauss & pos, y * np.log(np.where(pos, ex, 1.0)) - gammaln(y + 1), 0.0)
    A = np.asarray(model.constraints, dtype=float)
    if A.shape[0]:
        N = sla.null_space(A)
        x0 = np.linalg.lstsq(A, model.constraint_values, rcond=None)[0]
    else:
        N = np.eye(d)
        x0 = np.zeros(d)
    ZN = Z @ N
    Zx0 = Z @ x0
    m = model.n_hyper
    k = N.shape[1]
    terms = _dense_prior_terms(model)
    # projected pieces: N^T M N, N^T M x0 and x0^T M x0 per term
    proj = [(coef, N.T @ M @ N, N.T @ M @ x0, x0 @ M @ x0) for coef, M in terms]

    def log_target(z, theta):
        c = [coef(theta) for coef, *_ in proj]
        P = sum(ci * p[1] for ci, p in zip(c, proj))
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            return -np.inf
        quad = sum(ci * (z @ p[1] @ z + 2.0 * z @ p[2] + p[3]) for ci, p in zip(c, proj))
        lp = np.sum(np.log(np.diag(L))) - 0.5 * quad
        eta = Zx0 + ZN @ z
        prec = model.observation_precisions(theta)[cols]
        pr = np.where(gauss, prec, 0.0)
        ll = np.where(
            gauss,
            0.5 * np.log(np.where(gauss, prec, 1.0)) - 0.5 * np.log(2 * np.pi) - 0.5 * pr * (y - eta) ** 2,
            pois_const + y * eta - ex * np.exp(np.where(gauss, 0.0, eta)),
        )
        lp += ll.sum()
        if m:
            lp += model.log_hyper_prior(theta)
        return lp if np.isfinite(lp) else -np.inf

    theta = model.theta0 if init_theta is None else np.array(init_theta, dtype=float)
    z = np.zeros(k) if init_latent is None else N.T @ (np.asarray(init_latent) - x0)
    state = np.concatenate([z, theta])
    cur = log_target(state[:k], state[k:])
    if not np.isfinite(cur):
        raise ValueError("initial state has zero posterior density")

    dim = k + m
    scale = np.full(dim, 0.1)
    log_global = 0.0
    n_adapt = int(adapt_fraction * iterations)
    n_burn = max(int(burn_fraction * iterations), n_adapt)
    kept = []
    accepted = 0
    run_mean = np.zeros(dim)
    run_m2 = np.zeros(dim)
    count = 0
    window_acc = 0
    window = 100
    for it in range(iterations):
        step = np.exp(log_global) * scale * rng.standard_normal(dim)
        prop = state + step
        new = log_target(prop[:k], prop[k:])
        if np.log(rng.uniform()) < new - cur:
            state, cur = prop, new
            if it >= n_burn:
                accepted += 1
            window_acc += 1
        if it < n_adapt:
            count += 1
            delta = state - run_mean
            run_mean += delta / count
            run_m2 += delta * (state - run_mean)
            if (it + 1) % window == 0:
                rate = window_acc / window
                log_global += (rate - 0.234) * min(1.0, 10.0 / np.sqrt((it + 1) / window))
                if count > 10 * window:
                    sd = np.sqrt(run_m2 / (count - 1))
                    scale = np.maximum(2.38 / np.sqrt(dim) * sd, 1e-8)
                    log_global = np.clip(log_global, -3.0, 3.0)
                window_acc = 0
        elif it == n_adapt:
            window_acc = 0
        if it >= n_burn and (it - n_burn) % thin == 0:
            kept.append(state.copy())
    draws = np.array(kept)
    latent = x0[None, :] + draws[:, :k] @ N.T
    thetas = draws[:, k:]
    joint = np.hstack([latent, thetas])
    ess = effective_sample_size(joint)
    sd = joint.std(axis=0, ddof=1)
    mcse = sd / np.sqrt(ess)
    rate = accepted / max(1, iterations - n_burn)
    warn = not 0.1 <= rate <= 0.6
    if warn:
        logger.warning("random-walk Metropolis acceptance rate %.3f outside [0.1, 0.6]", rate)
    return MHResult(
        latent=latent,
        theta=thetas,
        latent_mean=latent.mean(axis=0),
        latent_mcse=mcse[:d],
        theta_mean=thetas.mean(axis=0),
        theta_mcse=mcse[d:],
        ess=ess,
        acceptance_rate=rate,
        proposal_scale=np.exp(log_global) * scale,
        warning=warn,
    )


def _dense_prior_terms(model: LatentModel):
    """Write the prior precision as ``sum_i c_i(theta) M_i`` with constant dense ``M_i``.

    Built from the effect declarations alone: Besag ``tau (D - W + jitter I)``, iid
    ``tau I``, diffuse fixed effects, and SPDE
    ``tau^2 kappa^4 C + 2 tau^2 kappa^2 G + tau^2 G C^-1 G``.
    """
    d = model.n_latent
    idx = {}
    for i, h in enumerate(model.hypers):
        idx.setdefault(h.owner, []).append(i)
    terms = []

    def place(off, block):
        M = np.zeros((d, d))
        n = block.shape[0]
        M[off:off + n, off:off + n] = block
        return M

    def const(v):
        return lambda theta: v

    for e in model.effects:
        if e.kind == "copy":
            continue
        off, dim = model.offsets[e.name]
        if e.kind in ("intercept", "covariate"):
            terms.append((const(model.diffuse_precision), place(off, np.eye(dim))))
        elif e.kind in ("besag", "iid"):
            if e.kind == "besag":
                W = np.zeros((dim, dim))
                for i, nb in enumerate(e.graph.neighbors):
                    W[i, list(nb)] = 1.0
                R = np.diag(W.sum(axis=1)) - W + model.jitter * np.eye(dim)
            else:
                R = np.eye(dim)
            if e.name in idx:
                j = idx[e.name][0]
                terms.append((lambda theta, j=j: np.exp(theta[j]), place(off, R)))
            else:
                terms.append((const(float(e.fixed)), place(off, R)))
        elif e.kind == "spde":
            C = e.fem.C.toarray()
            G = e.fem.G.toarray()
            K = G @ np.diag(1.0 / np.diag(C)) @ G

            def kt(theta, e=e):
                if e.name in idx:
                    r, s = np.exp(theta[idx[e.name][0]]), np.exp(theta[idx[e.name][1]])
                else:
                    r, s = e.fixed
                kappa = np.sqrt(8.0) / r
                tau2 = 1.0 / (4.0 * np.pi * kappa**2 * s**2)
                return kappa, tau2

            terms.append((lambda t, kt=kt: kt(t)[1] * kt(t)[0] ** 4, place(off, C)))
            terms.append((lambda t, kt=kt: 2.0 * kt(t)[1] * kt(t)[0] ** 2, place(off, G)))
            terms.append((lambda t, kt=kt: kt(t)[1], place(off, K)))
    return terms


def log_sum_exp(values) -> float:
    return float(logsumexp(values))
