"""Finite-element SPDE representation of Matérn fields (smoothness 1 in the plane).

A Matérn field with range ``r`` and marginal standard deviation ``sigma`` is
represented by piecewise-linear weights on mesh vertices with sparse precision

    Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G),

where ``C`` is the lumped mass matrix and ``G`` the stiffness matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma, kv

from ._validation import check_positive, check_probability
from .exceptions import InvalidGeometryError
from .geometry import Mesh

NU = 1.0
DIM = 2


@dataclass(frozen=True)
class FemMatrices:
    C: sp.csc_matrix
    C_full: sp.csc_matrix
    G: sp.csc_matrix

    @property
    def n(self) -> int:
        return self.C.shape[0]


def fem_matrices(mesh: Mesh) -> FemMatrices:
    """Assemble consistent mass, lumped mass and stiffness matrices for P1 elements."""
    v, t = mesh.vertices, mesh.triangles
    area = mesh.triangle_areas()
    if np.any(area <= 0.0):
        raise InvalidGeometryError("mesh has a non-positive-area triangle")
    p = v[t]
    # edge opposite vertex i, rotated: grad(phi_i) = rot(e_i) / (2A)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    Gloc = np.einsum("mik,mjk->mij", e, e) / (4.0 * area)[:, None, None]
    Mloc = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    G = sp.csc_matrix((Gloc.ravel(), (rows, cols)), shape=(n, n))
    C_full = sp.csc_matrix((Mloc.ravel(), (rows, cols)), shape=(n, n))
    C = sp.diags(np.asarray(C_full.sum(axis=1)).ravel()).tocsc()
    return FemMatrices(C=C, C_full=C_full, G=G)


@dataclass(frozen=True)
class MaternParams:
    """Matérn parameters on both the (range, sigma) and (kappa, tau) scales."""

    range: float
    sigma: float
    kappa: float
    tau: float
    nu: float = NU


def range_sigma_to_kappa_tau(r: float, sigma: float) -> MaternParams:
    r = check_positive(r, "range")
    sigma = check_positive(sigma, "sigma")
    kappa = np.sqrt(8.0 * NU) / r
    tau2 = gamma(NU) / (gamma(NU + 1.0) * 4.0 * np.pi * kappa ** (2 * NU) * sigma**2)
    return MaternParams(range=r, sigma=sigma, kappa=float(kappa), tau=float(np.sqrt(tau2)))


def kappa_tau_to_range_sigma(kappa: float, tau: float) -> MaternParams:
    kappa = check_positive(kappa, "kappa")
    tau = check_positive(tau, "tau")
    r = np.sqrt(8.0 * NU) / kappa
    sigma2 = gamma(NU) / (gamma(NU + 1.0) * 4.0 * np.pi * kappa ** (2 * NU) * tau**2)
    return MaternParams(range=float(r), sigma=float(np.sqrt(sigma2)), kappa=kappa, tau=tau)


def matern_precision(fem: FemMatrices, p: MaternParams) -> sp.csc_matrix:
    k2 = p.kappa**2
    cinv = sp.diags(1.0 / fem.C.diagonal())
    G = fem.G
    Q = (k2 * k2) * fem.C + (2.0 * k2) * G + G @ cinv @ G
    return ((p.tau**2) * Q).tocsc()


def matern_covariance(d, p: MaternParams):
    """Matérn covariance ``sigma^2 / (Gamma(nu) 2^(nu-1)) (kappa d)^nu K_nu(kappa d)``."""
    d = np.asarray(d, dtype=float)
    x = p.kappa * d
    with np.errstate(invalid="ignore"):
        c = (p.sigma**2 / (gamma(p.nu) * 2.0 ** (p.nu - 1.0))) * x**p.nu * kv(p.nu, x)
    c = np.where(d == 0.0, p.sigma**2, c)
    return c if c.ndim else float(c)


@dataclass(frozen=True)
class PcPriorSpec:
    """PC prior statements P(range < r0) = p_r and P(sigma > sigma0) = p_sigma."""

    r0: float
    p_r: float
    sigma0: float
    p_sigma: float

    def __post_init__(self):
        check_positive(self.r0, "r0")
        check_positive(self.sigma0, "sigma0")
        check_probability(self.p_r, "p_r")
        check_probability(self.p_sigma, "p_sigma")

    @property
    def lambda_range(self) -> float:
        return -np.log(self.p_r) * self.r0 ** (DIM / 2.0)

    @property
    def lambda_sigma(self) -> float:
        return -np.log(self.p_sigma) / self.sigma0


def pc_range_log_density(r, spec: PcPriorSpec):
    r = np.asarray(r, dtype=float)
    lam = spec.lambda_range
    h = DIM / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(h * lam) - (h + 1.0) * np.log(r) - lam * r ** (-h)
    return np.where(r > 0, out, -np.inf)


def pc_sigma_log_density(sigma, spec: PcPriorSpec):
    s = np.asarray(sigma, dtype=float)
    lam = spec.lambda_sigma
    return np.where(s >= 0, np.log(lam) - lam * s, -np.inf)


def pc_prior_log_density(p: MaternParams, spec: PcPriorSpec) -> float:
    """Joint PC log-density of (range, sigma) on their natural scales."""
    return float(pc_range_log_density(p.range, spec) + pc_sigma_log_density(p.sigma, spec))


def pc_prior_log_density_theta(theta, spec: PcPriorSpec) -> float:
    """PC log-density for ``theta = (log range, log sigma)``, including the log-Jacobian."""
    lr, ls = float(theta[0]), float(theta[1])
    r, s = np.exp(lr), np.exp(ls)
    return float(pc_range_log_density(r, spec) + lr + pc_sigma_log_density(s, spec) + ls)
