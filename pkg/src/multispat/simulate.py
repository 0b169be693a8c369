"""Synthetic data generators for areal, geostatistical and point-pattern models.

Latent fields are drawn through sparse Cholesky factors of their precision
matrices; every generator takes a ``numpy.random.Generator`` or an integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import shapely

from . import spde
from ._validation import check_positive, check_random_state
from .areal import AdjacencyGraph, besag_structure
from .geometry import Mesh, Polygon, projector_matrix
from .sparse import SparseCholesky


def sample_besag(graph: AdjacencyGraph, sigma: float, rng, jitter=1e-8) -> np.ndarray:
    """Draw an intrinsic CAR field with marginal scale ``sigma``, centred per component."""
    rng = check_random_state(rng)
    sigma = check_positive(sigma, "sigma", allow_zero=True)
    if sigma == 0:
        return np.zeros(graph.n)
    R = besag_structure(graph)
    Q = R + jitter * sp.identity(graph.n, format="csc")
    x = SparseCholesky(Q).sample(rng) * sigma
    comp = graph.components()
    for c in np.unique(comp):
        x[comp == c] -= x[comp == c].mean()
    return x


def sample_matern(mesh: Mesh, range_: float, sigma: float, rng) -> np.ndarray:
    """Draw SPDE Matérn field values at the mesh vertices."""
    rng = check_random_state(rng)
    p = spde.range_sigma_to_kappa_tau(range_, sigma)
    Q = spde.matern_precision(spde.fem_matrices(mesh), p)
    return SparseCholesky(Q).sample(rng)


@dataclass
class ArealSample:
    graph: AdjacencyGraph
    counts: np.ndarray
    expected: np.ndarray
    shared: np.ndarray
    specific: np.ndarray


def simulate_areal(graph: AdjacencyGraph, expected, intercepts, sigma_shared,
                   sigma_specific, rng=None) -> ArealSample:
    """Poisson counts from a shared-component model.

    Variable 0 has ``alpha_0 + u``; variable ``d >= 1`` has ``alpha_d + u + v_d``.
    ``sigma_specific`` gives one scale per variable ``d >= 1``.
    """
    rng = check_random_state(rng)
    intercepts = np.atleast_1d(np.asarray(intercepts, dtype=float))
    D = len(intercepts)
    E = np.asarray(expected, dtype=float)
    if E.ndim == 1:
        E = np.repeat(E[:, None], D, axis=1)
    sig = np.broadcast_to(np.asarray(sigma_specific, dtype=float), (max(D - 1, 0),))
    u = sample_besag(graph, sigma_shared, rng)
    v = np.zeros((graph.n, D))
    for d in range(1, D):
        v[:, d] = sample_besag(graph, sig[d - 1], rng)
    eta = intercepts[None, :] + u[:, None] + v
    counts = rng.poisson(E * np.exp(eta)).astype(float)
    return ArealSample(graph, counts, E, u, v[:, 1:])


@dataclass
class GeostatSample:
    locations: np.ndarray
    values: np.ndarray
    shared: np.ndarray
    specific: np.ndarray


def simulate_geostat(mesh: Mesh, domain: Polygon, n_points, intercepts, range_, sigma,
                     noise_sd, specific_range=None, specific_sigma=None,
                     rng=None) -> GeostatSample:
    """Gaussian observations of ``K`` variables at uniform random locations.

    Variable 0 is ``alpha_0 + u``; variable ``k >= 1`` adds an independent
    specific field ``u_k`` with its own range and scale.
    """
    rng = check_random_state(rng)
    intercepts = np.atleast_1d(np.asarray(intercepts, dtype=float))
    K = len(intercepts)
    n_points = np.broadcast_to(np.asarray(n_points, dtype=int), (K,))
    noise = np.broadcast_to(np.asarray(noise_sd, dtype=float), (K,))
    u = sample_matern(mesh, range_, sigma, rng)
    spec = np.zeros((mesh.n_vertices, K))
    for k in range(1, K):
        spec[:, k] = sample_matern(mesh, specific_range or range_, specific_sigma or sigma, rng)
    locs, vals = [], []
    for k in range(K):
        xy = uniform_points(domain, int(n_points[k]), rng)
        A = projector_matrix(mesh, xy).matrix
        vals.append(intercepts[k] + A @ u + A @ spec[:, k] + noise[k] * rng.standard_normal(len(xy)))
        locs.append(xy)
    return GeostatSample(locs, vals, u, spec[:, 1:])


def uniform_points(domain: Polygon, n: int, rng) -> np.ndarray:
    """``n`` independent uniform locations in ``domain`` by rejection from its bounding box."""
    rng = check_random_state(rng)
    x0, y0, x1, y1 = domain.bounds
    out = np.empty((0, 2))
    while len(out) < n:
        m = max(16, 2 * (n - len(out)))
        cand = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        out = np.vstack([out, cand[shapely.contains_xy(domain.shape, cand[:, 0], cand[:, 1])]])
    return out[:n]


@dataclass
class PointPatternSample:
    points: list
    shared: np.ndarray
    specific: np.ndarray


def simulate_lgcp(mesh: Mesh, domain: Polygon, intercepts, range_=None, sigma=0.0,
                  specific_range=None, specific_sigma=0.0, rng=None) -> PointPatternSample:
    """Point patterns from log-Gaussian Cox processes by thinning.

    Pattern ``j`` has log-intensity ``alpha_j + u(s) (+ u_j(s) for j >= 1)``, with
    fields interpolated linearly from the mesh. With ``sigma = 0`` the first
    pattern is a homogeneous Poisson process of intensity ``exp(alpha_0)``.
    """
    rng = check_random_state(rng)
    intercepts = np.atleast_1d(np.asarray(intercepts, dtype=float))
    J = len(intercepts)
    nv = mesh.n_vertices
    u = sample_matern(mesh, range_, sigma, rng) if sigma > 0 else np.zeros(nv)
    spec = np.zeros((nv, J))
    for j in range(1, J):
        if specific_sigma > 0:
            spec[:, j] = sample_matern(mesh, specific_range or range_, specific_sigma, rng)
    x0, y0, x1, y1 = domain.bounds
    box = (x1 - x0) * (y1 - y0)
    patterns = []
    for j in range(J):
        field = intercepts[j] + u + spec[:, j]
        # the interpolated log-intensity never exceeds its largest vertex value
        lam_max = float(np.exp(field.max()))
        n = rng.poisson(lam_max * box)
        cand = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        cand = cand[shapely.contains_xy(domain.shape, cand[:, 0], cand[:, 1])]
        if len(cand):
            A = projector_matrix(mesh, cand).matrix
            lam = np.exp(A @ field)
            cand = cand[rng.uniform(size=len(cand)) * lam_max < lam]
        patterns.append(cand)
    return PointPatternSample(patterns, u, spec[:, 1:])
