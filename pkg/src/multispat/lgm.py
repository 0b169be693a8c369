"""Latent Gaussian model assembly.

Effects are declared much like terms of a model formula (intercepts, covariates,
SPDE fields, Besag and iid random effects, copies of other effects) and are wired
to a :class:`~multispat.stack.StackedData` by block name. Assembly produces the
observation matrix ``Z`` (rows = stack rows, columns = latent values), the joint
prior precision ``Q(theta)``, sum-to-zero constraints and the list of
hyperparameters with their log-priors on the internal ``theta`` scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import areal, spde
from .exceptions import AssemblyError
from .geometry import Mesh
from .stack import StackedData

FIXED_KINDS = ("intercept", "covariate")
KINDS = FIXED_KINDS + ("spde", "besag", "iid", "copy")


@dataclass(frozen=True, eq=False)
class EffectSpec:
    """Declaration of one latent effect.

    ``fixed`` holds natural-scale hyperparameter values that are not estimated:
    ``(range, sigma)`` for ``spde`` and the precision for ``besag``/``iid``.
    """

    name: str
    kind: str
    latent_dim: int = 1
    mesh: Mesh | None = None
    fem: spde.FemMatrices | None = None
    pc_prior: spde.PcPriorSpec | None = None
    graph: areal.AdjacencyGraph | None = None
    target: str | None = None
    fixed: object = None
    initial: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AssemblyError(f"effect {self.name!r}: unknown kind {self.kind!r}")


def intercept(name, levels=1) -> EffectSpec:
    return EffectSpec(name, "intercept", latent_dim=int(levels))


def covariate(name) -> EffectSpec:
    return EffectSpec(name, "covariate", latent_dim=1)


def spde_effect(name, mesh: Mesh, prior: spde.PcPriorSpec, fixed=None, initial=None,
                fem=None) -> EffectSpec:
    """Matérn field on ``mesh`` with PC prior; ``fixed=(range, sigma)`` pins it."""
    fem = spde.fem_matrices(mesh) if fem is None else fem
    if initial is None:
        initial = (0.5 * prior.r0, 0.5 * prior.sigma0)
    return EffectSpec(name, "spde", latent_dim=mesh.n_vertices, mesh=mesh, fem=fem,
                      pc_prior=prior, fixed=fixed, initial=initial)


def besag(name, graph: areal.AdjacencyGraph, precision=None, initial=1.0) -> EffectSpec:
    return EffectSpec(name, "besag", latent_dim=graph.n, graph=graph,
                      fixed=precision, initial=initial)


def iid(name, n, precision=None, initial=1.0) -> EffectSpec:
    return EffectSpec(name, "iid", latent_dim=int(n), fixed=precision, initial=initial)


def copy(name, target) -> EffectSpec:
    return EffectSpec(name, "copy", latent_dim=0, target=target)


@dataclass(frozen=True)
class Poisson:
    name: str = "poisson"


@dataclass(frozen=True)
class Gaussian:
    """Gaussian likelihood; ``precision=None`` estimates it.

    The prior on the observation sd is exponential with ``P(sd > u) = alpha`` for
    ``sd_prior=(u, alpha)``.
    """

    precision: float | None = None
    sd_prior: tuple = (1.0, 0.01)
    initial: float = 1.0
    name: str = "gaussian"


def as_family(f):
    if isinstance(f, (Poisson, Gaussian)):
        return f
    if f == "poisson":
        return Poisson()
    if f == "gaussian":
        return Gaussian()
    raise AssemblyError(f"unknown likelihood family {f!r}")


@dataclass(frozen=True)
class Hyper:
    """One hyperparameter on the internal (log) scale."""

    name: str
    owner: str
    log_prior: Callable
    to_natural: Callable
    initial: float


@dataclass(frozen=True, eq=False)
class LatentModel:
    stack: StackedData
    effects: tuple
    families: tuple
    offsets: dict
    Z: sp.csr_matrix
    constraints: np.ndarray
    constraint_values: np.ndarray
    hypers: tuple
    diffuse_precision: float = 1e-6
    jitter: float = 1e-5
    _hyper_index: dict = field(default_factory=dict)

    @property
    def n_latent(self) -> int:
        return self.Z.shape[1]

    @property
    def n_hyper(self) -> int:
        return len(self.hypers)

    @property
    def hyper_names(self) -> list:
        return [h.name for h in self.hypers]

    @property
    def theta0(self) -> np.ndarray:
        return np.array([h.initial for h in self.hypers], dtype=float)

    def effect(self, name) -> EffectSpec:
        for e in self.effects:
            if e.name == name:
                return e
        raise KeyError(name)

    def latent_slice(self, name) -> slice:
        e = self.effect(name)
        key = e.target if e.kind == "copy" else name
        start, dim = self.offsets[key]
        return slice(start, start + dim)

    def _theta(self, theta, owner, k=1):
        idx = self._hyper_index.get(owner)
        if idx is None:
            return None
        return [float(theta[i]) for i in idx[:k]] if k > 1 else float(theta[idx[0]])

    def prior_precision(self, theta) -> sp.csc_matrix:
        return prior_precision(self, theta)

    def log_hyper_prior(self, theta) -> float:
        return log_hyper_prior(self, theta)

    def observation_precisions(self, theta) -> np.ndarray:
        """Gaussian observation precision per response column (NaN for Poisson)."""
        out = np.full(len(self.families), np.nan)
        for k, fam in enumerate(self.families):
            if isinstance(fam, Gaussian):
                t = self._theta(theta, f"family{k}")
                out[k] = fam.precision if t is None else np.exp(t)
        return out

    def spde_params(self, name, theta) -> spde.MaternParams:
        e = self.effect(name)
        t = self._theta(theta, name, 2)
        if t is None:
            return spde.range_sigma_to_kappa_tau(*e.fixed)
        return spde.range_sigma_to_kappa_tau(np.exp(t[0]), np.exp(t[1]))

    def precision_of(self, name, theta) -> float:
        e = self.effect(name)
        t = self._theta(theta, name)
        return float(e.fixed) if t is None else float(np.exp(t))


def _flat_sd_prior(t):
    return areal.flat_sd_log_prior(t)


def _exp_sd_prior(u, alpha):
    lam = -np.log(alpha) / u

    def log_prior(t):
        # sd = exp(-t/2) with sd ~ Exp(lam); |d sd / d t| = sd / 2
        sd = np.exp(-0.5 * t)
        return float(np.log(lam) - lam * sd + np.log(0.5 * sd))

    return log_prior


def _pc_parts(spec: spde.PcPriorSpec):
    def log_range(t):
        return float(spde.pc_range_log_density(np.exp(t), spec) + t)

    def log_sigma(t):
        return float(spde.pc_sigma_log_density(np.exp(t), spec) + t)

    return log_range, log_sigma


def assemble(stack: StackedData, effects, families, diffuse_precision=1e-6,
             jitter=1e-5) -> LatentModel:
    """Build a :class:`LatentModel` from a stack and effect declarations."""
    effects = tuple(effects)
    families = tuple(as_family(f) for f in families)
    names = [e.name for e in effects]
    if len(set(names)) != len(names):
        raise AssemblyError("effect names must be unique")
    by_name = {e.name: e for e in effects}
    if len(families) != stack.n_columns:
        raise AssemblyError(
            f"{len(families)} families given for {stack.n_columns} response columns"
        )
    for e in effects:
        if e.kind == "copy":
            tgt = by_name.get(e.target)
            if tgt is None:
                raise AssemblyError(f"copy effect {e.name!r} targets unknown effect {e.target!r}")
            if tgt.kind == "copy":
                raise AssemblyError(f"copy effect {e.name!r} targets another copy {e.target!r}")
    for name in stack.blocks:
        if name not in by_name:
            raise AssemblyError(f"stack block {name!r} has no matching effect")

    offsets, start = {}, 0
    for e in effects:
        if e.kind != "copy":
            offsets[e.name] = (start, e.latent_dim)
            start += e.latent_dim
    n_latent = start

    _check_families(stack, families)

    R = stack.n_rows
    Z = sp.csr_matrix((R, n_latent))
    for name, B in stack.blocks.items():
        e = by_name[name]
        key = e.target if e.kind == "copy" else name
        off, dim = offsets[key]
        if B.shape[1] != dim:
            raise AssemblyError(
                f"block {name!r} has {B.shape[1]} columns but effect {key!r} has dimension {dim}"
            )
        B = sp.csr_matrix(B)
        Bc = B.tocoo()
        Z = Z + sp.csr_matrix((Bc.data, (Bc.row, Bc.col + off)), shape=(R, n_latent))
    Z = sp.csr_matrix(Z)
    Z.sum_duplicates()

    constraints = _constraints(stack, effects, offsets, by_name, n_latent)
    if constraints.shape[0] and np.linalg.matrix_rank(constraints) < constraints.shape[0]:
        raise AssemblyError("sum-to-zero constraints are rank deficient")

    hypers, index = [], {}
    for e in effects:
        if e.kind == "spde" and e.fixed is None:
            lr, ls = _pc_parts(e.pc_prior)
            index[e.name] = [len(hypers), len(hypers) + 1]
            hypers.append(Hyper(f"{e.name}.range", e.name, lr, np.exp, float(np.log(e.initial[0]))))
            hypers.append(Hyper(f"{e.name}.sigma", e.name, ls, np.exp, float(np.log(e.initial[1]))))
        elif e.kind in ("besag", "iid") and e.fixed is None:
            index[e.name] = [len(hypers)]
            hypers.append(Hyper(f"{e.name}.precision", e.name, _flat_sd_prior, np.exp,
                                float(np.log(e.initial))))
    for k, fam in enumerate(families):
        if isinstance(fam, Gaussian) and fam.precision is None:
            index[f"family{k}"] = [len(hypers)]
            hypers.append(Hyper(f"obs{k}.precision", f"family{k}", _exp_sd_prior(*fam.sd_prior),
                                np.exp, float(np.log(fam.initial))))

    return LatentModel(
        stack=stack,
        effects=effects,
        families=families,
        offsets=offsets,
        Z=Z,
        constraints=constraints,
        constraint_values=np.zeros(constraints.shape[0]),
        hypers=tuple(hypers),
        diffuse_precision=diffuse_precision,
        jitter=jitter,
        _hyper_index=index,
    )


def _check_families(stack, families):
    obs = stack.observed
    for k, fam in enumerate(families):
        rows = obs[:, k]
        if not rows.any():
            continue
        y = stack.response.data[rows, k]
        if isinstance(fam, Poisson):
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise AssemblyError(f"column {k}: Poisson responses must be non-negative integers")
            if np.any(stack.exposure[rows] < 0):
                raise AssemblyError(f"column {k}: Poisson exposure must be non-negative")
            zero = stack.exposure[rows] == 0
            if np.any(y[zero] > 1):
                raise AssemblyError(f"column {k}: zero-exposure rows must hold 0 or 1")


def _constraints(stack, effects, offsets, by_name, n_latent) -> np.ndarray:
    rows = []
    for e in effects:
        if e.kind == "besag":
            off, _ = offsets[e.name]
            labels = e.graph.components()
            for c in np.unique(labels):
                a = np.zeros(n_latent)
                a[off + np.nonzero(labels == c)[0]] = 1.0
                rows.append(a)
    # rows of the stack reached by each effect (copies count for their target)
    reach = {}
    for name, B in stack.blocks.items():
        e = by_name[name]
        key = e.target if e.kind == "copy" else name
        hit = np.asarray(abs(B).sum(axis=1)).ravel() > 0
        reach[key] = reach.get(key, np.zeros(stack.n_rows, bool)) | hit
    intercept_rows = np.zeros(stack.n_rows, bool)
    for e in effects:
        if e.kind == "intercept" and e.name in reach:
            intercept_rows |= reach[e.name]
    for e in effects:
        if e.kind == "spde" and e.name in reach and np.any(reach[e.name] & intercept_rows):
            off, dim = offsets[e.name]
            a = np.zeros(n_latent)
            a[off:off + dim] = 1.0
            rows.append(a)
    return np.array(rows).reshape(-1, n_latent)


def prior_precision(model: LatentModel, theta) -> sp.csc_matrix:
    """Block-diagonal joint prior precision of the latent vector at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_hyper,):
        raise ValueError(f"theta must have length {model.n_hyper}")
    blocks = []
    for e in model.effects:
        if e.kind == "copy":
            continue
        if e.kind in FIXED_KINDS:
            blocks.append(model.diffuse_precision * sp.identity(e.latent_dim, format="csc"))
        elif e.kind == "spde":
            blocks.append(spde.matern_precision(e.fem, model.spde_params(e.name, theta)))
        elif e.kind == "besag":
            tau = model.precision_of(e.name, theta)
            blocks.append(areal.besag_precision(e.graph, tau)
                          + (model.jitter * tau) * sp.identity(e.latent_dim, format="csc"))
        elif e.kind == "iid":
            blocks.append(areal.iid_precision(e.latent_dim, model.precision_of(e.name, theta)))
    if not blocks:
        return sp.csc_matrix((0, 0))
    return sp.block_diag(blocks, format="csc")


def log_hyper_prior(model: LatentModel, theta) -> float:
    """Sum of hyperparameter log-priors on the theta scale (Jacobians included)."""
    theta = np.asarray(theta, dtype=float)
    return float(sum(h.log_prior(theta[i]) for i, h in enumerate(model.hypers)))
