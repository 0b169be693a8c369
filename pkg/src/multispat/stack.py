"""Multi-likelihood data stacks.

A stack pairs a ``(R, K)`` response with one column per likelihood (every row has
at most one observed entry, all others are missing), an exposure vector, and named
projector blocks whose horizontal concatenation maps latent effects onto the ``R``
linear predictors. Missing entries are masked entries of a ``numpy.ma`` array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DataError, StructuralError
from .geometry import Projector

MISSING = np.ma.masked


def _as_block(value, n_rows: int, name: str) -> sp.csr_matrix:
    if isinstance(value, Projector):
        value = value.matrix
    if sp.issparse(value):
        M = sp.csr_matrix(value, dtype=float)
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            arr = np.full(n_rows, float(arr))
        if arr.ndim == 1:
            arr = arr[:, None]
        M = sp.csr_matrix(arr)
    if M.shape[0] != n_rows:
        raise StructuralError(
            f"block {name!r} has {M.shape[0]} rows, expected {n_rows}"
        )
    return M


def _as_masked(values) -> np.ma.MaskedArray:
    if isinstance(values, np.ma.MaskedArray):
        out = np.ma.array(values, dtype=float, copy=True)
        out.mask = np.ma.getmaskarray(values).copy()
    else:
        raw = np.asarray(values, dtype=object)
        mask = np.vectorize(lambda v: v is None or v is MISSING, otypes=[bool])(raw) if raw.size else np.zeros(raw.shape, bool)
        data = np.where(mask, 0.0, raw).astype(float)
        out = np.ma.array(data, mask=mask)
    if np.any(np.isnan(out.data[~out.mask])):
        raise DataError("NaN is not a missing marker; use None or a masked array")
    return out


@dataclass(frozen=True, eq=False)
class StackedData:
    """Response, exposure and named projector blocks for ``R`` predictor rows."""

    response: np.ma.MaskedArray
    exposure: np.ndarray
    blocks: dict
    row_tags: tuple = ()

    def __post_init__(self):
        resp = self.response
        if resp.ndim != 2:
            raise StructuralError("response must be a (R, K) matrix")
        R = resp.shape[0]
        observed = ~np.ma.getmaskarray(resp)
        if np.any(observed.sum(axis=1) > 1):
            raise StructuralError("a response row has more than one observed entry")
        if self.exposure.shape != (R,):
            raise StructuralError("exposure length differs from response rows")
        for name, M in self.blocks.items():
            if M.shape[0] != R:
                raise StructuralError(f"block {name!r} has {M.shape[0]} rows, expected {R}")

    @property
    def n_rows(self) -> int:
        return self.response.shape[0]

    @property
    def n_columns(self) -> int:
        return self.response.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.response)

    @property
    def tags(self) -> list:
        seen = []
        for tag, _, _ in self.row_tags:
            if tag not in seen:
                seen.append(tag)
        return seen

    def index(self, tag) -> np.ndarray:
        """Row indices carrying ``tag``."""
        idx = [np.arange(a, b) for t, a, b in self.row_tags if t == tag]
        if not idx:
            raise KeyError(f"unknown stack tag {tag!r}")
        return np.concatenate(idx)

    def rows(self, tag) -> "StackedData":
        idx = self.index(tag)
        return StackedData(
            response=self.response[idx],
            exposure=self.exposure[idx],
            blocks={k: M[idx] for k, M in self.blocks.items()},
            row_tags=((tag, 0, len(idx)),),
        )


def stack_areal(obs, expected, effects=None, tags=None) -> StackedData:
    """Stack an ``(n, D)`` areal table into ``D * n`` rows, one column per variable.

    ``effects`` maps block names to ``"factor"`` (one latent level per variable)
    or to a sequence of 0-based variable indices whose rows are routed onto
    ``n`` area-indexed latent values.
    """
    obs = _as_masked(obs)
    if obs.ndim == 1:
        obs = obs[:, None]
    expected = np.asarray(expected, dtype=float)
    if expected.ndim == 1:
        expected = expected[:, None]
    n, D = obs.shape
    if expected.shape != (n, D):
        raise StructuralError(f"expected counts shape {expected.shape} != {(n, D)}")
    if np.any(~(expected > 0)):
        raise DataError("expected counts must be positive")
    R = n * D
    data = np.zeros((R, D))
    mask = np.ones((R, D), dtype=bool)
    for d in range(D):
        data[d * n:(d + 1) * n, d] = obs.data[:, d]
        mask[d * n:(d + 1) * n, d] = np.ma.getmaskarray(obs)[:, d]
    response = np.ma.array(data, mask=mask)
    exposure = expected.T.ravel()
    blocks = {}
    rows = np.arange(R)
    var = rows // n
    area = rows % n
    for name, spec in (effects or {}).items():
        if isinstance(spec, str):
            if spec != "factor":
                raise StructuralError(f"unknown areal effect layout {spec!r}")
            blocks[name] = sp.csr_matrix((np.ones(R), (rows, var)), shape=(R, D))
        else:
            cols = sorted({int(c) for c in spec})
            if any(not 0 <= c < D for c in cols):
                raise StructuralError(f"effect {name!r} names a variable outside 0..{D - 1}")
            sel = np.isin(var, cols)
            blocks[name] = sp.csr_matrix(
                (np.ones(sel.sum()), (rows[sel], area[sel])), shape=(R, n)
            )
    tags = tags if tags is not None else [f"col{d}" for d in range(D)]
    if len(tags) != D:
        raise StructuralError("one tag per variable is required")
    row_tags = tuple((tags[d], d * n, (d + 1) * n) for d in range(D))
    return StackedData(response, exposure, blocks, row_tags)


def stack_geostat(values, column: int, n_columns: int, effects: dict, tag: str = "data",
                  n_rows: int | None = None) -> StackedData:
    """Stack one variable's observations into column ``column`` of ``n_columns``.

    ``effects`` maps block names to a projector (mesh effects), or to a scalar or
    per-row vector (fixed effects such as intercepts and covariates). ``values``
    may be ``None`` for an all-missing prediction stack of ``n_rows`` rows.
    """
    if not 0 <= column < n_columns:
        raise StructuralError(f"column {column} outside 0..{n_columns - 1}")
    if values is None:
        if n_rows is None:
            n_rows = _infer_rows(effects)
        vals = np.ma.array(np.zeros(n_rows), mask=np.ones(n_rows, dtype=bool))
    else:
        vals = _as_masked(values).ravel()
    n = len(vals)
    data = np.zeros((n, n_columns))
    mask = np.ones((n, n_columns), dtype=bool)
    data[:, column] = vals.data
    mask[:, column] = np.ma.getmaskarray(vals)
    blocks = {name: _as_block(v, n, name) for name, v in effects.items()}
    return StackedData(np.ma.array(data, mask=mask), np.ones(n), blocks, ((tag, 0, n),))


def _infer_rows(effects) -> int:
    for v in effects.values():
        if isinstance(v, Projector) or sp.issparse(v):
            return v.shape[0]
        arr = np.asarray(v)
        if arr.ndim >= 1:
            return arr.shape[0]
    raise StructuralError("cannot infer the number of rows of a prediction stack")


def stack_point_pattern(mesh_weights, A_points: Projector, pattern: int, n_patterns: int,
                        mesh_effects=(), fixed_effects=(), tag: str = "pattern") -> StackedData:
    """Pseudo-data stack for one point pattern.

    Rows are the ``N_v`` mesh vertices (response 0, exposure = dual weight)
    followed by the ``N_i`` points (response 1, exposure 0). Mesh effects get the
    projector ``[I; A_points]``; fixed effects get a column of ones.
    """
    w = np.asarray(mesh_weights, dtype=float).ravel()
    if np.any(w < 0):
        raise DataError("mesh weights must be non-negative")
    A = A_points.matrix if isinstance(A_points, Projector) else sp.csr_matrix(A_points)
    if isinstance(A_points, Projector) and A_points.outside is not None and A_points.outside.any():
        raise DataError(f"{int(A_points.outside.sum())} points fall outside the mesh")
    nv, ni = len(w), A.shape[0]
    if A.shape[1] != nv:
        raise StructuralError(f"point projector has {A.shape[1]} columns, mesh has {nv} vertices")
    if not 0 <= pattern < n_patterns:
        raise StructuralError(f"pattern {pattern} outside 0..{n_patterns - 1}")
    R = nv + ni
    data = np.zeros((R, n_patterns))
    mask = np.ones((R, n_patterns), dtype=bool)
    data[nv:, pattern] = 1.0
    mask[:, pattern] = False
    exposure = np.concatenate([w, np.zeros(ni)])
    proj = sp.vstack([sp.identity(nv, format="csr"), A]).tocsr()
    blocks = {name: proj for name in mesh_effects}
    blocks.update({name: sp.csr_matrix(np.ones((R, 1))) for name in fixed_effects})
    return StackedData(np.ma.array(data, mask=mask), exposure, blocks, ((tag, 0, R),))


def join_stacks(stacks) -> StackedData:
    """Concatenate stacks by rows, aligning projector blocks by name."""
    stacks = list(stacks)
    if not stacks:
        raise StructuralError("nothing to join")
    K = stacks[0].n_columns
    dims: dict = {}
    for s in stacks:
        if s.n_columns != K:
            raise StructuralError("stacks have different numbers of response columns")
        for name, M in s.blocks.items():
            if dims.setdefault(name, M.shape[1]) != M.shape[1]:
                raise StructuralError(
                    f"block {name!r} has latent dimension {M.shape[1]} and {dims[name]}"
                )
    response = np.ma.concatenate([s.response for s in stacks], axis=0)
    exposure = np.concatenate([s.exposure for s in stacks])
    blocks = {}
    for name, dim in dims.items():
        parts = [
            s.blocks[name] if name in s.blocks else sp.csr_matrix((s.n_rows, dim))
            for s in stacks
        ]
        blocks[name] = sp.vstack(parts).tocsr()
    row_tags, offset = [], 0
    for s in stacks:
        row_tags.extend((t, a + offset, b + offset) for t, a, b in s.row_tags)
        offset += s.n_rows
    return StackedData(response, exposure, blocks, tuple(row_tags))
