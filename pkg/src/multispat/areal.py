"""Adjacency graphs and intrinsic CAR (Besag) / iid precision matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._validation import check_positive
from .exceptions import ParseError


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected graph of areas sharing a border; 0-based sorted neighbour lists."""

    n: int
    neighbors: tuple

    def __post_init__(self):
        nbrs = tuple(tuple(sorted(int(j) for j in nb)) for nb in self.neighbors)
        if len(nbrs) != self.n:
            raise ValueError(f"expected {self.n} neighbour lists, got {len(nbrs)}")
        for i, nb in enumerate(nbrs):
            for j in nb:
                if not 0 <= j < self.n:
                    raise ValueError(f"area {i}: neighbour {j} out of range")
                if j == i:
                    raise ValueError(f"area {i}: self-loop")
                if i not in nbrs[j]:
                    raise ValueError(f"asymmetric adjacency between areas {i} and {j}")
            if len(set(nb)) != len(nb):
                raise ValueError(f"area {i}: repeated neighbour")
        object.__setattr__(self, "neighbors", nbrs)

    def adjacency(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.n), [len(nb) for nb in self.neighbors])
        cols = np.fromiter((j for nb in self.neighbors for j in nb), dtype=np.int64)
        return sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(self.n, self.n))

    def components(self) -> np.ndarray:
        """Connected-component label per area."""
        return connected_components(self.adjacency(), directed=False)[1]

    @classmethod
    def from_edges(cls, n, edges):
        nbrs = [set() for _ in range(n)]
        for i, j in edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return cls(n, tuple(nbrs))

    @classmethod
    def lattice(cls, nx, ny):
        """Rook adjacency on an ``nx`` by ``ny`` grid of cells, row-major."""
        edges = []
        for y in range(ny):
            for x in range(nx):
                i = y * nx + x
                if x + 1 < nx:
                    edges.append((i, i + 1))
                if y + 1 < ny:
                    edges.append((i, i + nx))
        return cls.from_edges(nx * ny, edges)

    def to_text(self) -> str:
        lines = [str(self.n)]
        for i, nb in enumerate(self.neighbors):
            lines.append(" ".join(str(v) for v in (i + 1, len(nb), *(j + 1 for j in nb))))
        return "\n".join(lines) + "\n"


def read_graph(text: str, path=None) -> AdjacencyGraph:
    """Parse the adjacency format: ``n`` then ``index #neighbours nbr...`` (1-based)."""
    lines = [(k + 1, ln.split()) for k, ln in enumerate(text.splitlines())]
    lines = [(k, tok) for k, tok in lines if tok]
    if not lines:
        raise ParseError("empty graph file", path=path)
    k0, tok0 = lines[0]
    try:
        n = int(tok0[0])
    except ValueError:
        raise ParseError(f"expected area count, got {tok0[0]!r}", k0, path) from None
    if len(tok0) != 1 or n < 1:
        raise ParseError("first line must hold a single positive area count", k0, path)
    nbrs: list = [None] * n
    where = {}
    for k, tok in lines[1:]:
        try:
            vals = [int(v) for v in tok]
        except ValueError:
            raise ParseError("non-integer entry", k, path) from None
        if len(vals) < 2 or len(vals) != 2 + vals[1]:
            raise ParseError("neighbour count does not match the listed neighbours", k, path)
        i = vals[0] - 1
        if not 0 <= i < n:
            raise ParseError(f"area index {vals[0]} out of range 1..{n}", k, path)
        if nbrs[i] is not None:
            raise ParseError(f"area {vals[0]} listed twice", k, path)
        for j in vals[2:]:
            if not 1 <= j <= n:
                raise ParseError(f"neighbour index {j} out of range 1..{n}", k, path)
            if j - 1 == i:
                raise ParseError(f"self-loop on area {vals[0]}", k, path)
        nbrs[i] = vals[2:]
        where[i] = k
    missing = [i + 1 for i in range(n) if nbrs[i] is None]
    if missing:
        raise ParseError(f"areas without an entry: {missing[:5]}", path=path)
    for i in range(n):
        for j in nbrs[i]:
            if i + 1 not in nbrs[j - 1]:
                raise ParseError(
                    f"asymmetric adjacency: {i + 1} lists {j} but {j} does not list {i + 1}",
                    where[i],
                    path,
                )
    return AdjacencyGraph(n, tuple(tuple(j - 1 for j in nb) for nb in nbrs))


def besag_structure(g: AdjacencyGraph) -> sp.csc_matrix:
    """Structure matrix D - W of the intrinsic CAR model."""
    W = g.adjacency()
    D = sp.diags(np.asarray(W.sum(axis=1)).ravel())
    return (D - W).tocsc()


def besag_precision(g: AdjacencyGraph, tau: float) -> sp.csc_matrix:
    tau = check_positive(tau, "tau")
    return (tau * besag_structure(g)).tocsc()


def iid_precision(n: int, tau: float) -> sp.csc_matrix:
    tau = check_positive(tau, "tau")
    return (tau * sp.identity(n, format="csc"))


def flat_sd_log_prior(log_tau: float) -> float:
    """Log-density of ``log tau`` when ``sigma = tau^(-1/2)`` has an improper flat prior.

    ``p(tau) = tau^(-3/2) / 2``, so on the log scale ``p(log tau) = tau^(-1/2) / 2``.
    """
    return -0.5 * float(log_tau) - np.log(2.0)
