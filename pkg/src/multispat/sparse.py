"""Sparse symmetric positive-definite factorizations.

The factorization is SuperLU run in symmetric mode (symmetric fill-reducing
ordering, no numerical pivoting), which for an SPD matrix is an LDL^T
factorization in disguise: ``A[q][:, q] = L @ diag(d) @ L.T`` with ``L`` unit
lower triangular. Positive pivots ``d`` certify positive definiteness.
"""

from __future__ import annotations

import numpy as np
import numba
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a factorization meets a non-positive pivot."""


def as_symmetric(A) -> sp.csc_matrix:
    """Return ``A`` as a CSC matrix, symmetrised to remove round-off asymmetry."""
    A = sp.csc_matrix(A, dtype=float)
    return ((A + A.T) * 0.5).tocsc()


class SparseCholesky:
    """Sparse LDL^T factor of a symmetric positive-definite matrix.

    Parameters
    ----------
    A : sparse or dense (n, n) array
        Symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If any pivot is non-positive or the factorization breaks down.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        self.n = A.shape[0]
        if A.shape != (self.n, self.n):
            raise ValueError("matrix must be square")
        if self.n == 0:
            self._lu = None
            self.pivots = np.empty(0)
            self.perm = np.empty(0, dtype=int)
            return
        try:
            lu = splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefiniteError(str(exc)) from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefiniteError("factorization required pivoting")
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise NotPositiveDefiniteError(
                f"non-positive pivot (min pivot {np.min(d):.3g})"
            )
        self._lu = lu
        self._A = A
        self.pivots = d
        # A[perm][:, perm] = L D L^T
        self.perm = np.argsort(lu.perm_c)

    @property
    def L(self) -> sp.csc_matrix:
        """Unit lower-triangular factor of the permuted matrix."""
        return self._lu.L.tocsc()

    def logdet(self) -> float:
        return float(np.sum(np.log(self.pivots)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        return self._lu.solve(b)

    def solve_blocks(self, B, block: int = 512):
        """Solve ``A X = B`` for a sparse or dense right-hand side in column blocks."""
        B = sp.csc_matrix(B)
        out = np.empty((self.n, B.shape[1]))
        for start in range(0, B.shape[1], block):
            stop = min(start + block, B.shape[1])
            out[:, start:stop] = self.solve(B[:, start:stop].toarray())
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw from N(0, A^{-1}); one column per draw when ``size`` is given."""
        k = 1 if size is None else size
        z = rng.standard_normal((self.n, k))
        y = spsolve_triangular(
            self.L.T.tocsr(), z / np.sqrt(self.pivots)[:, None], lower=False,
            unit_diagonal=True,
        )
        x = np.empty_like(y)
        x[self.perm] = y
        return x[:, 0] if size is None else x

    def inverse_diagonal(self, block: int = 512) -> np.ndarray:
        """diag(A^{-1}) from back-solves against identity columns."""
        diag = np.empty(self.n)
        for start in range(0, self.n, block):
            stop = min(start + block, self.n)
            E = np.zeros((self.n, stop - start))
            E[np.arange(start, stop), np.arange(stop - start)] = 1.0
            diag[start:stop] = self.solve(E)[np.arange(start, stop), np.arange(stop - start)]
        return diag

    def selected_inverse(self) -> sp.csc_matrix:
        """Entries of A^{-1} on the symbolic pattern of the factor (Takahashi recursions).

        Returns the full symmetric selected inverse in the original ordering.
        """
        if self.n == 0:
            return sp.csc_matrix((0, 0))
        B = self._permuted_pattern()
        indptr, indices = symbolic_cholesky(B)
        Lnum = self.L
        vals = _gather_values(
            indptr, indices, Lnum.indptr, Lnum.indices, Lnum.data
        )
        sig = _takahashi(indptr, indices, vals, self.pivots)
        S = sp.csc_matrix((sig, indices, indptr), shape=(self.n, self.n))
        S = S + sp.tril(S, k=-1).T
        inv = np.empty(self.n, dtype=int)
        inv[self.perm] = np.arange(self.n)
        return S.tocsr()[inv][:, inv].tocsc()

    def _permuted_pattern(self):
        B = self._A.tocsr()[self.perm][:, self.perm]
        B = abs(B) + abs(B.T)
        return sp.csc_matrix(B)


def symbolic_cholesky(A: sp.csc_matrix):
    """Column structure of the Cholesky factor of a symmetric pattern.

    Returns CSC ``(indptr, indices)`` of the lower factor including the diagonal,
    with rows sorted within each column.
    """
    A = sp.csc_matrix(A)
    A.sort_indices()
    n = A.shape[0]
    parent = _etree(A.indptr, A.indices, n)
    children: list[list[int]] = [[] for _ in range(n)]
    for j in range(n):
        if parent[j] >= 0:
            children[parent[j]].append(j)
    structs: list[np.ndarray] = [None] * n
    for j in range(n):
        rows = A.indices[A.indptr[j]:A.indptr[j + 1]]
        parts = [rows[rows >= j], np.array([j])]
        for c in children[j]:
            s = structs[c]
            parts.append(s[s > j])
        structs[j] = np.unique(np.concatenate(parts))
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(s) for s in structs])
    indices = np.concatenate(structs).astype(np.int64)
    return indptr, indices


@numba.njit(cache=True)
def _etree(indptr, indices, n):
    parent = -np.ones(n, dtype=np.int64)
    ancestor = -np.ones(n, dtype=np.int64)
    for k in range(n):
        for p in range(indptr[k], indptr[k + 1]):
            i = indices[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@numba.njit(cache=True)
def _find(indices, lo, hi, row):
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < row:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True)
def _gather_values(indptr, indices, lptr, lind, ldata):
    vals = np.zeros(indices.shape[0])
    n = indptr.shape[0] - 1
    for j in range(n):
        for p in range(lptr[j], lptr[j + 1]):
            i = lind[p]
            if i <= j:
                continue
            q = _find(indices, indptr[j], indptr[j + 1], i)
            vals[q] = ldata[p]
    return vals


@numba.njit(cache=True)
def _takahashi(indptr, indices, L, d):
    n = indptr.shape[0] - 1
    sig = np.zeros(indices.shape[0])
    for i in range(n - 1, -1, -1):
        start = indptr[i]
        stop = indptr[i + 1]
        # rows in column i are sorted; the first is the diagonal
        for pj in range(stop - 1, start - 1, -1):
            j = indices[pj]
            acc = 1.0 / d[i] if j == i else 0.0
            for pk in range(start + 1, stop):
                k = indices[pk]
                lo = min(k, j)
                hi = max(k, j)
                q = _find(indices, indptr[lo], indptr[lo + 1], hi)
                acc -= L[pk] * sig[q]
            sig[pj] = acc
    return sig


def to_triplets(A) -> str:
    """Serialise a sparse matrix as ``row col value`` lines (0-based)."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    return "".join(
        f"{r} {c} {float(v)!r}\n" for r, c, v in zip(A.row[order], A.col[order], A.data[order])
    )


def from_triplets(text: str, shape) -> sp.csc_matrix:
    rows, cols, vals = [], [], []
    for line in text.splitlines():
        if line.strip():
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.csc_matrix((vals, (rows, cols)), shape=shape)
