"""Sparse Cholesky factorization split into ordering, symbolic and numeric steps.

The ordering and symbolic analysis depend only on the sparsity pattern, so a
:class:`SymbolicFactor` is computed once and reused for every numeric
refactorization of a matrix with the same pattern.  The numeric step is an
up-looking simplicial factorization compiled with numba.

Permutation convention: ``perm[k]`` is the original index placed at position
``k``, so the factor satisfies ``A[perm][:, perm] = L @ L.T``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

# relative to the largest diagonal entry of the matrix being factorized
PIVOT_RTOL = 1e-12


def _pattern(A) -> tuple[int, np.ndarray, np.ndarray]:
    """(n, indptr, indices) of a square matrix in CSC form with sorted indices."""
    if sp.issparse(A):
        A = sp.csc_matrix(A)
        A.sort_indices()
        indptr, indices = A.indptr, A.indices
    else:
        indptr, indices = A.indptr, A.indices
    n = len(indptr) - 1
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return n, np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def _values(A) -> np.ndarray:
    if sp.issparse(A):
        A = sp.csc_matrix(A)
        A.sort_indices()
    return np.asarray(A.data, dtype=np.float64)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w):
    n = len(parent)
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@numba.njit(cache=True)
def _symbolic(n, Cp, Ci, parent):
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Li = np.empty(Lp[n], dtype=np.int64)
    nxt = Lp[:n].copy()
    w[:] = -1
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        for t in range(top, n):
            j = s[t]
            Li[nxt[j]] = k
            nxt[j] += 1
        Li[nxt[k]] = k
        nxt[k] += 1
    return Lp, Li


@numba.njit(cache=True)
def _numeric(n, Cp, Ci, Cx, parent, Lp, tol):
    """Up-looking Cholesky. Returns (ok, Lx); ok is False at the first bad pivot."""
    Li = np.empty(Lp[n], dtype=np.int64)
    Lx = np.zeros(Lp[n], dtype=np.float64)
    c = Lp[:n].copy()
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    x = np.zeros(n, dtype=np.float64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > tol:
            return False, Lx
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return True, Lx


@numba.njit(cache=True)
def _lsolve(Lp, Li, Lx, x):
    n = len(Lp) - 1
    m = x.shape[1]
    for j in range(n):
        dj = Lx[Lp[j]]
        for c in range(m):
            x[j, c] /= dj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                x[i, c] -= v * x[j, c]


@numba.njit(cache=True)
def _ltsolve(Lp, Li, Lx, x):
    n = len(Lp) - 1
    m = x.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                x[j, c] -= v * x[i, c]
        dj = Lx[Lp[j]]
        for c in range(m):
            x[j, c] /= dj


# ---------------------------------------------------------------------------
# ordering
# ---------------------------------------------------------------------------


def _minimum_degree(n: int, indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    # Nodes with identical closed neighbourhoods (e.g. the p variables at one
    # location) are merged into weighted supervariables before elimination.
    adj = [set(indices[indptr[i]:indptr[i + 1]].tolist()) for i in range(n)]
    groups: dict[frozenset, list[int]] = {}
    for i in range(n):
        adj[i].add(i)
        groups.setdefault(frozenset(adj[i]), []).append(i)
    members = list(groups.values())
    owner = np.empty(n, dtype=np.int64)
    for s, mem in enumerate(members):
        owner[mem] = s
    ns = len(members)
    weight = [len(m) for m in members]
    sadj = []
    for s, mem in enumerate(members):
        nb = {int(owner[k]) for k in adj[mem[0]]}
        nb.discard(s)
        sadj.append(nb)
    degree = [sum(weight[t] for t in sadj[s]) for s in range(ns)]
    heap = [(degree[s], s) for s in range(ns)]
    heapq.heapify(heap)
    done = [False] * ns
    elim = []
    while heap:
        d, s = heapq.heappop(heap)
        if done[s] or d != degree[s]:
            continue
        done[s] = True
        elim.append(s)
        nb = sadj[s]
        for u in nb:
            au = sadj[u]
            au |= nb
            au.discard(u)
            au.discard(s)
            du = sum(weight[t] for t in au)
            if du != degree[u]:
                degree[u] = du
                heapq.heappush(heap, (du, u))
        sadj[s] = set()
    return np.concatenate([np.asarray(members[s], dtype=np.int64) for s in elim])


def _permuted_upper(n, indptr, indices, perm):
    """Upper triangle of A[perm][:, perm] in CSC plus a gather map into A.data."""
    pinv = np.empty(n, dtype=np.int64)
    pinv[perm] = np.arange(n, dtype=np.int64)
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    pr = pinv[indices]
    pc = pinv[cols]
    keep = np.flatnonzero(pr <= pc)
    order = np.lexsort((pr[keep], pc[keep]))
    src = keep[order]
    Ci = pr[src]
    Cp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(pc[src], minlength=n), out=Cp[1:])
    diag = np.full(n, -1, dtype=np.int64)
    on_diag = np.flatnonzero(Ci == pc[src])
    diag[Ci[on_diag]] = on_diag
    return Cp, Ci, src, diag


def _fill_count(n, indptr, indices, perm) -> int:
    Cp, Ci, _, _ = _permuted_upper(n, indptr, indices, perm)
    parent = _etree(n, Cp, Ci)
    Lp, _ = _symbolic(n, Cp, Ci, parent)
    return int(Lp[n])


def compute_ordering(pattern) -> np.ndarray:
    """Deterministic fill-reducing permutation of a symmetric sparsity pattern.

    Minimum degree on the supervariable-compressed graph, ties broken by the
    lowest index.  The natural order is returned instead whenever it gives no
    more fill.
    """
    n, indptr, indices = _pattern(pattern)
    natural = np.arange(n, dtype=np.int64)
    if n == 0:
        return natural
    perm = _minimum_degree(n, indptr, indices)
    if np.array_equal(perm, natural):
        return natural
    if _fill_count(n, indptr, indices, natural) <= _fill_count(n, indptr, indices, perm):
        return natural
    return perm


# ---------------------------------------------------------------------------
# factor types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymbolicFactor:
    n: int
    perm: np.ndarray
    parent: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    # input pattern this analysis was built for
    indptr: np.ndarray
    indices: np.ndarray
    # upper triangle of the permuted input, and where its values come from
    Cp: np.ndarray
    Ci: np.ndarray
    gather: np.ndarray
    diag_pos: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.Lp[-1])

    @property
    def column_counts(self) -> np.ndarray:
        return np.diff(self.Lp)

    def pattern(self) -> sp.csc_matrix:
        """Structure of L as a 0/1 CSC matrix (in permuted coordinates)."""
        return sp.csc_matrix((np.ones(self.nnz), self.Li, self.Lp), shape=(self.n, self.n))

    def matches(self, indptr: np.ndarray, indices: np.ndarray) -> bool:
        if indptr is self.indptr and indices is self.indices:
            return True
        return np.array_equal(indptr, self.indptr) and np.array_equal(indices, self.indices)


@dataclass(frozen=True, eq=False)
class CholFactor:
    symbolic: SymbolicFactor
    Lx: np.ndarray

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def L(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))

    @property
    def diagonal(self) -> np.ndarray:
        return self.Lx[self.symbolic.Lp[:-1]]


def symbolic_factorize(pattern, perm: np.ndarray | None = None) -> SymbolicFactor:
    """Elimination tree and factor structure for ``pattern`` under ``perm``."""
    n, indptr, indices = _pattern(pattern)
    if perm is None:
        perm = compute_ordering(pattern)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm is not a permutation of range(n)")
    Cp, Ci, gather, diag_pos = _permuted_upper(n, indptr, indices, perm)
    parent = _etree(n, Cp, Ci)
    Lp, Li = _symbolic(n, Cp, Ci, parent)
    return SymbolicFactor(n, perm, parent, Lp, Li, indptr, indices, Cp, Ci, gather, diag_pos)


def numeric_factorize(symbolic: SymbolicFactor, Q) -> CholFactor | None:
    """Numeric Cholesky of ``Q`` reusing ``symbolic``.

    Returns ``None`` when ``Q`` is not numerically positive-definite (some
    pivot at or below ``PIVOT_RTOL`` times the largest diagonal entry).
    """
    n, indptr, indices = _pattern(Q)
    if n != symbolic.n or not symbolic.matches(indptr, indices):
        raise ValueError("matrix pattern does not match the symbolic factorization")
    Cx = _values(Q)[symbolic.gather]
    if np.any(symbolic.diag_pos < 0):
        return None
    tol = PIVOT_RTOL * max(float(Cx[symbolic.diag_pos].max()), 0.0) if n else 0.0
    ok, Lx = _numeric(n, symbolic.Cp, symbolic.Ci, Cx, symbolic.parent, symbolic.Lp, tol)
    if not ok:
        return None
    return CholFactor(symbolic, Lx)


def factorize(Q, perm: np.ndarray | None = None) -> CholFactor | None:
    """From-scratch ordering, symbolic and numeric factorization."""
    return numeric_factorize(symbolic_factorize(Q, perm), Q)


def _as_columns(b: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != n or b.ndim not in (1, 2):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},) or ({n}, k)")
    return (b[:, None] if b.ndim == 1 else b), b.ndim == 1


def solve(factor: CholFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``Q x = rhs`` for a vector or an (n, k) block of right-hand sides."""
    s = factor.symbolic
    b, vector = _as_columns(rhs, s.n)
    x = np.ascontiguousarray(b[s.perm])
    _lsolve(s.Lp, s.Li, factor.Lx, x)
    _ltsolve(s.Lp, s.Li, factor.Lx, x)
    out = np.empty_like(x)
    out[s.perm] = x
    return out[:, 0] if vector else out


def log_det(factor: CholFactor) -> float:
    return 2.0 * float(np.sum(np.log(factor.diagonal)))


def sample_gmrf(factor: CholFactor, mean: np.ndarray, rng: np.random.Generator,
                size: int | None = None) -> np.ndarray:
    """Exact draw(s) from N(mean, Q^{-1}) by back-substitution with L'.

    With ``size`` given, returns a (size, n) array of independent draws.
    """
    s = factor.symbolic
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (s.n,):
        raise ValueError(f"mean has shape {mean.shape}, expected ({s.n},)")
    k = 1 if size is None else int(size)
    z = rng.standard_normal((k, s.n)).T.copy()
    _ltsolve(s.Lp, s.Li, factor.Lx, z)
    x = np.empty_like(z)
    x[s.perm] = z
    x = x.T + mean
    return x[0] if size is None else x


class CholeskyEngine:
    """Caches the symbolic analysis per sparsity pattern.

    Every matrix handed to :meth:`factorize` whose pattern was seen before
    goes straight to the numeric step.
    """

    def __init__(self):
        self._cache: list[SymbolicFactor] = []

    def symbolic(self, Q) -> SymbolicFactor:
        n, indptr, indices = _pattern(Q)
        for sym in self._cache:
            if sym.n == n and sym.matches(indptr, indices):
                return sym
        sym = symbolic_factorize(Q)
        self._cache.append(sym)
        return sym

    def factorize(self, Q) -> CholFactor | None:
        return numeric_factorize(self.symbolic(Q), Q)
