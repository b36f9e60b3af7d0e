"""Joint precision of the multivariate lattice MRF.

Blocks of the location-major precision ``Q`` for a stacked lattice:

* diagonal block ``(i, i)``: ``D^{-1/2} A D^{-1/2}`` with ``A`` unit-diagonal
  and ``-rho[j, l]`` off the diagonal,
* neighbour block ``(i, k)`` with ``i > k``: ``-D^{-1/2} Phi D^{-1/2}``,
* neighbour block ``(k, i)``: the transpose of the above,

where ``D = diag(tau2)``.  Under this sign convention the full conditional
mean of component ``(i, j)`` is ``mu_ij + sum_b c_b (y_b - mu_b)`` with
``c = rho[j, l] tau_j / tau_l`` within a location and
``c = phi[j, l] tau_j / tau_l`` across an ``i > k`` neighbour pair.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from mvmrf.errors import SaturationError
from mvmrf.lattice import StackedLattice
from mvmrf.sparse_chol import CholeskyEngine, factorize


def param_names(p: int) -> list[str]:
    """Names of the free dependence parameters, in vector order.

    Within-location ``rho{j}{l}`` (j < l), then ``phi{j}{j}``, then the
    off-diagonal ``phi{j}{l}`` row-major; indices are 1-based.  For p = 2:
    ``rho12, phi11, phi22, phi12, phi21``.
    """
    names = [f"rho{j + 1}{l + 1}" for j in range(p) for l in range(j + 1, p)]
    names += [f"phi{j + 1}{j + 1}" for j in range(p)]
    names += [f"phi{j + 1}{l + 1}" for j in range(p) for l in range(p) if j != l]
    return names


def _param_slots(p: int) -> list[tuple[str, int, int]]:
    slots = [("rho", j, l) for j in range(p) for l in range(j + 1, p)]
    slots += [("phi", j, j) for j in range(p)]
    slots += [("phi", j, l) for j in range(p) for l in range(p) if j != l]
    return slots


@dataclass(frozen=True, eq=False)
class DependenceParams:
    rho: np.ndarray
    phi: np.ndarray
    tau2: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=np.float64)
        phi = np.array(self.phi, dtype=np.float64)
        tau2 = np.array(self.tau2, dtype=np.float64).reshape(-1)
        p = tau2.size
        if rho.shape != (p, p) or phi.shape != (p, p):
            raise ValueError(f"rho and phi must be {p}x{p}, got {rho.shape} and {phi.shape}")
        if not np.allclose(rho, rho.T, rtol=0, atol=0):
            raise ValueError("rho must be symmetric")
        if not np.all(np.isfinite(rho)) or not np.all(np.isfinite(phi)):
            raise ValueError("dependence parameters must be finite")
        if not np.all(tau2 > 0) or not np.all(np.isfinite(tau2)):
            raise ValueError(f"tau2 must be positive and finite, got {tau2}")
        np.fill_diagonal(rho, 0.0)
        for arr in (rho, phi, tau2):
            arr.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "tau2", tau2)

    @property
    def p(self) -> int:
        return self.tau2.size

    @property
    def names(self) -> list[str]:
        return param_names(self.p)

    def vector(self) -> np.ndarray:
        """(rho, phi) as a flat vector ordered like :func:`param_names`."""
        return np.array([(self.rho if kind == "rho" else self.phi)[j, l]
                         for kind, j, l in _param_slots(self.p)])

    @classmethod
    def from_vector(cls, theta, tau2) -> "DependenceParams":
        tau2 = np.asarray(tau2, dtype=np.float64).reshape(-1)
        p = tau2.size
        theta = np.asarray(theta, dtype=np.float64)
        slots = _param_slots(p)
        if theta.shape != (len(slots),):
            raise ValueError(f"expected {len(slots)} dependence parameters, got {theta.shape}")
        rho = np.zeros((p, p))
        phi = np.zeros((p, p))
        for value, (kind, j, l) in zip(theta, slots):
            if kind == "rho":
                rho[j, l] = rho[l, j] = value
            else:
                phi[j, l] = value
        return cls(rho, phi, tau2)

    def replace(self, theta=None, tau2=None) -> "DependenceParams":
        return DependenceParams.from_vector(
            self.vector() if theta is None else theta,
            self.tau2 if tau2 is None else tau2,
        )

    def as_dict(self) -> dict[str, float]:
        out = dict(zip(self.names, map(float, self.vector())))
        out.update({f"tau2_{j + 1}": float(t) for j, t in enumerate(self.tau2)})
        return out

    @classmethod
    def zeros(cls, p: int, tau2=None) -> "DependenceParams":
        return cls(np.zeros((p, p)), np.zeros((p, p)), np.ones(p) if tau2 is None else tau2)


@dataclass(frozen=True, eq=False)
class SparsePrecision:
    """Symmetric sparse matrix in CSC form with full (both-triangle) storage."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    diag_pos: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.indptr) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.dim, self.dim

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.data[self.diag_pos]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x

    def quad_form(self, x: np.ndarray) -> np.ndarray | float:
        """x' Q x for a vector, or per row of an (k, dim) array."""
        x = np.asarray(x)
        if x.ndim == 1:
            return float(x @ self.matvec(x))
        return np.einsum("kd,dk->k", x, self.matvec(x.T))

    def with_data(self, data: np.ndarray) -> "SparsePrecision":
        return SparsePrecision(self.indptr, self.indices, np.asarray(data, dtype=np.float64), self.diag_pos)

    def scaled(self, c: float) -> "SparsePrecision":
        return self.with_data(self.data * c)

    def add_diagonal(self, d) -> "SparsePrecision":
        data = self.data.copy()
        data[self.diag_pos] += d
        return self.with_data(data)

    def coo_lines(self):
        """(row, col, value) text lines, column-major, values in round-trip repr."""
        cols = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        for r, c, v in zip(self.indices, cols, self.data):
            yield f"{int(r)} {int(c)} {float(v)!r}\n"

    def dump_coo(self, fh) -> None:
        fh.writelines(self.coo_lines())


@dataclass(frozen=True, eq=False)
class _Template:
    indptr: np.ndarray
    indices: np.ndarray
    slot: np.ndarray
    rowvar: np.ndarray
    colvar: np.ndarray
    diag_pos: np.ndarray


_TEMPLATES: "weakref.WeakKeyDictionary[StackedLattice, _Template]" = weakref.WeakKeyDictionary()


def _build_template(lattice: StackedLattice) -> _Template:
    p, n = lattice.p, lattice.n
    jj, ll = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    jj, ll = jj.ravel(), ll.ravel()
    # slot 0: unit diagonal; 1 + j*p + l: -rho[j, l]; 1 + p*p + j*p + l: -phi[j, l]
    within_slot = np.where(jj == ll, 0, 1 + jj * p + ll)
    rows, cols, slots, rv, cv = [], [], [], [], []
    locs = np.arange(n)
    rows.append((locs[:, None] * p + jj).ravel())
    cols.append((locs[:, None] * p + ll).ravel())
    slots.append(np.tile(within_slot, n))
    rv.append(np.tile(jj, n))
    cv.append(np.tile(ll, n))
    edges = lattice.grid.edges
    if len(edges):
        for a, b, phi_slot in (
            (edges[:, 0], edges[:, 1], 1 + p * p + jj * p + ll),  # block (i, k), i > k
            (edges[:, 1], edges[:, 0], 1 + p * p + ll * p + jj),  # block (k, i): transpose
        ):
            rows.append((a[:, None] * p + jj).ravel())
            cols.append((b[:, None] * p + ll).ravel())
            slots.append(np.tile(phi_slot, len(edges)))
            rv.append(np.tile(jj, len(edges)))
            cv.append(np.tile(ll, len(edges)))
    rows, cols, slots, rv, cv = (np.concatenate(x).astype(np.int64) for x in (rows, cols, slots, rv, cv))
    order = np.lexsort((rows, cols))
    rows, cols, slots, rv, cv = rows[order], cols[order], slots[order], rv[order], cv[order]
    indptr = np.zeros(lattice.dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=lattice.dim), out=indptr[1:])
    diag_pos = np.flatnonzero(rows == cols)
    for arr in (indptr, rows, slots, rv, cv, diag_pos):
        arr.setflags(write=False)
    return _Template(indptr, rows, slots, rv, cv, diag_pos)


def _template(lattice: StackedLattice) -> _Template:
    tpl = _TEMPLATES.get(lattice)
    if tpl is None:
        tpl = _TEMPLATES[lattice] = _build_template(lattice)
    return tpl


def precision_pattern(lattice: StackedLattice) -> SparsePrecision:
    """Structural pattern of Q (all stored values one)."""
    tpl = _template(lattice)
    return SparsePrecision(tpl.indptr, tpl.indices, np.ones(len(tpl.indices)), tpl.diag_pos)


def assemble_precision(lattice: StackedLattice, params: DependenceParams) -> SparsePrecision:
    """Sparse joint precision of the stacked lattice MRF."""
    if params.p != lattice.p:
        raise ValueError(f"params have p={params.p}, lattice has p={lattice.p}")
    tpl = _template(lattice)
    coef = np.concatenate(([1.0], -params.rho.ravel(), -params.phi.ravel()))
    scale = 1.0 / np.sqrt(params.tau2[tpl.rowvar] * params.tau2[tpl.colvar])
    return SparsePrecision(tpl.indptr, tpl.indices, coef[tpl.slot] * scale, tpl.diag_pos)


def check_positive_definite(Q: SparsePrecision, engine: CholeskyEngine | None = None) -> bool:
    """True iff the sparse Cholesky of ``Q`` completes with every pivot above tolerance."""
    fac = engine.factorize(Q) if engine is not None else factorize(Q)
    return fac is not None


def default_box(p: int, half_width: float = 0.3) -> dict[str, tuple[float, float]]:
    return {name: (-half_width, half_width) for name in param_names(p)}


def _box_arrays(box: Mapping[str, tuple[float, float]], p: int) -> tuple[np.ndarray, np.ndarray]:
    names = param_names(p)
    unknown = set(box) - set(names)
    if unknown:
        raise ValueError(f"unknown dependence parameters in box: {sorted(unknown)}")
    missing = [n for n in names if n not in box]
    if missing:
        raise ValueError(f"box is missing bounds for {missing}")
    lo = np.array([float(box[n][0]) for n in names])
    hi = np.array([float(box[n][1]) for n in names])
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
        raise ValueError("box bounds must be finite with lo <= hi")
    return lo, hi


def in_box(params: DependenceParams, box: Mapping[str, tuple[float, float]]) -> bool:
    lo, hi = _box_arrays(box, params.p)
    theta = params.vector()
    return bool(np.all(theta >= lo) and np.all(theta <= hi))


def sample_valid_params_uniform(
    lattice: StackedLattice,
    rng: np.random.Generator,
    box: Mapping[str, tuple[float, float]] | None = None,
    *,
    tau2=None,
    max_tries: int = 10_000,
    engine: CholeskyEngine | None = None,
) -> DependenceParams:
    """Rejection-sample (rho, phi) uniformly over the box intersected with the PD region.

    ``tau2`` is held fixed (default all ones); it rescales Q without
    affecting positive-definiteness.
    """
    p = lattice.p
    if max_tries < 1:
        raise ValueError("max_tries must be at least 1")
    lo, hi = _box_arrays(box if box is not None else default_box(p), p)
    tau2 = np.ones(p) if tau2 is None else tau2
    engine = engine or CholeskyEngine()
    for _ in range(max_tries):
        params = DependenceParams.from_vector(rng.uniform(lo, hi), tau2)
        if check_positive_definite(assemble_precision(lattice, params), engine):
            return params
    raise SaturationError(max_tries)


_KINDS = ("within-layer", "within-location", "cross")


def conditional_coefficient(params: DependenceParams, kind: str, j: int, l: int, *,
                            reverse: bool = False) -> float:
    """Autoregression coefficient of neighbour component ``l`` in the conditional mean of ``j``.

    ``reverse=True`` is for a neighbour pair ``(i, k)`` traversed with
    ``i < k``, which sees ``Phi'`` instead of ``Phi``.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    p = params.p
    if not (0 <= j < p and 0 <= l < p):
        raise ValueError(f"variable indices ({j}, {l}) out of range for p={p}")
    ratio = np.sqrt(params.tau2[j]) / np.sqrt(params.tau2[l])
    if kind == "within-location":
        if j == l:
            raise ValueError("within-location coefficient needs two distinct variables")
        return float(params.rho[j, l] * ratio)
    if kind == "within-layer" and j != l:
        raise ValueError("within-layer coefficient relates a variable to itself")
    phi = params.phi[l, j] if reverse else params.phi[j, l]
    return float(phi * ratio)
