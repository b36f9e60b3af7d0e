"""Regular grid lattices and the stacked multivariate neighbourhood graph.

Locations are numbered row-major from the south-west corner, so location
``i`` sits at column ``i % nx`` and row ``i // nx``.  A stacked lattice with
``p`` variables per location uses location-major flat indexing: component
``(i, j)`` lives at ``i * p + j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class AdjacencyOrder(str, enum.Enum):
    """Neighbourhood definitions understood by :func:`build_grid_lattice`."""

    ROOK = "rook-1st"


@dataclass(frozen=True, eq=False)
class GridLattice:
    nx: int
    ny: int
    neighbor_lists: tuple[tuple[int, ...], ...]
    order: AdjacencyOrder = AdjacencyOrder.ROOK

    @property
    def n(self) -> int:
        return self.nx * self.ny

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_lists[i]

    def coords(self, i: int) -> tuple[int, int]:
        """(column, row) of location ``i``."""
        return i % self.nx, i // self.nx

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) int array, first index greater, sorted."""
        pairs = [(i, k) for i in range(self.n) for k in self.neighbor_lists[i] if k < i]
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(pairs, dtype=np.int64)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency matrix."""
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        vals = np.ones(rows.size)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def __repr__(self) -> str:
        return f"GridLattice(nx={self.nx}, ny={self.ny}, order={self.order.value})"


def _rook_neighbors(nx: int, ny: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for i in range(nx * ny):
        col, row = i % nx, i // nx
        nb = []
        if row > 0:
            nb.append(i - nx)
        if col > 0:
            nb.append(i - 1)
        if col < nx - 1:
            nb.append(i + 1)
        if row < ny - 1:
            nb.append(i + nx)
        out.append(tuple(nb))
    return tuple(out)


_BUILDERS = {AdjacencyOrder.ROOK: _rook_neighbors}


def build_grid_lattice(nx: int, ny: int, order: AdjacencyOrder | str = AdjacencyOrder.ROOK) -> GridLattice:
    """Build an ``nx`` by ``ny`` lattice with free boundaries."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be positive integers, got nx={nx}, ny={ny}")
    order = AdjacencyOrder(order)
    return GridLattice(int(nx), int(ny), _BUILDERS[order](int(nx), int(ny)), order)


def edge_list(lattice: GridLattice) -> list[tuple[int, int]]:
    """Each undirected adjacency once as ``(i, k)`` with ``i > k``, lexicographically sorted."""
    return [(int(i), int(k)) for i, k in lattice.edges]


@dataclass(frozen=True, eq=False)
class StackedLattice:
    """``p`` variables layered over a grid; flat ordering is location-major."""

    grid: GridLattice
    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be a positive integer, got {self.p}")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dim(self) -> int:
        return self.grid.n * self.p

    def flat_index(self, i: int, j: int) -> int:
        if not (0 <= i < self.n and 0 <= j < self.p):
            raise ValueError(f"(i={i}, j={j}) out of range for n={self.n}, p={self.p}")
        return i * self.p + j

    def unflatten(self, a: int) -> tuple[int, int]:
        if not 0 <= a < self.dim:
            raise ValueError(f"flat index {a} out of range [0, {self.dim})")
        return divmod(a, self.p)

    def stack(self, fields: np.ndarray) -> np.ndarray:
        """(..., p, n) variable-major fields -> (..., n*p) location-major vectors."""
        fields = np.asarray(fields)
        return np.swapaxes(fields, -1, -2).reshape(*fields.shape[:-2], self.dim)

    def unstack(self, vec: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`stack`."""
        vec = np.asarray(vec)
        return np.swapaxes(vec.reshape(*vec.shape[:-1], self.n, self.p), -1, -2)


def flat_index(lattice: StackedLattice, i: int, j: int) -> int:
    return lattice.flat_index(i, j)
