"""Multivariate Markov random field model for gridded multi-member ensemble output."""

from mvmrf.lattice import (
    AdjacencyOrder,
    GridLattice,
    StackedLattice,
    build_grid_lattice,
    edge_list,
    flat_index,
)
from mvmrf.precision import (
    DependenceParams,
    SparsePrecision,
    assemble_precision,
    check_positive_definite,
    conditional_coefficient,
    sample_valid_params_uniform,
)
from mvmrf.sparse_chol import (
    CholeskyEngine,
    CholFactor,
    SymbolicFactor,
    compute_ordering,
    log_det,
    numeric_factorize,
    sample_gmrf,
    solve,
    symbolic_factorize,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyOrder",
    "CholFactor",
    "CholeskyEngine",
    "DependenceParams",
    "GridLattice",
    "SparsePrecision",
    "StackedLattice",
    "SymbolicFactor",
    "assemble_precision",
    "build_grid_lattice",
    "check_positive_definite",
    "compute_ordering",
    "conditional_coefficient",
    "edge_list",
    "flat_index",
    "log_det",
    "numeric_factorize",
    "sample_gmrf",
    "sample_valid_params_uniform",
    "solve",
    "symbolic_factorize",
]
