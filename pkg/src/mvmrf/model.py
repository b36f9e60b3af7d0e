"""Three-level hierarchical model for a multi-member ensemble on a lattice.

Data model, per member ``r`` and variable ``j``::

    y_rj ~ N(X1 alpha_j + X2 beta_rj + h_rj, sigma2_j I)

Process model::

    beta_rj ~ N(beta_bar_j, sigma2_b I)
    h_r     ~ N(h_bar, Q^{-1})          (h_r stacked location-major, Q from the MRF)

Priors: Gaussian on alpha, beta_bar and h_bar; inverse-gamma on sigma2_j,
sigma2_b and tau2_j (shape = rate = 0 gives the improper 1/sigma2 prior);
uniform on the positive-definite region (intersected with a box) for the
dependence parameters.

Every spatial vector is stored location-major; :meth:`StackedLattice.stack`
converts from the (p, n) variable-major layout used for ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from mvmrf.errors import NumericalDegeneracyError
from mvmrf.lattice import StackedLattice
from mvmrf.precision import (
    DependenceParams,
    SparsePrecision,
    assemble_precision,
    default_box,
    in_box,
)
from mvmrf.sparse_chol import CholeskyEngine, log_det, sample_gmrf, solve

LOG_2PI = math.log(2.0 * math.pi)


def standardize(X: np.ndarray) -> np.ndarray:
    """Center columns and scale them to unit variance (constant columns are only centered)."""
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(axis=0)
    sd = Z.std(axis=0)
    return Z / np.where(sd > 0, sd, 1.0)


@dataclass(frozen=True, eq=False)
class EnsembleDataset:
    lattice: StackedLattice
    y: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    variable_names: tuple[str, ...] = ()
    covariates: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 3 or y.shape[1:] != (self.lattice.p, self.lattice.n):
            raise ValueError(f"y must have shape (m, {self.lattice.p}, {self.lattice.n}), got {y.shape}")
        X1 = np.asarray(self.X1, dtype=np.float64).reshape(self.lattice.n, -1)
        X2 = np.asarray(self.X2, dtype=np.float64).reshape(self.lattice.n, -1)
        for name, arr in (("y", y), ("X1", X1), ("X2", X2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X1", X1)
        object.__setattr__(self, "X2", X2)
        if not self.variable_names:
            names = tuple(f"var{j + 1}" for j in range(self.lattice.p))
            object.__setattr__(self, "variable_names", names)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.lattice.p

    @property
    def n(self) -> int:
        return self.lattice.n

    @property
    def q1(self) -> int:
        return self.X1.shape[1]

    @property
    def q2(self) -> int:
        return self.X2.shape[1]

    @cached_property
    def var_of(self) -> np.ndarray:
        """Variable index of each location-major flat component."""
        return np.tile(np.arange(self.p), self.n)


@dataclass
class ModelState:
    alpha: np.ndarray      # (p, q1)
    beta_r: np.ndarray     # (m, p, q2)
    beta_bar: np.ndarray   # (p, q2)
    h_r: np.ndarray        # (m, n*p) location-major
    h_bar: np.ndarray      # (n*p,)
    sigma2: np.ndarray     # (p,)
    sigma2_b: float
    dep: DependenceParams

    def copy(self) -> "ModelState":
        return replace(
            self,
            alpha=self.alpha.copy(),
            beta_r=self.beta_r.copy(),
            beta_bar=self.beta_bar.copy(),
            h_r=self.h_r.copy(),
            h_bar=self.h_bar.copy(),
            sigma2=self.sigma2.copy(),
        )

    def validate(self, data: EnsembleDataset) -> None:
        m, p, n, q1, q2 = data.m, data.p, data.n, data.q1, data.q2
        expected = {
            "alpha": (p, q1), "beta_r": (m, p, q2), "beta_bar": (p, q2),
            "h_r": (m, n * p), "h_bar": (n * p,), "sigma2": (p,),
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"state.{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if not (np.all(self.sigma2 > 0) and self.sigma2_b > 0):
            raise ValueError("variances must be positive")
        if self.dep.p != p:
            raise ValueError("dependence parameters do not match the number of variables")


@dataclass(frozen=True)
class PriorSpec:
    sigma2_alpha: float = 10.0
    sigma2_beta: float = 100.0
    sigma2_h: float = 10.0
    # inverse-gamma(shape, rate) on sigma2_j, sigma2_b and tau2_j; (0, 0) is P(s2) ~ 1/s2
    variance_shape: float = 0.0
    variance_rate: float = 0.0
    dep_box: dict | None = None

    def __post_init__(self):
        for name in ("sigma2_alpha", "sigma2_beta", "sigma2_h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.variance_shape < 0 or self.variance_rate < 0:
            raise ValueError("inverse-gamma hyperparameters must be non-negative")

    def box(self, p: int) -> dict:
        return dict(self.dep_box) if self.dep_box is not None else default_box(p, 1.0)

    def log_variance_prior(self, s2) -> float:
        s2 = np.asarray(s2, dtype=np.float64)
        return float(np.sum(-(self.variance_shape + 1.0) * np.log(s2) - self.variance_rate / s2))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def fixed_effects(data: EnsembleDataset, state: ModelState) -> np.ndarray:
    """X1 alpha_j + X2 beta_rj as an (m, p, n) array."""
    common = state.alpha @ data.X1.T
    member = np.einsum("nq,mpq->mpn", data.X2, state.beta_r)
    return common[None] + member


def mean_field(data: EnsembleDataset, state: ModelState) -> np.ndarray:
    """Ensemble-mean change field X1 alpha_j + X2 beta_bar_j + h_bar_j, shape (n, p)."""
    reg = state.alpha @ data.X1.T + state.beta_bar @ data.X2.T
    return reg.T + state.h_bar.reshape(data.n, data.p)


def _draw_canonical(P: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(P^{-1} b, P^{-1}) for a small dense precision."""
    L = cholesky(P, lower=True)
    mean = cho_solve((L, True), b)
    return mean + solve_triangular(L.T, rng.standard_normal(len(b)), lower=False)


def _inverse_gamma(shape: float, rate: float, rng: np.random.Generator, what: str) -> float:
    if not (shape > 0 and rate > 0):
        raise NumericalDegeneracyError(
            f"{what}: inverse-gamma(shape={shape}, rate={rate}) is improper; zero residual sum"
        )
    return rate / rng.standard_gamma(shape)


# ---------------------------------------------------------------------------
# log densities
# ---------------------------------------------------------------------------


def log_likelihood(data: EnsembleDataset, state: ModelState) -> float:
    if not (np.all(state.sigma2 > 0)):
        raise ValueError("sigma2 must be positive")
    resid = data.y - fixed_effects(data, state) - data.lattice.unstack(state.h_r)
    ss = np.sum(resid ** 2, axis=(0, 2))
    s2 = state.sigma2
    return float(np.sum(-0.5 * data.m * data.n * (LOG_2PI + np.log(s2)) - 0.5 * ss / s2))


def log_posterior_dep(
    lattice: StackedLattice,
    dep: DependenceParams,
    h_r: np.ndarray,
    h_bar: np.ndarray,
    engine: CholeskyEngine,
    prior: PriorSpec,
) -> float:
    """log N(h_r; h_bar, Q(dep)^{-1}) summed over members, plus log prior of dep.

    Returns ``-inf`` outside the prior box or the positive-definite region.
    """
    if not in_box(dep, prior.box(lattice.p)):
        return -math.inf
    Q = assemble_precision(lattice, dep)
    fac = engine.factorize(Q)
    if fac is None:
        return -math.inf
    return gaussian_field_logpdf(Q, log_det(fac), h_r, h_bar) + prior.log_variance_prior(dep.tau2)


def gaussian_field_logpdf(Q: SparsePrecision, logdet: float, h_r: np.ndarray, h_bar: np.ndarray) -> float:
    d = np.atleast_2d(h_r) - h_bar
    quad = float(np.sum(Q.quad_form(d)))
    m, dim = d.shape
    return 0.5 * m * (logdet - dim * LOG_2PI) - 0.5 * quad


def collapsed_loglik(data: EnsembleDataset, state: ModelState, Q: SparsePrecision,
                     logdet_q: float, engine: CholeskyEngine,
                     sigma2: np.ndarray | None = None) -> float:
    """log p(y | everything except h_r), with every h_r integrated out.

    Each stacked residual ``e_r = y_r - fixed effects - h_bar`` is
    N(0, Q^{-1} + D^{-1}) with D the noise precision; Woodbury gives the
    inverse as D - D (Q + D)^{-1} D.  Returns -inf if Q + D is not PD.
    """
    sigma2 = state.sigma2 if sigma2 is None else np.asarray(sigma2, dtype=np.float64)
    noise_prec = 1.0 / sigma2[data.var_of]
    fac = engine.factorize(Q.add_diagonal(noise_prec))
    if fac is None:
        return -math.inf
    e = data.lattice.stack(data.y - fixed_effects(data, state)) - state.h_bar
    De = e * noise_prec
    quad = float(np.sum(e * De) - np.sum(De * solve(fac, De.T).T))
    m, dim = e.shape
    logdet_cov = log_det(fac) - logdet_q - float(np.sum(np.log(noise_prec)))
    return -0.5 * quad - 0.5 * m * (logdet_cov + dim * LOG_2PI)


# ---------------------------------------------------------------------------
# full-conditional draws
# ---------------------------------------------------------------------------


def update_alpha(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                 rng: np.random.Generator) -> np.ndarray:
    X1 = data.X1
    XtX = X1.T @ X1
    member = np.einsum("nq,mpq->mpn", data.X2, state.beta_r)
    target = (data.y - member - data.lattice.unstack(state.h_r)).sum(axis=0)  # (p, n)
    out = np.empty_like(state.alpha)
    eye = np.eye(data.q1) / prior.sigma2_alpha
    for j in range(data.p):
        s2 = state.sigma2[j]
        out[j] = _draw_canonical(XtX * (data.m / s2) + eye, X1.T @ target[j] / s2, rng)
    return out


def update_beta_r(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                  rng: np.random.Generator) -> np.ndarray:
    X2 = data.X2
    XtX = X2.T @ X2
    eye = np.eye(data.q2)
    target = data.y - (state.alpha @ data.X1.T)[None] - data.lattice.unstack(state.h_r)
    out = np.empty_like(state.beta_r)
    for j in range(data.p):
        s2 = state.sigma2[j]
        P = XtX / s2 + eye / state.sigma2_b
        for r in range(data.m):
            b = X2.T @ target[r, j] / s2 + state.beta_bar[j] / state.sigma2_b
            out[r, j] = _draw_canonical(P, b, rng)
    return out


def update_beta_bar(state: ModelState, prior: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    m = state.beta_r.shape[0]
    prec = m / state.sigma2_b + 1.0 / prior.sigma2_beta
    mean = state.beta_r.sum(axis=0) / state.sigma2_b / prec
    return mean + rng.standard_normal(mean.shape) / math.sqrt(prec)


def update_h_r(data: EnsembleDataset, state: ModelState, engine: CholeskyEngine,
               rng: np.random.Generator, Q: SparsePrecision | None = None) -> np.ndarray:
    """Joint draw of every member's spatial effect; one factorization serves all members."""
    Q = assemble_precision(data.lattice, state.dep) if Q is None else Q
    noise_prec = 1.0 / state.sigma2[data.var_of]
    fac = engine.factorize(Q.add_diagonal(noise_prec))
    if fac is None:
        raise NumericalDegeneracyError(
            "conditional precision of h_r is not positive-definite; a noise variance has "
            "collapsed towards zero (use a proper inverse-gamma variance prior)")
    resid = data.lattice.stack(data.y - fixed_effects(data, state))  # (m, dim)
    rhs = Q.matvec(state.h_bar)[None] + resid * noise_prec
    mean = solve(fac, rhs.T).T
    return mean + sample_gmrf(fac, np.zeros(data.lattice.dim), rng, size=data.m)


def update_h_bar(state: ModelState, prior: PriorSpec, engine: CholeskyEngine,
                 rng: np.random.Generator, Q: SparsePrecision) -> np.ndarray:
    m = state.h_r.shape[0]
    fac = engine.factorize(Q.scaled(m).add_diagonal(1.0 / prior.sigma2_h))
    if fac is None:
        raise AssertionError("conditional precision of h_bar is not positive-definite")
    mean = solve(fac, Q.matvec(state.h_r.sum(axis=0)))
    return sample_gmrf(fac, mean, rng)


def update_sigma2(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                  rng: np.random.Generator) -> tuple[np.ndarray, float]:
    a, b = prior.variance_shape, prior.variance_rate
    resid = data.y - fixed_effects(data, state) - data.lattice.unstack(state.h_r)
    ss = np.sum(resid ** 2, axis=(0, 2))
    sigma2 = np.array([
        _inverse_gamma(a + 0.5 * data.m * data.n, b + 0.5 * ss[j], rng, f"sigma2[{j}]")
        for j in range(data.p)
    ])
    dev = state.beta_r - state.beta_bar[None]
    shape_b = a + 0.5 * dev.size
    sigma2_b = _inverse_gamma(shape_b, b + 0.5 * float(np.sum(dev ** 2)), rng, "sigma2_b")
    return sigma2, sigma2_b


def shift_regression(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                     rng: np.random.Generator) -> None:
    """Joint translation of regression terms against h_bar, drawn from its exact conditional.

    The moves ``alpha_j += d``, ``h_rj -= X1 d``, ``h_bar_j -= X1 d`` and
    ``beta_rj += g``, ``beta_bar_j += g``, ``h_rj -= X2 g``, ``h_bar_j -= X2 g``
    leave the likelihood and the spread of h_r around h_bar unchanged, so
    only the priors on alpha, beta_bar and h_bar see them.  Sampling the shift
    from that Gaussian is a valid Gibbs step along the otherwise slowly-mixing
    ridge between the regression terms and h_bar.  Updates ``state`` in place.
    """
    X = np.hstack([data.X1, data.X2])
    q1 = data.q1
    prior_var = np.concatenate([np.full(q1, prior.sigma2_alpha), np.full(data.q2, prior.sigma2_beta)])
    P = X.T @ X / prior.sigma2_h + np.diag(1.0 / prior_var)
    hb = state.h_bar.reshape(data.n, data.p)
    coef = np.hstack([state.alpha, state.beta_bar])
    shift = np.zeros((data.n, data.p))
    for j in range(data.p):
        b = X.T @ hb[:, j] / prior.sigma2_h - coef[j] / prior_var
        delta = _draw_canonical(P, b, rng)
        shift[:, j] = X @ delta
        state.alpha[j] += delta[:q1]
        state.beta_bar[j] += delta[q1:]
        state.beta_r[:, j] += delta[q1:]
    state.h_bar = state.h_bar - shift.ravel()
    state.h_r = state.h_r - shift.ravel()[None]


def sweep_regression(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                     rng: np.random.Generator) -> None:
    state.alpha = update_alpha(data, state, prior, rng)
    state.beta_r = update_beta_r(data, state, prior, rng)
    state.beta_bar = update_beta_bar(state, prior, rng)


def sweep_spatial(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                  engine: CholeskyEngine, rng: np.random.Generator, Q: SparsePrecision) -> None:
    state.h_r = update_h_r(data, state, engine, rng, Q)
    state.h_bar = update_h_bar(state, prior, engine, rng, Q)
    shift_regression(data, state, prior, rng)
    state.sigma2, state.sigma2_b = update_sigma2(data, state, prior, rng)


def gibbs_sweep(data: EnsembleDataset, state: ModelState, prior: PriorSpec,
                engine: CholeskyEngine, rng: np.random.Generator,
                Q: SparsePrecision | None = None) -> None:
    """One pass over every conjugate block; the dependence parameters are left alone."""
    Q = assemble_precision(data.lattice, state.dep) if Q is None else Q
    sweep_regression(data, state, prior, rng)
    sweep_spatial(data, state, prior, engine, rng, Q)
