"""Multi-chain MCMC with a three-regime schedule for the dependence parameters.

Regime 1: every dependence parameter gets its own Gaussian random-walk
Metropolis-Hastings step, with the proposal scale adapted every
``adapt_interval`` iterations towards ``target_acceptance``.

Regime 2: the parameters in ``joint_block`` move together under a
multivariate Gaussian proposal whose covariance tracks the empirical
covariance of the chain; the rest keep their scalar steps.  Adaptation
continues.

Regime 3: same kernels, adaptation frozen.  Only regime-3 states are
recorded.

The conjugate blocks (regression coefficients, spatial effects, variances)
are refreshed by Gibbs draws every iteration.  The variances also get
random-walk steps alongside the dependence parameters, in the coordinates
``logvar_j = log(sigma2_j + tau2_j)`` and ``split_j = log(sigma2_j /
tau2_j)``.  Noise and field variance trade off against each other, and in
these coordinates that ridge is close to a line along ``split_j``.  The map
from ``(log sigma2_j, log tau2_j)`` has unit Jacobian, so the target only
needs the usual log-scale term ``log sigma2_j + log tau2_j``.
``joint_block`` may name these coordinates too; weakly identified problems
mix best with everything in one block.

All Metropolis steps target the posterior with the member effects ``h_r``
integrated out, and ``h_r`` is redrawn from its full conditional straight
afterwards.  This keeps the sampler exact while letting the variances move
freely along the ridge.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from mvmrf.lattice import StackedLattice
from mvmrf.model import (
    EnsembleDataset,
    ModelState,
    PriorSpec,
    collapsed_loglik,
    gaussian_field_logpdf,
    log_likelihood,
    mean_field,
    sweep_regression,
    sweep_spatial,
)
from mvmrf.precision import (
    DependenceParams,
    assemble_precision,
    default_box,
    param_names,
    sample_valid_params_uniform,
)
from mvmrf.sparse_chol import CholeskyEngine, log_det

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6
SCALE_CEILING = 1e2
WORKERS_ENV = "MVMRF_WORKERS"


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 10
    regime1_iters: int = 2500
    regime2_iters: int = 10_000
    regime3_iters: int = 10_000
    target_acceptance: float = 0.20
    adapt_interval: int = 100
    adapt_gain: float = 1.0
    joint_block: tuple[str, ...] = ("rho12", "phi12", "phi21")
    joint_repeats: int = 1
    thin: int = 10
    seed: int = 0
    start_half_width: float = 0.3
    init_scale: float = 0.05
    init_variance_scale: float = 0.1
    max_start_tries: int = 10_000
    n_monitored_h: int = 5
    psrf_threshold: float = 1.1
    record_member_effects: bool = False

    def __post_init__(self):
        object.__setattr__(self, "joint_block", tuple(self.joint_block))
        for name in ("n_chains", "regime1_iters", "regime2_iters", "regime3_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.adapt_interval < 1 or self.thin < 1 or self.joint_repeats < 1:
            raise ValueError("adapt_interval, thin and joint_repeats must be at least 1")
        if len(set(self.joint_block)) != len(self.joint_block):
            raise ValueError("joint_block lists a parameter twice")

    @property
    def total_iters(self) -> int:
        return self.regime1_iters + self.regime2_iters + self.regime3_iters

    def regime(self, it: int) -> int:
        if it < self.regime1_iters:
            return 1
        if it < self.regime1_iters + self.regime2_iters:
            return 2
        return 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["joint_block"] = list(self.joint_block)
        return d


# ---------------------------------------------------------------------------
# proposals and adaptation
# ---------------------------------------------------------------------------


@dataclass
class JointProposal:
    """Multivariate Gaussian random walk with covariance ``scale * cov``."""

    cov: np.ndarray
    scale: float
    initial_scale: float

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        L = np.linalg.cholesky(self.scale * self.cov)
        return L @ rng.standard_normal(len(self.cov))


def adapt_proposal(
    accepted: Sequence[bool],
    current: float | JointProposal,
    target: float,
    *,
    gain: float = 1.0,
    initial: float | None = None,
    states: np.ndarray | None = None,
) -> float | JointProposal:
    """Rescale a proposal towards the target acceptance rate.

    The scale is multiplied by ``exp(gain * (observed - target))`` and kept
    within ``[1e-6, 1e2]`` times its initial value.  For a joint proposal the
    base covariance is replaced by the empirical covariance of ``states``
    when enough of them are given.
    """
    accepted = np.asarray(accepted, dtype=bool)
    if accepted.size == 0:
        raise ValueError("adaptation needs a non-empty acceptance history")
    factor = math.exp(gain * (accepted.mean() - target))
    if isinstance(current, JointProposal):
        ref = current.initial_scale
        scale = min(max(current.scale * factor, SCALE_FLOOR * ref), SCALE_CEILING * ref)
        cov = current.cov
        if states is not None:
            states = np.asarray(states)
            d = cov.shape[0]
            if states.shape[0] > 2 * d:
                emp = np.atleast_2d(np.cov(states, rowvar=False))
                if np.all(np.isfinite(emp)) and np.all(np.diag(emp) > 0):
                    cov = emp + 1e-10 * np.eye(d)
        return JointProposal(cov, scale, ref)
    ref = current if initial is None else initial
    return min(max(current * factor, SCALE_FLOOR * ref), SCALE_CEILING * ref)


# ---------------------------------------------------------------------------
# dependence-parameter target with cached factorization
# ---------------------------------------------------------------------------


class DepTarget:
    """log p(y | dep, sigma2, rest) + log priors, with h_r integrated out.

    ``tau2`` only rescales Q symmetrically, so
    ``log det Q = log det Q(rho, phi, tau2 = 1) - n * sum_j log tau2_j`` and
    moves in ``tau2`` never need a new factorization.
    """

    def __init__(self, data: EnsembleDataset, prior: PriorSpec, engine: CholeskyEngine):
        self.data = data
        lattice = data.lattice
        self.lattice = lattice
        self.prior = prior
        self.engine = engine
        self.box_lo, self.box_hi = np.array(
            [prior.box(lattice.p)[nm] for nm in param_names(lattice.p)]
        ).T.copy()

    def unit_logdet(self, theta: np.ndarray) -> float | None:
        if np.any(theta < self.box_lo) or np.any(theta > self.box_hi):
            return None
        unit = DependenceParams.from_vector(theta, np.ones(self.lattice.p))
        fac = self.engine.factorize(assemble_precision(self.lattice, unit))
        return None if fac is None else log_det(fac)

    def logdet(self, dep: DependenceParams, unit_logdet: float) -> float:
        return unit_logdet - self.lattice.n * float(np.sum(np.log(dep.tau2)))

    def evaluate(self, dep: DependenceParams, unit_logdet: float, state: ModelState,
                 sigma2: np.ndarray | None = None):
        sigma2 = state.sigma2 if sigma2 is None else sigma2
        Q = assemble_precision(self.lattice, dep)
        lp = collapsed_loglik(self.data, state, Q, self.logdet(dep, unit_logdet), self.engine, sigma2)
        lp += self.prior.log_variance_prior(dep.tau2) + self.prior.log_variance_prior(sigma2)
        return lp, Q

    def joint_log_density(self, state: ModelState, unit_logdet: float, Q) -> float:
        """Complete-data log density (h_r included) up to the parameter priors' constants."""
        return (log_likelihood(self.data, state)
                + gaussian_field_logpdf(Q, self.logdet(state.dep, unit_logdet), state.h_r, state.h_bar)
                + self.prior.log_variance_prior(state.dep.tau2)
                + self.prior.log_variance_prior(state.sigma2))


@dataclass
class ChainOutput:
    chain_id: int
    samples: dict[str, np.ndarray]
    acceptance_log: dict[str, dict[str, float]]
    proposal_history: list[dict]
    start: dict[str, float] = field(default_factory=dict)


def mh_param_names(p: int) -> list[str]:
    """Names of every Metropolis-moved coordinate, in proposal-vector order."""
    return (param_names(p) + [f"logvar_{j + 1}" for j in range(p)]
            + [f"split_{j + 1}" for j in range(p)])


def variance_coords(tau2: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    return np.concatenate([np.log(sigma2 + tau2), np.log(sigma2) - np.log(tau2)])


def variances_from_coords(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`variance_coords`; returns (tau2, sigma2)."""
    p = len(u) // 2
    total, split = np.exp(u[:p]), u[p:]
    return total * expit(-split), total * expit(split)


def _initial_state(data: EnsembleDataset, prior: PriorSpec, config: SamplerConfig,
                   rng: np.random.Generator, engine: CholeskyEngine) -> ModelState:
    p, m = data.p, data.m
    X = np.hstack([data.X1, data.X2])
    coef, *_ = np.linalg.lstsq(X, data.y.mean(axis=0).T, rcond=None)  # (q1+q2, p)
    resid = data.y - (X @ coef).T[None]
    s2 = resid.var(axis=(0, 2)) * rng.uniform(0.5, 2.0, size=p)
    s2 = np.where(s2 > 0, s2, 1.0)
    alpha = coef[: data.q1].T + 0.1 * rng.standard_normal((p, data.q1))
    beta_bar = coef[data.q1:].T + 0.1 * rng.standard_normal((p, data.q2))
    beta_r = beta_bar[None] + 0.1 * rng.standard_normal((m, p, data.q2))
    start_box = default_box(p, config.start_half_width)
    prior_box = prior.box(p)
    box = {k: (max(lo, prior_box[k][0]), min(hi, prior_box[k][1])) for k, (lo, hi) in start_box.items()}
    tau2 = rng.uniform(0.5, 2.0, size=p)
    dep = sample_valid_params_uniform(data.lattice, rng, box, tau2=tau2,
                                      max_tries=config.max_start_tries, engine=engine)
    return ModelState(
        alpha=alpha,
        beta_r=beta_r,
        beta_bar=beta_bar,
        h_r=np.zeros((m, data.lattice.dim)),
        h_bar=np.zeros(data.lattice.dim),
        sigma2=s2,
        sigma2_b=float(rng.uniform(0.1, 1.0)),
        dep=dep,
    )


def _record(samples: dict[str, list], data: EnsembleDataset, state: ModelState,
            lp: float, config: SamplerConfig) -> None:
    samples["alpha"].append(state.alpha.ravel().copy())
    samples["beta_r"].append(state.beta_r.ravel().copy())
    samples["beta_bar"].append(state.beta_bar.ravel().copy())
    samples["h_bar"].append(state.h_bar.copy())
    samples["sigma2"].append(state.sigma2.copy())
    samples["sigma2_b"].append(np.array([state.sigma2_b]))
    samples["dep"].append(state.dep.vector())
    samples["tau2"].append(state.dep.tau2.copy())
    samples["field"].append(mean_field(data, state).ravel())
    samples["log_post"].append(np.array([lp]))
    if config.record_member_effects:
        samples["h_r"].append(state.h_r.ravel().copy())


class ChainKernel:
    """One Metropolis-within-Gibbs transition and its adaptive proposals.

    ``step`` performs a full iteration for a given regime; ``adapt`` rescales
    every proposal from the acceptances gathered since the previous call.
    The dataset can be swapped between steps (used by joint-consistency
    checks, which regenerate the data after every transition).
    """

    def __init__(self, config: SamplerConfig, data: EnsembleDataset, prior: PriorSpec,
                 state: ModelState, rng: np.random.Generator, engine: CholeskyEngine | None = None):
        p = data.p
        self.config, self.prior, self.rng = config, prior, rng
        self.engine = engine or CholeskyEngine()
        self.names = mh_param_names(p)
        self.d = len(param_names(p))
        unknown = set(config.joint_block) - set(self.names)
        if unknown:
            raise ValueError(f"joint_block names unknown parameters {sorted(unknown)}; "
                             f"choose from {self.names}")
        self.blocks = {"joint": [self.names.index(nm) for nm in config.joint_block]} if config.joint_block else {}
        in_block = {i for idx in self.blocks.values() for i in idx}
        self.free = [i for i in range(len(self.names)) if i not in in_block]
        self.scale = np.array([config.init_scale] * self.d + [config.init_variance_scale] * (2 * p))
        self.initial_scale = self.scale.copy()
        self.joints: dict[str, JointProposal] = {}
        self.trace: list[np.ndarray] = []
        self.window: dict[str, list[bool]] = {}
        self.counts: dict[int, dict[str, list[int]]] = {}
        self.history: list[dict] = []
        self.set_data(data)
        self.state = state
        self.unit_ld = self.target.unit_logdet(state.dep.vector())
        if self.unit_ld is None:
            raise ValueError("starting dependence parameters are outside the prior support")
        self.Q = assemble_precision(data.lattice, state.dep)
        self.lp = -math.inf
        self.z = self._coords()

    def set_data(self, data: EnsembleDataset) -> None:
        self.data = data
        self.target = DepTarget(data, self.prior, self.engine)

    def _coords(self) -> np.ndarray:
        st = self.state
        return np.concatenate([st.dep.vector(), variance_coords(st.dep.tau2, st.sigma2)])

    def _tally(self, regime: int, block: str, acc: bool) -> None:
        c = self.counts.setdefault(regime, {}).setdefault(block, [0, 0])
        c[0] += acc
        c[1] += 1
        if regime < 3:
            self.window.setdefault(block, []).append(acc)

    def _recent(self, idx) -> np.ndarray:
        return np.asarray(self.trace[len(self.trace) // 2:])[:, idx]

    def _attempt(self, prop: np.ndarray) -> bool:
        d, st = self.d, self.state
        ld = self.unit_ld
        if np.any(prop[:d] != self.z[:d]):
            ld = self.target.unit_logdet(prop[:d])
            if ld is None:
                return False
        tau2_new, s2_new = variances_from_coords(prop[d:])
        if not (np.all(tau2_new > 0) and np.all(s2_new > 0)):
            return False
        dep_new = DependenceParams.from_vector(prop[:d], tau2_new)
        lp_new, Q_new = self.target.evaluate(dep_new, ld, st, sigma2=s2_new)
        log_jac = np.sum(np.log(tau2_new) + np.log(s2_new) - np.log(st.dep.tau2) - np.log(st.sigma2))
        if not math.log(self.rng.uniform()) < lp_new - self.lp + float(log_jac):
            return False
        self.z, self.lp, self.Q, self.unit_ld = prop, lp_new, Q_new, ld
        st.dep, st.sigma2 = dep_new, s2_new
        return True

    def start_joint(self, iteration: int = 0) -> None:
        """Build the joint proposals from the scalar scales and the trace so far."""
        for block, idx in self.blocks.items():
            k = len(idx)
            scale0 = 2.38 ** 2 / k
            jp = JointProposal(np.diag(self.scale[idx] ** 2) / scale0, scale0, scale0)
            if len(self.trace) > 2 * k:
                jp = adapt_proposal([self.config.target_acceptance], jp, self.config.target_acceptance,
                                    states=self._recent(idx))
            self.joints[block] = jp
            self.history.append({"iteration": iteration, "block": block, "scale": jp.scale,
                                 "cov": jp.cov.tolist()})

    def step(self, regime: int) -> None:
        data, st, rng = self.data, self.state, self.rng
        if regime >= 2 and self.blocks and not self.joints:
            self.start_joint()
        sweep_regression(data, st, self.prior, rng)
        # the Gibbs sweep redraws sigma2, so resynchronize before the MH moves
        self.z = self._coords()
        self.lp, self.Q = self.target.evaluate(st.dep, self.unit_ld, st)
        if regime >= 2:
            for _ in range(self.config.joint_repeats):
                for block, idx in self.blocks.items():
                    prop = self.z.copy()
                    prop[idx] += self.joints[block].draw(rng)
                    self._tally(regime, block, self._attempt(prop))
            scalar_idx = self.free
        else:
            scalar_idx = range(len(self.z))
        for i in scalar_idx:
            prop = self.z.copy()
            prop[i] += self.scale[i] * rng.standard_normal()
            self._tally(regime, self.names[i], self._attempt(prop))
        # h_r must be redrawn before anything conditions on it again
        sweep_spatial(data, st, self.prior, self.engine, rng, self.Q)
        if regime < 3:
            self.trace.append(self.z.copy())

    def adapt(self, iteration: int) -> None:
        cfg = self.config
        for block, acc in self.window.items():
            if block in self.blocks:
                jp = adapt_proposal(acc, self.joints[block], cfg.target_acceptance, gain=cfg.adapt_gain,
                                    states=self._recent(self.blocks[block]))
                self.joints[block] = jp
                self.history.append({"iteration": iteration, "block": block, "scale": jp.scale,
                                     "cov": jp.cov.tolist()})
            else:
                i = self.names.index(block)
                self.scale[i] = adapt_proposal(acc, float(self.scale[i]), cfg.target_acceptance,
                                               gain=cfg.adapt_gain, initial=float(self.initial_scale[i]))
                self.history.append({"iteration": iteration, "block": block, "scale": float(self.scale[i])})
        self.window.clear()

    def log_density(self) -> float:
        return self.target.joint_log_density(self.state, self.unit_ld, self.Q)

    def acceptance(self) -> dict[str, dict[str, float]]:
        return {f"regime{r}": {b: c[0] / c[1] for b, c in per_block.items()}
                for r, per_block in sorted(self.counts.items())}


def run_chain(config: SamplerConfig, data: EnsembleDataset, prior: PriorSpec,
              chain_id: int) -> ChainOutput:
    """Run one chain through all three regimes; returns thinned regime-3 samples."""
    rng = np.random.default_rng(config.seed + chain_id)
    engine = CholeskyEngine()
    state = _initial_state(data, prior, config, rng, engine)
    start = state.dep.as_dict()
    kernel = ChainKernel(config, data, prior, state, rng, engine)
    samples: dict[str, list] = {k: [] for k in (
        "alpha", "beta_r", "beta_bar", "h_bar", "sigma2", "sigma2_b", "dep", "tau2", "field", "log_post")}
    if config.record_member_effects:
        samples["h_r"] = []

    for it in range(config.total_iters):
        regime = config.regime(it)
        if regime >= 2 and kernel.blocks and not kernel.joints:
            kernel.start_joint(it)
        kernel.step(regime)
        if regime < 3:
            if (it + 1) % config.adapt_interval == 0:
                kernel.adapt(it + 1)
        else:
            k = it - config.regime1_iters - config.regime2_iters + 1
            if k % config.thin == 0:
                _record(samples, data, state, kernel.log_density(), config)
        if (it + 1) % config.adapt_interval == 0:
            rates = {b: round(c[0] / c[1], 3) for b, c in kernel.counts.get(regime, {}).items()}
            log.info("chain %d iter %d regime %d acceptance %s log-post %.3f",
                     chain_id, it + 1, regime, rates, kernel.log_density())

    lattice, p = data.lattice, data.p
    n_cols = {"alpha": p * data.q1, "beta_r": data.m * p * data.q2,
              "beta_bar": p * data.q2, "h_bar": lattice.dim, "sigma2": p, "sigma2_b": 1,
              "dep": kernel.d, "tau2": p, "field": lattice.dim, "log_post": 1, "h_r": data.m * lattice.dim}
    out = {k: (np.asarray(v, dtype=np.float64) if v else np.zeros((0, n_cols[k])))
           for k, v in samples.items()}
    return ChainOutput(chain_id, out, kernel.acceptance(), kernel.history, start)


# ---------------------------------------------------------------------------
# diagnostics and orchestration
# ---------------------------------------------------------------------------


def gelman_rubin(chains) -> float | np.ndarray:
    """Potential scale reduction factor.

    ``chains`` has shape (k, L) or (k, L, ...) with k >= 2 chains of length
    L >= 10.  Components whose mean within-chain variance is zero return NaN.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    k, L = x.shape[:2]
    if L < 10:
        raise ValueError(f"chains must have length >= 10, got {L}")
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = L * x.mean(axis=1).var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.sqrt(((L - 1) / L * W + B / L) / W)
    R = np.where(W > 0, R, np.nan)
    return float(R) if R.ndim == 0 else R


@dataclass
class PosteriorArchive:
    """Regime-3 samples from every chain, grouped per parameter block.

    ``groups[name]`` has shape (n_chains, n_saved, n_columns).
    """

    groups: dict[str, np.ndarray]
    meta: dict

    @property
    def n_chains(self) -> int:
        return int(self.meta["n_chains"])

    @property
    def n_saved(self) -> int:
        return int(self.meta["n_saved"])

    @property
    def n_samples(self) -> int:
        return self.n_chains * self.n_saved

    def pooled(self, name: str) -> np.ndarray:
        g = self.groups[name]
        return g.reshape(-1, g.shape[-1])

    def field(self) -> np.ndarray:
        """Mean-change field samples, shape (S, n, p)."""
        return self.pooled("field").reshape(-1, self.meta["n"], self.meta["p"])

    def monitored(self) -> dict[str, np.ndarray]:
        """Per-chain trajectories of the scalars used for convergence checks."""
        out = {}
        for c, nm in enumerate(self.meta["dep_names"]):
            out[nm] = self.groups["dep"][:, :, c]
        for j in range(self.meta["p"]):
            out[f"tau2_{j + 1}"] = self.groups["tau2"][:, :, j]
            out[f"sigma2_{j + 1}"] = self.groups["sigma2"][:, :, j]
        for c in self.meta["monitored_h"]:
            out[f"h_bar[{c}]"] = self.groups["h_bar"][:, :, c]
        return out

    def psrf(self) -> dict[str, float]:
        if self.n_chains < 2 or self.n_saved < 10:
            return {}
        return {k: gelman_rubin(v) for k, v in self.monitored().items()}


def _run_chain_args(args):
    return run_chain(*args)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_ensemble_analysis(config: SamplerConfig, data: EnsembleDataset, prior: PriorSpec,
                          workers: int | None = None) -> PosteriorArchive:
    """Run ``config.n_chains`` independent chains and pool their regime-3 samples."""
    workers = _workers() if workers is None else workers
    jobs = [(config, data, prior, c) for c in range(config.n_chains)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outputs = list(pool.map(_run_chain_args, jobs))
    else:
        outputs = [run_chain(*job) for job in jobs]

    groups = {k: np.stack([o.samples[k] for o in outputs]) for k in outputs[0].samples}
    mon_rng = np.random.default_rng(config.seed)
    n_mon = min(config.n_monitored_h, data.lattice.dim)
    monitored_h = sorted(int(i) for i in mon_rng.choice(data.lattice.dim, size=n_mon, replace=False))
    meta = {
        "nx": data.lattice.grid.nx,
        "ny": data.lattice.grid.ny,
        "n": data.n,
        "p": data.p,
        "m": data.m,
        "q1": data.q1,
        "q2": data.q2,
        "variable_names": list(data.variable_names),
        "dep_names": param_names(data.p),
        "n_chains": config.n_chains,
        "n_saved": int(groups["dep"].shape[1]),
        "seed": config.seed,
        "monitored_h": monitored_h,
        "acceptance": {str(o.chain_id): o.acceptance_log for o in outputs},
        "starts": {str(o.chain_id): o.start for o in outputs},
        "warnings": [],
    }
    archive = PosteriorArchive(groups, meta)
    psrf = archive.psrf()
    meta["psrf"] = {k: (None if not np.isfinite(v) else float(v)) for k, v in psrf.items()}
    bad = sorted(k for k, v in psrf.items() if not v < config.psrf_threshold)
    if bad:
        msg = f"PSRF >= {config.psrf_threshold} (or undefined) for: {', '.join(bad)}"
        log.warning(msg)
        meta["warnings"].append(msg)
    return archive
