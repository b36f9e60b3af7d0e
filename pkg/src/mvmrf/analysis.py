"""Decision products computed from posterior samples of the mean-change field.

Every function takes either a :class:`~mvmrf.sampler.PosteriorArchive` or a
sample array of shape (S, n, p): S posterior draws of the p-variate field
``X1 alpha + X2 beta_bar + h_bar`` at each of the n grid boxes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mvmrf.sampler import PosteriorArchive

log = logging.getLogger(__name__)

QUARTILE_EDGES = (25.0, 50.0, 75.0)


def _field(samples) -> np.ndarray:
    x = samples.field() if isinstance(samples, PosteriorArchive) else np.asarray(samples, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"field samples must have shape (S, n, p), got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("archive holds no samples")
    return x


def _threshold(values: np.ndarray, threshold) -> float:
    if isinstance(threshold, str):
        if threshold != "median":
            raise ValueError(f"unknown threshold rule {threshold!r}")
        return float(np.median(values))
    return float(threshold)


def _event(values: np.ndarray, direction: str, thr: float) -> np.ndarray:
    if direction == "above":
        return values > thr
    if direction == "below":
        return values < thr
    raise ValueError(f"direction must be 'above' or 'below', got {direction!r}")


def pointwise_probability(samples, variable: int, direction: str, threshold="median") -> np.ndarray:
    """Per-box fraction of samples strictly above/below ``threshold``.

    ``threshold="median"`` uses the median over all samples and all boxes of
    that variable.
    """
    x = _field(samples)[:, :, variable]
    return _event(x, direction, _threshold(x, threshold)).mean(axis=0)


def joint_probability(samples, conditions: Sequence[tuple[int, str, object]]) -> np.ndarray:
    """Per-box fraction of samples meeting every ``(variable, direction, threshold)``."""
    x = _field(samples)
    if not conditions:
        raise ValueError("joint_probability needs at least one condition")
    hit = np.ones(x.shape[:2], dtype=bool)
    for var, direction, threshold in conditions:
        v = x[:, :, var]
        hit &= _event(v, direction, _threshold(v, threshold))
    return hit.mean(axis=0)


def quartile_bins(values: np.ndarray, scope: str = "per-box") -> np.ndarray:
    """Quartile index 0..3 of each sample; ``values`` has shape (S, n)."""
    if scope == "per-box":
        edges = np.percentile(values, QUARTILE_EDGES, axis=0)  # (3, n)
        return (values[None] > edges[:, None, :]).sum(axis=0)
    if scope == "global":
        edges = np.percentile(values, QUARTILE_EDGES)
        return np.searchsorted(edges, values, side="left")
    raise ValueError(f"scope must be 'per-box' or 'global', got {scope!r}")


def conditional_quartile_probability(samples, cond_var: int, cond_quartile: int, target_var: int,
                                     target_event: str = "lower", scope: str = "per-box"
                                     ) -> tuple[np.ndarray, np.ndarray]:
    """P(target in its lower/upper quartile | cond variable in quartile ``cond_quartile``).

    Returns (probability, bin count) per box; boxes with an empty
    conditioning bin get NaN.
    """
    if cond_quartile not in (1, 2, 3, 4):
        raise ValueError("cond_quartile must be 1, 2, 3 or 4")
    if target_event not in ("lower", "upper"):
        raise ValueError("target_event must be 'lower' or 'upper'")
    x = _field(samples)
    in_bin = quartile_bins(x[:, :, cond_var], scope) == cond_quartile - 1
    tq = quartile_bins(x[:, :, target_var], scope)
    hit = tq == (0 if target_event == "lower" else 3)
    counts = in_bin.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(counts > 0, (hit & in_bin).sum(axis=0) / counts, np.nan)
    return prob, counts


# ---------------------------------------------------------------------------
# per-box Gaussian summaries and clustering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridBoxPosterior:
    location: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def degenerate(self) -> bool:
        eig = np.linalg.eigvalsh(self.cov)
        return not eig.min() > 1e-12 * max(eig.max(), 1e-300)


def fit_gridbox_posteriors(samples) -> list[GridBoxPosterior]:
    x = _field(samples)
    if x.shape[0] < 2:
        raise ValueError("at least two samples are needed for a covariance")
    mean = x.mean(axis=0)
    dev = x - mean
    cov = np.einsum("snj,snl->njl", dev, dev) / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return [GridBoxPosterior(i, mean[i], cov[i]) for i in range(x.shape[1])]


def _kl_terms(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} covariance is not positive-definite") from exc
    return np.linalg.inv(cov)


def symmetrized_kl(mean1, cov1, mean2, cov2) -> float:
    """Jeffreys divergence KL(g1 || g2) + KL(g2 || g1) between two Gaussians."""
    m1, m2 = np.atleast_1d(np.asarray(mean1, float)), np.atleast_1d(np.asarray(mean2, float))
    c1, c2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    i1, i2 = _kl_terms(c1, "first"), _kl_terms(c2, "second")
    dm = m1 - m2
    k = len(m1)
    tr = np.trace(i2 @ c1) + np.trace(i1 @ c2) - 2 * k
    return float(0.5 * tr + 0.5 * dm @ (i1 + i2) @ dm)


def pairwise_symmetrized_kl(posteriors: Sequence[GridBoxPosterior], block: int = 512) -> np.ndarray:
    """Dense (n, n) matrix of Jeffreys divergences between box posteriors."""
    for g in posteriors:
        if g.degenerate:
            raise ValueError(f"grid box {g.location} has a degenerate posterior covariance")
    mu = np.stack([g.mean for g in posteriors])
    cov = np.stack([g.cov for g in posteriors])
    inv = np.linalg.inv(cov)
    n, k = mu.shape
    out = np.empty((n, n))
    for a in range(0, n, block):
        sl = slice(a, min(a + block, n))
        # tr(inv_j cov_i) + tr(inv_i cov_j)
        tr = np.einsum("jab,iba->ij", inv, cov[sl]) + np.einsum("iab,jba->ij", inv[sl], cov)
        dm = mu[sl, None, :] - mu[None, :, :]
        w = inv[sl, None] + inv[None, :]
        quad = np.einsum("ija,ijab,ijb->ij", dm, w, dm)
        out[sl] = 0.5 * (tr - 2 * k) + 0.5 * quad
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


@dataclass(frozen=True)
class ClusterTree:
    """Merge sequence; row t = (a, b, distance, size) and creates cluster n + t.

    Leaves are 0..n-1, the same convention as ``scipy.cluster.hierarchy``.
    """

    merges: np.ndarray
    n_leaves: int

    def cut(self, k: int) -> np.ndarray:
        """Labels after the first n - k merges, numbered by lowest member box."""
        n = self.n_leaves
        if not 1 <= k <= n:
            raise ValueError(f"k must lie in [1, {n}]")
        parent = np.arange(2 * n - 1)

        def root(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for t in range(n - k):
            a, b = int(self.merges[t, 0]), int(self.merges[t, 1])
            parent[root(a)] = n + t
            parent[root(b)] = n + t
        roots = np.array([root(i) for i in range(n)])
        _, first = np.unique(roots, return_index=True)
        order = {roots[i]: lab for lab, i in enumerate(sorted(first))}
        return np.array([order[r] for r in roots])


def agglomerate(dist: np.ndarray, linkage: str = "average") -> ClusterTree:
    """Lance-Williams agglomeration of a symmetric distance matrix.

    Ties are broken towards the lowest (i, j) pair of current cluster slots,
    where a merged cluster takes the lower slot of its two parts.
    """
    if linkage not in ("average", "complete"):
        raise ValueError("linkage must be 'average' or 'complete'")
    D = np.array(dist, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n == 1:
        return ClusterTree(np.zeros((0, 4)), 1)
    active = np.ones(n, dtype=bool)
    size = np.ones(n)
    cid = np.arange(n)
    D[np.tril_indices(n)] = np.inf  # only i < j is used

    row_min = np.full(n, np.inf)
    row_arg = np.full(n, -1)

    def refresh(i: int) -> None:
        if i < n - 1:
            j = int(np.argmin(D[i, i + 1:])) + i + 1
            row_min[i], row_arg[i] = D[i, j], j
        else:
            row_min[i], row_arg[i] = np.inf, -1

    for i in range(n):
        refresh(i)
    merges = np.zeros((n - 1, 4))
    for t in range(n - 1):
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        dij = D[i, j]
        merges[t] = (min(cid[i], cid[j]), max(cid[i], cid[j]), dij, size[i] + size[j])
        # distances from every other slot k to the merged cluster, stored in slot i
        dki = np.minimum(D[:, i], D[i, :])  # symmetric view: D[k,i] for k<i, D[i,k] for k>i
        dkj = np.minimum(D[:, j], D[j, :])
        if linkage == "average":
            new = (size[i] * dki + size[j] * dkj) / (size[i] + size[j])
        else:
            new = np.maximum(dki, dkj)
        active[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        new[~active] = np.inf
        new[i] = np.inf
        D[:i, i] = new[:i]
        D[i, i + 1:] = new[i + 1:]
        size[i] += size[j]
        cid[i] = n + t
        row_min[j], row_arg[j] = np.inf, -1
        refresh(i)
        for k in range(i):
            if not active[k]:
                continue
            if row_arg[k] in (i, j):
                refresh(k)
            elif D[k, i] < row_min[k] or (D[k, i] == row_min[k] and i < row_arg[k]):
                row_min[k], row_arg[k] = D[k, i], i
        for k in range(i + 1, j):
            if active[k] and row_arg[k] == j:
                refresh(k)
    return ClusterTree(merges, n)


def hierarchical_cluster(posteriors: Sequence[GridBoxPosterior], linkage: str = "average",
                         k: int = 2) -> tuple[np.ndarray, ClusterTree]:
    """Cluster grid boxes on symmetrized-KL distance; returns labels (0..k-1) and the tree."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(posteriors):
        raise ValueError(f"k = {k} exceeds the number of grid boxes ({len(posteriors)})")
    tree = agglomerate(pairwise_symmetrized_kl(posteriors), linkage)
    return tree.cut(k), tree


def cluster_boxes(posteriors: Sequence[GridBoxPosterior], linkage: str, k: int
                  ) -> tuple[np.ndarray, ClusterTree | None, list[str]]:
    """Like :func:`hierarchical_cluster` but drops degenerate boxes (label -1) with a warning."""
    keep = [g for g in posteriors if not g.degenerate]
    dropped = [g.location for g in posteriors if g.degenerate]
    warnings = []
    if dropped:
        msg = f"{len(dropped)} grid boxes with degenerate posterior covariance excluded from clustering"
        log.warning(msg)
        warnings.append(msg)
    labels = np.full(len(posteriors), -1)
    if not keep:
        return labels, None, warnings
    sub, tree = hierarchical_cluster(keep, linkage, min(k, len(keep)))
    for g, lab in zip(keep, sub):
        labels[g.location] = lab
    return labels, tree, warnings


def chi2_2df_quantile(level: float) -> float:
    return -2.0 * math.log1p(-level)


def contour_ellipse(post: GridBoxPosterior, level: float = 0.95, resolution: int = 64) -> np.ndarray:
    """Points of {x : (x - mean)' cov^{-1} (x - mean) = q}, q the chi-square(2) quantile.

    Returns ``resolution`` points at equally spaced angles; the polyline closes
    back onto the first point.
    """
    mean, cov = np.asarray(post.mean, float), np.asarray(post.cov, float)
    if mean.shape != (2,):
        raise NotImplementedError("contours are only defined for two variables")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"grid box {post.location} covariance is not positive-definite") from exc
    angle = 2.0 * np.pi * np.arange(resolution) / resolution
    unit = np.stack([np.cos(angle), np.sin(angle)])
    return mean + math.sqrt(chi2_2df_quantile(level)) * (L @ unit).T
