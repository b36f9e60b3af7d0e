import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.cluster.hierarchy import linkage as scipy_linkage
from scipy.spatial.distance import squareform
from scipy.stats import chi2

from mvmrf.analysis import (
    GridBoxPosterior,
    agglomerate,
    chi2_2df_quantile,
    cluster_boxes,
    conditional_quartile_probability,
    contour_ellipse,
    fit_gridbox_posteriors,
    hierarchical_cluster,
    joint_probability,
    pairwise_symmetrized_kl,
    pointwise_probability,
    quartile_bins,
    symmetrized_kl,
)


def spd(rng, k):
    A = rng.standard_normal((k, k))
    return A @ A.T + k * np.eye(k) * 0.1


def test_pointwise_trivial_cases(rng):
    x = rng.uniform(1, 2, size=(50, 4, 1))
    np.testing.assert_array_equal(pointwise_probability(x, 0, "above", 0.0), 1.0)
    np.testing.assert_array_equal(pointwise_probability(x, 0, "above", math.inf), 0.0)


def test_pointwise_standard_normal(rng):
    x = rng.standard_normal((1000, 20, 1))
    prob = pointwise_probability(x, 0, "above", 0.0)
    assert np.all(np.abs(prob - 0.5) < 0.05)


def test_empty_archive_rejected():
    with pytest.raises(ValueError):
        pointwise_probability(np.zeros((0, 3, 2)), 0, "above")
    with pytest.raises(ValueError):
        joint_probability(np.zeros((0, 3, 2)), [(0, "above", "median")])


def test_bad_direction(rng):
    with pytest.raises(ValueError):
        pointwise_probability(rng.standard_normal((5, 2, 1)), 0, "sideways", 0.0)


def test_joint_independent_is_product(rng):
    x = rng.standard_normal((20_000, 3, 2))
    prob = joint_probability(x, [(0, "above", "median"), (1, "above", "median")])
    assert np.all(np.abs(prob - 0.25) < 0.02)


def test_joint_impossible_condition(rng):
    x = rng.standard_normal((200, 3, 2))
    assert np.all(joint_probability(x, [(0, "above", "median"), (1, "above", 1e9)]) == 0)


def test_joint_anticorrelated_pair(rng):
    a = rng.standard_normal((10_000, 4))
    x = np.stack([a, -a], axis=2)
    prob = joint_probability(x, [(0, "above", "median"), (1, "below", "median")])
    assert np.all(np.abs(prob - 0.5) < 0.03)


@given(st.integers(0, 2**32 - 1), st.floats(-1, 1), st.floats(-1, 1))
def test_joint_bounded_by_marginals(seed, t0, t1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((200, 5, 2)) @ np.array([[1.0, 0.6], [0.0, 0.8]])
    joint = joint_probability(x, [(0, "above", t0), (1, "below", t1)])
    m0 = pointwise_probability(x, 0, "above", t0)
    m1 = pointwise_probability(x, 1, "below", t1)
    assert np.all((joint >= 0) & (joint <= np.minimum(m0, m1)))


def test_conditional_independent_matches_unconditional(rng):
    x = rng.standard_normal((40_000, 3, 2))
    for q in (1, 2, 3, 4):
        prob, counts = conditional_quartile_probability(x, 0, q, 1, "lower")
        # each bin holds about 10000 samples, binomial sd ~ 0.0043
        assert np.all(np.abs(prob - 0.25) < 0.02)


def test_conditional_self_top_quartile(rng):
    x = rng.standard_normal((400, 3, 1))
    prob, _ = conditional_quartile_probability(x, 0, 4, 0, "upper")
    np.testing.assert_array_equal(prob, 1.0)


def test_conditional_monotone_under_negative_correlation(rng):
    cov = np.array([[1.0, -0.9], [-0.9, 1.0]])
    x = rng.multivariate_normal([0, 0], cov, size=(20_000, 2))
    probs = [conditional_quartile_probability(x, 0, q, 1, "upper")[0] for q in (1, 2, 3, 4)]
    probs = np.array(probs)
    assert np.all(np.diff(probs, axis=0) < 0)
    probs_low = np.array([conditional_quartile_probability(x, 0, q, 1, "lower")[0] for q in (1, 2, 3, 4)])
    assert np.all(np.diff(probs_low, axis=0) > 0)


@pytest.mark.parametrize("scope", ["per-box", "global"])
def test_quartile_bins_partition(scope, rng):
    x = rng.standard_normal((333, 5, 2))
    total = sum(conditional_quartile_probability(x, 0, q, 1, "lower", scope)[1] for q in (1, 2, 3, 4))
    np.testing.assert_array_equal(total, 333)
    bins = quartile_bins(x[:, :, 0], scope)
    assert bins.min() >= 0 and bins.max() <= 3


def test_conditional_empty_bin_is_nan():
    x = np.zeros((10, 2, 2))
    prob, counts = conditional_quartile_probability(x, 0, 4, 1, "lower")
    assert np.all(counts == 0) and np.all(np.isnan(prob))


def test_kl_golden_values():
    I1 = np.eye(1)
    assert symmetrized_kl([0.0], I1, [0.0], I1) == 0.0
    assert symmetrized_kl([0.0], I1, [1.0], I1) == pytest.approx(1.0, rel=1e-15)
    # both directions by hand: 0.5 (2 log 2 - 1) + 0.5 (2 - 2 log 2) = 0.5
    assert symmetrized_kl(np.zeros(2), np.eye(2), np.zeros(2), 2 * np.eye(2)) == pytest.approx(0.5, rel=1e-14)


def directed_kl(m1, S1, m2, S2):
    k = len(m1)
    S2i = np.linalg.inv(S2)
    d = np.asarray(m2) - np.asarray(m1)
    return 0.5 * (np.trace(S2i @ S1) + d @ S2i @ d - k + np.linalg.slogdet(S2)[1] - np.linalg.slogdet(S1)[1])


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_kl_properties(seed, k):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.standard_normal(k), rng.standard_normal(k)
    S1, S2 = spd(rng, k), spd(rng, k)
    d = symmetrized_kl(m1, S1, m2, S2)
    oracle = directed_kl(m1, S1, m2, S2) + directed_kl(m2, S2, m1, S1)
    assert d == pytest.approx(oracle, rel=1e-9, abs=1e-12)
    assert d == pytest.approx(symmetrized_kl(m2, S2, m1, S1), rel=1e-12)
    assert d >= 0
    A = spd(rng, k) + rng.standard_normal((k, k)) * 0.1
    b = rng.standard_normal(k)
    moved = symmetrized_kl(A @ m1 + b, A @ S1 @ A.T, A @ m2 + b, A @ S2 @ A.T)
    assert moved == pytest.approx(d, rel=1e-8, abs=1e-8)


def test_kl_singular_covariance():
    with pytest.raises(ValueError):
        symmetrized_kl(np.zeros(2), np.zeros((2, 2)), np.zeros(2), np.eye(2))


def test_pairwise_matches_scalar(rng):
    posts = [GridBoxPosterior(i, rng.standard_normal(2), spd(rng, 2)) for i in range(7)]
    D = pairwise_symmetrized_kl(posts, block=3)
    for a in range(7):
        for b in range(7):
            expected = symmetrized_kl(posts[a].mean, posts[a].cov, posts[b].mean, posts[b].cov)
            assert D[a, b] == pytest.approx(expected, rel=1e-10, abs=1e-12)
    assert np.all(np.diag(D) == 0)


def test_fit_gridbox_posteriors(rng):
    x = rng.standard_normal((500, 3, 2))
    posts = fit_gridbox_posteriors(x)
    np.testing.assert_allclose(posts[1].mean, x[:, 1].mean(axis=0))
    np.testing.assert_allclose(posts[1].cov, np.cov(x[:, 1], rowvar=False), rtol=1e-12)
    with pytest.raises(ValueError):
        fit_gridbox_posteriors(x[:1])


def test_constant_archive_degenerate():
    posts = fit_gridbox_posteriors(np.ones((10, 2, 2)))
    assert all(p.degenerate for p in posts)
    assert np.all(posts[0].cov == 0)
    with pytest.raises(ValueError, match="box"):
        hierarchical_cluster(posts, k=1)


def test_perfect_anticorrelation(rng):
    a = rng.standard_normal(100)
    posts = fit_gridbox_posteriors(np.stack([a, -a], axis=1)[:, None, :])
    c = posts[0].cov
    assert c[0, 1] == pytest.approx(-math.sqrt(c[0, 0] * c[1, 1]), rel=1e-12)


def test_gridbox_moments_converge(rng):
    mean, cov = np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 0.5]])
    errs = []
    for N in (1000, 16_000):
        x = rng.multivariate_normal(mean, cov, size=(N, 1))
        errs.append(np.abs(fit_gridbox_posteriors(x)[0].mean - mean).max())
    # 1/sqrt(N) rate: 16x the samples, about 4x smaller error
    assert errs[1] < errs[0]
    assert errs[1] < 4 * math.sqrt(2.0 / 16_000)


def planted(rng, n_each=6):
    a = [GridBoxPosterior(i, rng.normal(0, 0.1, 2), np.eye(2) * 0.5) for i in range(n_each)]
    b = [GridBoxPosterior(n_each + i, rng.normal(20, 0.1, 2), np.eye(2) * 0.5) for i in range(n_each)]
    posts = a + b
    order = rng.permutation(len(posts))
    return [GridBoxPosterior(i, posts[j].mean, posts[j].cov) for i, j in enumerate(order)], order < n_each


@pytest.mark.parametrize("linkage", ["average", "complete"])
def test_planted_two_clusters(linkage, rng):
    posts, truth = planted(rng)
    labels, tree = hierarchical_cluster(posts, linkage, k=2)
    assert len(set(labels)) == 2
    assert np.array_equal(labels == labels[0], truth == truth[0])


def test_k_equals_n(rng):
    posts, _ = planted(rng, 3)
    labels, _ = hierarchical_cluster(posts, k=6)
    assert sorted(labels) == list(range(6))


def test_identical_boxes_tie_break():
    posts = [GridBoxPosterior(i, np.zeros(2), np.eye(2)) for i in range(5)]
    labels, tree = hierarchical_cluster(posts, k=3)
    assert np.all(tree.merges[:, 2] == 0)
    again, _ = hierarchical_cluster(posts, k=3)
    assert np.array_equal(labels, again)


@pytest.mark.parametrize("linkage", ["average", "complete"])
@pytest.mark.parametrize("seed", range(5))
def test_agglomerate_matches_scipy(linkage, seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((25, 3))
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    ours = agglomerate(D, linkage).merges
    ref = scipy_linkage(squareform(D, checks=False), method=linkage)
    np.testing.assert_allclose(ours[:, 2], ref[:, 2], rtol=1e-12)
    np.testing.assert_array_equal(ours[:, 3], ref[:, 3])


@given(st.integers(0, 2**32 - 1))
def test_labels_invariant_to_input_order(seed):
    rng = np.random.default_rng(seed)
    posts, _ = planted(rng, 4)
    labels, _ = hierarchical_cluster(posts, k=3)
    perm = rng.permutation(len(posts))
    shuffled = [GridBoxPosterior(i, posts[j].mean, posts[j].cov) for i, j in enumerate(perm)]
    relabeled, _ = hierarchical_cluster(shuffled, k=3)
    # same partition, whatever the numbering
    same = labels[:, None] == labels[None]
    same_shuffled = relabeled[:, None] == relabeled[None]
    assert np.array_equal(same[np.ix_(perm, perm)], same_shuffled)


def test_cluster_boxes_drops_degenerate(rng):
    posts, _ = planted(rng, 3)
    posts[2] = GridBoxPosterior(2, np.zeros(2), np.zeros((2, 2)))
    labels, tree, warnings = cluster_boxes(posts, "average", 2)
    assert labels[2] == -1 and warnings
    assert set(labels[labels >= 0]) == {0, 1}


def test_contour_radius_identity():
    assert chi2_2df_quantile(0.95) == pytest.approx(chi2.ppf(0.95, 2), rel=1e-12)
    pts = contour_ellipse(GridBoxPosterior(0, np.zeros(2), np.eye(2)), 0.95, 64)
    r = np.hypot(pts[:, 0], pts[:, 1])
    np.testing.assert_allclose(r, 2.4477, atol=1e-3)
    np.testing.assert_allclose(r, math.sqrt(chi2.ppf(0.95, 2)), rtol=1e-12)


def test_contour_unit_circle():
    level = 1 - math.exp(-0.5)
    pts = contour_ellipse(GridBoxPosterior(0, np.array([1.0, 2.0]), np.eye(2)), level, 16)
    np.testing.assert_allclose(np.hypot(pts[:, 0] - 1, pts[:, 1] - 2), 1.0, rtol=1e-12)


def test_contour_axis_ratio():
    pts = contour_ellipse(GridBoxPosterior(0, np.zeros(2), np.diag([4.0, 1.0])), 0.9, 400)
    assert np.abs(pts[:, 0]).max() / np.abs(pts[:, 1]).max() == pytest.approx(2.0, rel=1e-4)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.99))
def test_contour_on_quadratic_level_set(seed, level):
    rng = np.random.default_rng(seed)
    post = GridBoxPosterior(0, rng.standard_normal(2), spd(rng, 2))
    pts = contour_ellipse(post, level, 32)
    d = pts - post.mean
    q = np.einsum("si,ij,sj->s", d, np.linalg.inv(post.cov), d)
    np.testing.assert_allclose(q, chi2.ppf(level, 2), rtol=1e-10)


def test_contour_errors():
    with pytest.raises(NotImplementedError):
        contour_ellipse(GridBoxPosterior(0, np.zeros(3), np.eye(3)))
    with pytest.raises(ValueError):
        contour_ellipse(GridBoxPosterior(0, np.zeros(2), np.zeros((2, 2))))
