import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpmbm.reduction import (MergeParams, bernoulli_kld, collapse_to_pmb, divergent_tracks, gaussian_kld,
                             hypothesis_weights, inter_track_swap, intra_track_merge, merge_bernoullis)
from cpmbm.rfs import (ABSENT, BernoulliComponent, Cluster, ClusteredPmbm, GaussianDensity, PoissonIntensity, Track,
                       evaluate_set_density)
from oracles import random_spd


def bern(r, mean, var=1.0):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return BernoulliComponent(r, GaussianDensity(mean, var * np.eye(mean.size)))


def test_kld_examples():
    assert bernoulli_kld(bern(0.3, [1.0, 2.0]), bern(0.3, [1.0, 2.0])) == 0.0
    assert bernoulli_kld(bern(0.5, [0.0]), bern(0.25, [0.0])) == pytest.approx(
        0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-12)
    assert bernoulli_kld(bern(1.0, [0.0]), bern(1.0, [1.0])) == pytest.approx(0.5)


def test_kld_degenerate_existence():
    assert bernoulli_kld(bern(0.5, [0.0]), bern(1.0, [0.0])) == math.inf
    assert bernoulli_kld(bern(0.0, [0.0]), bern(0.0, [5.0])) == 0.0
    assert math.isfinite(bernoulli_kld(bern(1.0, [0.0]), bern(0.5, [3.0])))


def test_kld_singular_covariance_raises():
    f2 = BernoulliComponent(0.5, GaussianDensity([0.0, 0.0], np.zeros((2, 2))))
    with pytest.raises(np.linalg.LinAlgError):
        bernoulli_kld(bern(0.5, [0.0, 0.0]), f2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kld_nonnegative(seed):
    g = np.random.default_rng(seed)
    f1 = BernoulliComponent(float(g.uniform(0, 1)), GaussianDensity(g.standard_normal(3), random_spd(g, 3)))
    f2 = BernoulliComponent(float(g.uniform(0.01, 0.99)), GaussianDensity(g.standard_normal(3), random_spd(g, 3)))
    assert bernoulli_kld(f1, f2) >= 0.0
    assert bernoulli_kld(f1, f1) == pytest.approx(0.0, abs=1e-12)


def test_gaussian_kld_matches_univariate_formula():
    assert gaussian_kld([0.0], [[2.0]], [1.0], [[3.0]]) == pytest.approx(
        0.5 * (2 / 3 - math.log(2 / 3) - 1 + 1 / 3))


def test_merge_examples():
    W, c = merge_bernoullis([(1.0, bern(0.4, [1.0, 2.0]))])
    assert W == 1.0 and c.r == 0.4
    np.testing.assert_allclose(c.density.mean, [1.0, 2.0])
    W, c = merge_bernoullis([(0.5, bern(1.0, [0.0])), (0.5, bern(1.0, [2.0]))])
    assert (W, c.r) == (1.0, 1.0)
    assert c.density.mean[0] == pytest.approx(1.0) and c.density.cov[0, 0] == pytest.approx(2.0)
    _, c = merge_bernoullis([(0.5, bern(0.2, [0.0])), (0.5, bern(0.6, [0.0]))])
    assert c.r == pytest.approx(0.4)


def test_merge_rejects_zero_weight():
    with pytest.raises(ValueError):
        merge_bernoullis([(0.0, bern(0.5, [0.0]))])
    with pytest.raises(ValueError):
        merge_bernoullis([])


def two_hyp_track(r, means, var=1.0, assoc=None):
    means = np.asarray(means, dtype=float).reshape(len(r), -1)
    n = means.shape[1]
    return Track(0, r, means, var * np.tile(np.eye(n), (len(r), 1, 1)), assoc)


def test_intra_merge_identity_when_far_apart():
    tr = two_hyp_track([0.9, 0.8], [[0.0], [10.0]], assoc=[[3, 0], [3, 1]])
    cl = Cluster((0,), [0.6, 0.4], [[0], [1]])
    out, cl2 = intra_track_merge(tr, cl, MergeParams(), time=3)
    assert out is tr and cl2 is cl


def test_intra_merge_same_measurement():
    tr = two_hyp_track([1.0, 1.0], [[0.0], [10.0]], assoc=[[3, 5], [3, 5]])
    cl = Cluster((0, 1), [0.6, 0.4], [[0, 0], [1, 0]])
    out, cl2 = intra_track_merge(tr, cl, MergeParams(), time=3)
    assert len(out) == 1 and len(cl2) == 1
    assert out.means[0, 0] == pytest.approx(4.0)
    assert cl2.weights[0] == pytest.approx(1.0)


def test_intra_merge_identical_hypotheses_coalesce_globals():
    tr = two_hyp_track([0.7, 0.7], [[1.0], [1.0]], assoc=[[2, 0], [2, 1]])
    cl = Cluster((0,), [0.55, 0.45], [[0], [1]])
    out, cl2 = intra_track_merge(tr, cl, MergeParams(), time=3)
    assert len(out) == 1
    assert cl2.choices.tolist() == [[0]] and cl2.weights.tolist() == [1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_intra_merge_never_adds_globals(seed):
    g = np.random.default_rng(seed)
    h = int(g.integers(1, 6))
    tr = Track(0, g.uniform(0.05, 1, h), g.normal(0, 0.5, (h, 2)), np.tile(np.eye(2), (h, 1, 1)),
               np.column_stack([np.full(h, 4), g.integers(-1, 3, h)]))
    G = int(g.integers(1, 8))
    cl = Cluster((0, 1), np.full(G, 1 / G), np.column_stack([g.integers(0, h, G), g.integers(0, 2, G)]))
    out, cl2 = intra_track_merge(tr, cl, MergeParams(gamma_m=0.5), time=4)
    assert len(cl2) <= len(cl)
    assert len(out) <= h
    assert cl2.weights.sum() == pytest.approx(1.0)
    # expected existence mass is conserved
    before = (hypothesis_weights(cl, tr) * tr.r).sum()
    after = (hypothesis_weights(cl2, out) * out.r).sum()
    assert after == pytest.approx(before)


def crossing_cluster():
    """Two tracks whose hypotheses ended up in two separated regions."""
    t1 = Track(1, [0.9, 0.8], [[0, 0, 0, 0], [100, 0, 0, 0]], np.tile(np.eye(4), (2, 1, 1)))
    t2 = Track(2, [0.85, 0.7], [[101, 0, 1, 0], [1, 0, 1, 0]], np.tile(np.eye(4), (2, 1, 1)))
    cl = Cluster((1, 2), [0.7, 0.3], [[0, 0], [1, 1]])
    return {1: t1, 2: t2}, cl


def test_swap_reallocates_hypotheses_to_regions():
    tracks, cl = crossing_cluster()
    out, cl2 = inter_track_swap(tracks, cl, MergeParams(swap=True))
    # every hypothesis of track 1 is now near the origin, every hypothesis of track 2 near x = 100
    assert np.all(out[1].means[:, 0] < 50) and np.all(out[2].means[:, 0] > 50)
    assert divergent_tracks(out, cl2, 50.0) == []


def test_swap_identity_without_divergence():
    t1 = Track(1, [0.9, 0.8], [[0, 0, 0, 0], [1, 0, 0, 0]], np.tile(np.eye(4), (2, 1, 1)))
    t2 = Track(2, [0.9], [[30, 0, 0, 0]], np.eye(4)[None])
    cl = Cluster((1, 2), [0.5, 0.5], [[0, 0], [1, 0]])
    out, cl2 = inter_track_swap({1: t1, 2: t2}, cl, MergeParams(swap=True))
    assert cl2 is cl and out[1] is t1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_swap_preserves_set_density(seed):
    g = np.random.default_rng(seed)
    tracks = {}
    for t in (1, 2):
        means = np.zeros((2, 4))
        means[:, [0, 2]] = g.normal(0, 0.5, (2, 2)) + np.array([[0.0, 0.0], [30.0, 0.0]])[:: 1 if t == 1 else -1]
        tracks[t] = Track(t, g.uniform(0.2, 0.95, 2), means, np.tile(np.eye(4), (2, 1, 1)))
    w = g.uniform(0.2, 1, 2)
    cl = Cluster((1, 2), w / w.sum(), [[0, 0], [1, 1]])
    ppp = PoissonIntensity([0.1], np.zeros((1, 4)), 100 * np.eye(4)[None])
    pmbm = ClusteredPmbm(ppp, tracks, (cl,))
    out, cl2 = inter_track_swap(tracks, cl, MergeParams(swap=True))
    swapped = ClusteredPmbm(ppp, out, (cl2,))
    for _ in range(10):
        X = [m for m in g.normal(0, 1, (int(g.integers(0, 3)), 4)) + [15, 0, 0, 0]]
        X = [x * np.array([2, 0.1, 1, 0.1]) for x in X]
        a, b = evaluate_set_density(pmbm, X), evaluate_set_density(swapped, X)
        assert b == pytest.approx(a, rel=1e-12, abs=1e-300)


def test_collapse_examples():
    tr = two_hyp_track([1.0, 1.0], [[0.0], [2.0]])
    pmbm = ClusteredPmbm(PoissonIntensity.empty(1), {0: tr}, (Cluster((0,), [0.5, 0.5], [[0], [1]]),))
    out = collapse_to_pmb(pmbm)
    t = out.tracks[0]
    assert len(t) == 1 and t.r[0] == pytest.approx(1.0)
    assert t.means[0, 0] == pytest.approx(1.0) and t.covs[0, 0, 0] == pytest.approx(2.0)
    again = collapse_to_pmb(out)
    assert again.tracks[0] is out.tracks[0]


def test_collapse_conserves_expected_cardinality():
    g = np.random.default_rng(3)
    tracks = {t: Track(t, g.uniform(0.1, 1, 3), g.standard_normal((3, 2)), np.tile(np.eye(2), (3, 1, 1))) for t in range(3)}
    choices = np.array([[0, 1, ABSENT], [1, 2, 0], [2, ABSENT, 1]])
    w = np.array([0.5, 0.3, 0.2])
    pmbm = ClusteredPmbm(PoissonIntensity.empty(2), tracks, (Cluster((0, 1, 2), w, choices),))
    before = sum(wg * sum(tracks[t].r[a] for t, a in zip(range(3), row) if a != ABSENT) for wg, row in zip(w, choices))
    out = collapse_to_pmb(pmbm)
    assert len(out.clusters[0]) == 1
    assert sum(out.tracks[t].r[0] for t in range(3)) == pytest.approx(before)
