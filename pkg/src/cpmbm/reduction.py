"""Bernoulli mixture reduction: intra-track merging, inter-track swapping and PMB collapse.

All functions act on a cluster slice, i.e. the tracks of one cluster (a mapping
from id to :class:`Track`) plus its :class:`Cluster` of global hypotheses.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2, vq
from scipy.special import rel_entr

from .rfs import (ABSENT, BernoulliComponent, Cluster, ClusteredPmbm, GaussianDensity, Track, coalesce, compact,
                  sort_globals, symmetrize)

POSITION_AXES = (0, 2)
KMEANS_MAX_ITER = 50


@dataclass(frozen=True)
class MergeParams:
    gamma_m: float = 0.25
    gamma_s: float = 50.0
    swap: bool = False

    def __post_init__(self):
        if self.gamma_m <= 0 or self.gamma_s <= 0:
            raise ValueError("merge and swap thresholds must be positive")


def gaussian_kld(mu1, P1, mu2, P2) -> float:
    """KL divergence D(N(mu1, P1) || N(mu2, P2))."""
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    P1, P2 = np.atleast_2d(P1), np.atleast_2d(P2)
    chol2 = np.linalg.cholesky(P2)
    A = np.linalg.solve(chol2, P1)
    trace = np.trace(np.linalg.solve(chol2.T, A))
    d = np.linalg.solve(chol2, mu2 - mu1)
    _, logdet1 = np.linalg.slogdet(P1)
    logdet2 = 2.0 * np.log(np.diag(chol2)).sum()
    return float(0.5 * (trace - (logdet1 - logdet2) - mu1.size + d @ d))


def _bernoulli_kld(r1, mu1, P1, r2, mu2, P2) -> float:
    if r2 in (0.0, 1.0):
        if r1 != r2:
            return math.inf
        return 0.0 if r1 == 0.0 else gaussian_kld(mu1, P1, mu2, P2)
    value = float(rel_entr(1.0 - r1, 1.0 - r2) + rel_entr(r1, r2))
    if r1 > 0.0:
        value += r1 * gaussian_kld(mu1, P1, mu2, P2)
    return max(value, 0.0)


def bernoulli_kld(f1: BernoulliComponent, f2: BernoulliComponent) -> float:
    """Closed-form KLD D(f1 || f2) between Bernoulli densities with Gaussian spatial parts.

    Finite whenever ``r2`` is not 0 or 1. If ``r1 == r2`` in {0, 1} only the
    Gaussian term remains (scaled by r1), and otherwise the divergence is
    infinite.
    """
    if f1.density.dim != f2.density.dim:
        raise ValueError("dimension mismatch")
    return _bernoulli_kld(f1.r, f1.density.mean, f1.density.cov, f2.r, f2.density.mean, f2.density.cov)


def _moment_match(W, r, means, covs):
    """Merged (W, r, mean, cov); the spatial moments are weighted by W * r."""
    W = np.asarray(W, dtype=float)
    if W.sum() <= 0:
        raise ValueError("merge weights sum to zero")
    W_hat = float(W.sum())
    r_hat = float(W @ r / W_hat)
    wr = W * r
    if wr.sum() <= 0:
        # no existence mass: keep the highest-weight density
        a = int(np.argmax(W))
        return W_hat, r_hat, means[a].copy(), covs[a].copy()
    beta = wr / wr.sum()
    mu = beta @ means
    diff = means - mu
    P = np.einsum("a,aij->ij", beta, covs) + np.einsum("a,ai,aj->ij", beta, diff, diff)
    return W_hat, min(r_hat, 1.0), mu, symmetrize(P)


def merge_bernoullis(components) -> tuple[float, BernoulliComponent]:
    """Moment-matched merge of weighted Bernoulli components.

    Parameters
    ----------
    components : sequence of (W, BernoulliComponent)

    Returns
    -------
    W_hat : float
        Sum of the input weights.
    merged : BernoulliComponent
        r is the W-weighted mean of r; mean and covariance match the
        existence-weighted (W * r) first and second moments.
    """
    components = list(components)
    if not components:
        raise ValueError("nothing to merge")
    W = np.array([w for w, _ in components], dtype=float)
    if np.any(W < 0):
        raise ValueError("merge weights must be nonnegative")
    r = np.array([c.r for _, c in components])
    means = np.stack([c.density.mean for _, c in components])
    covs = np.stack([c.density.cov for _, c in components])
    W_hat, r_hat, mu, P = _moment_match(W, r, means, covs)
    return W_hat, BernoulliComponent(r_hat, GaussianDensity(mu, P), components[int(np.argmax(W))][1].assoc)


def hypothesis_weights(cluster: Cluster, track: Track) -> np.ndarray:
    """Mixture weight of each hypothesis of a track: sum of the weights of the globals using it."""
    col = cluster.column(track.id)
    present = col != ABSENT
    return np.bincount(col[present], weights=cluster.weights[present], minlength=len(track))


def _rewrite(cluster: Cluster, track_id: int, mapping: np.ndarray) -> Cluster:
    c = cluster.track_ids.index(track_id)
    choices = cluster.choices.copy()
    present = choices[:, c] != ABSENT
    choices[present, c] = mapping[choices[present, c]]
    choices, weights = coalesce(choices, cluster.weights)
    choices, weights = sort_globals(choices, weights)
    return Cluster(cluster.track_ids, weights, choices)


def _pairwise_bernoulli_kld(r, means, covs) -> np.ndarray:
    h = r.size
    D = np.zeros((h, h))
    for a in range(h):
        for b in range(h):
            if a != b:
                D[a, b] = _bernoulli_kld(r[a], means[a], covs[a], r[b], means[b], covs[b])
    return D


def intra_track_merge(track: Track, cluster: Cluster, params: MergeParams, time: int | None = None):
    """Merge similar hypotheses of one track.

    First, hypotheses updated with the same measurement at ``time`` are merged
    unconditionally. Then the closest pair (by the smaller of the two KLD
    directions) is merged greedily while that distance is below
    ``params.gamma_m``. Globals are rewritten to the surviving indices and
    duplicates coalesced.

    Returns
    -------
    (Track, Cluster)
    """
    h = len(track)
    if h <= 1:
        return track, cluster
    W = hypothesis_weights(cluster, track)
    groups: list[list[int]] = []
    if time is not None:
        by_meas: dict[int, list[int]] = {}
        for a in range(h):
            t, j = track.assoc[a]
            if t == time and j >= 0:
                by_meas.setdefault(int(j), []).append(a)
            else:
                groups.append([a])
        groups.extend(by_meas.values())
        groups.sort(key=lambda g: g[0])
    else:
        groups = [[a] for a in range(h)]

    def merged(g):
        if len(g) == 1:
            a = g[0]
            return W[a], track.r[a], track.means[a], track.covs[a]
        w = W[g] if W[g].sum() > 0 else np.ones(len(g))  # unreferenced hypotheses carry no mixture mass
        return _moment_match(w, track.r[g], track.means[g], track.covs[g])

    comps = [merged(g) for g in groups]
    if len(comps) > 1:
        r = np.array([c[1] for c in comps])
        means = np.stack([c[2] for c in comps])
        covs = np.stack([c[3] for c in comps])
        D = _pairwise_bernoulli_kld(r, means, covs)
        D = np.minimum(D, D.T)
        np.fill_diagonal(D, np.inf)
        while len(groups) > 1:
            a, b = np.unravel_index(np.argmin(D), D.shape)
            if not D[a, b] < params.gamma_m:
                break
            a, b = min(a, b), max(a, b)
            groups[a] = sorted(groups[a] + groups[b])
            del groups[b]
            comps[a] = merged(groups[a])
            del comps[b]
            D = np.delete(np.delete(D, b, axis=0), b, axis=1)
            for c in range(len(comps)):
                if c != a:
                    d_ac = _bernoulli_kld(comps[a][1], comps[a][2], comps[a][3], comps[c][1], comps[c][2], comps[c][3])
                    d_ca = _bernoulli_kld(comps[c][1], comps[c][2], comps[c][3], comps[a][1], comps[a][2], comps[a][3])
                    D[a, c] = D[c, a] = min(d_ac, d_ca)
    if len(groups) == h:
        return track, cluster

    mapping = np.empty(h, dtype=np.int64)
    for new, g in enumerate(groups):
        mapping[g] = new
    assoc = np.stack([track.assoc[g[int(np.argmax(W[g]))]] for g in groups])
    out = Track(track.id, np.array([c[1] for c in comps]), np.stack([c[2] for c in comps]),
                np.stack([c[3] for c in comps]), assoc)
    return out, _rewrite(cluster, track.id, mapping)


def divergent_tracks(tracks: Mapping[int, Track], cluster: Cluster, gamma_s: float) -> list[int]:
    """Tracks with a pair of hypotheses whose Gaussian KLD exceeds ``gamma_s``."""
    out = []
    for t in cluster.track_ids:
        tr = tracks[t]
        found = False
        for a in range(len(tr)):
            for b in range(len(tr)):
                if a != b and gaussian_kld(tr.means[a], tr.covs[a], tr.means[b], tr.covs[b]) > gamma_s:
                    found = True
                    break
            if found:
                break
        if found:
            out.append(t)
    return out


def farthest_point_init(points: np.ndarray, k: int) -> np.ndarray:
    """k seeds: the most separated pair, then repeatedly the point farthest from the chosen set."""
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    chosen = [int(i), int(j)][:k]
    while len(chosen) < k:
        nearest = d[:, chosen].min(axis=1)
        chosen.append(int(np.argmax(nearest)))
    return points[chosen]


def _kmeans(points: np.ndarray, k: int):
    """Labels from K-means, or None if it fails to converge or leaves a cluster empty."""
    if np.unique(points, axis=0).shape[0] < k:
        return None
    init = farthest_point_init(points, k)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centroids, labels = kmeans2(points, init, iter=KMEANS_MAX_ITER, minit="matrix", missing="raise")
    except ClusterError:
        return None
    # converged iff one more Lloyd iteration changes nothing
    again, _ = vq(points, centroids)
    if not np.array_equal(again, labels) or np.bincount(labels, minlength=k).min() == 0:
        return None
    return labels


def _reference_tracks(candidates: list[int], labels: dict, W: dict, k: int) -> dict[int, int]:
    """Local cluster -> reference track, greedily by each track's mixture weight inside the cluster."""
    score = {(t, l): 0.0 for t in candidates for l in range(k)}
    for (t, a), l in labels.items():
        score[t, l] += W[t][a]
    order = sorted(score, key=lambda key: (-score[key], key[0], key[1]))
    ref: dict[int, int] = {}
    used: set[int] = set()
    for t, l in order:
        if l not in ref and t not in used:
            ref[l] = t
            used.add(t)
    return ref


def inter_track_swap(tracks: Mapping[int, Track], cluster: Cluster, params: MergeParams):
    """Reassign hypotheses of divergent tracks to reference tracks, per global hypothesis.

    The unlabelled multi-object density of the cluster is unchanged: within
    each global hypothesis the Bernoulli components are only permuted among
    tracks. Globals whose permutation would not be a bijection are left as
    they are. A K-means failure makes the swap a no-op.

    Returns
    -------
    (dict of Track, Cluster)
    """
    tracks = {t: tracks[t] for t in cluster.track_ids}
    if len(cluster.track_ids) < 2:
        return tracks, cluster
    cand = divergent_tracks(tracks, cluster, params.gamma_s)
    if len(cand) < 2:
        return tracks, cluster
    k = len(cand)
    keys = [(t, a) for t in cand for a in range(len(tracks[t]))]
    points = np.array([tracks[t].means[a, list(POSITION_AXES)] for t, a in keys])
    labels_arr = _kmeans(points, k)
    if labels_arr is None:
        return tracks, cluster
    labels = {key: int(l) for key, l in zip(keys, labels_arr)}
    W = {t: hypothesis_weights(cluster, tracks[t]) for t in cand}
    ref = _reference_tracks(cand, labels, W, k)

    cols = [cluster.track_ids.index(t) for t in cand]
    new_hyps: dict[int, list[tuple[int, int]]] = {t: [] for t in cand}
    slot: dict[tuple[int, int, int], int] = {}
    choices = cluster.choices.copy()
    changed = False
    for g in range(len(cluster)):
        row = cluster.choices[g, cols]
        target = {}
        for t, a in zip(cand, row):
            if a != ABSENT:
                target[t] = ref[labels[t, int(a)]]
        if len(set(target.values())) != len(target):
            target = {t: t for t in target}
        new_row = np.full(len(cand), ABSENT, dtype=np.int64)
        for src, a in zip(cand, row):
            if a == ABSENT:
                continue
            dst = target[src]
            key = (dst, src, int(a))
            if key not in slot:
                slot[key] = len(new_hyps[dst])
                new_hyps[dst].append((src, int(a)))
            new_row[cand.index(dst)] = slot[key]
            changed |= dst != src
        choices[g, cols] = new_row
    if not changed:
        return tracks, cluster
    out = dict(tracks)
    for t in cand:
        src = new_hyps[t]
        if not src:
            continue
        out[t] = Track(t, np.array([tracks[s].r[a] for s, a in src]),
                       np.stack([tracks[s].means[a] for s, a in src]),
                       np.stack([tracks[s].covs[a] for s, a in src]),
                       np.stack([tracks[s].assoc[a] for s, a in src]))
    choices, weights = coalesce(choices, cluster.weights)
    choices, weights = sort_globals(choices, weights)
    return compact(out, Cluster(cluster.track_ids, weights, choices))


def collapse_slice(tracks: Mapping[int, Track], cluster: Cluster):
    """Merge every track of a cluster to a single Bernoulli; one global of weight 1."""
    out = {}
    total = float(cluster.weights.sum())
    for t in cluster.track_ids:
        tr = tracks[t]
        W = hypothesis_weights(cluster, tr) / total
        if len(tr) == 1 and np.isclose(W[0], 1.0, rtol=0, atol=1e-12):
            out[t] = tr
            continue
        # the absent weight 1 - sum(W) counts as r = 0 in the merged existence probability
        _, r_hat, mu, P = _moment_match(W, tr.r, tr.means, tr.covs)
        r_hat *= W.sum()
        out[t] = Track(t, [r_hat], mu[None], P[None], tr.assoc[int(np.argmax(W))][None])
    n = len(cluster.track_ids)
    return out, Cluster(cluster.track_ids, [1.0], np.zeros((1, n), dtype=np.int64))


def collapse_to_pmb(pmbm: ClusteredPmbm) -> ClusteredPmbm:
    """Track-oriented PMB approximation: one moment-matched Bernoulli per track."""
    tracks, clusters = {}, []
    for cl in pmbm.clusters:
        tr, c = collapse_slice(pmbm.tracks, cl)
        tracks.update(tr)
        clusters.append(c)
    return ClusteredPmbm(pmbm.ppp, tracks, tuple(clusters), pmbm.next_id, pmbm.time)
