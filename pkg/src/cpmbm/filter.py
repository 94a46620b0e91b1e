"""Clustered PMBM filter recursion.

One step is: predict, gate, cluster tracks from the gates, re-cluster the
prior, update every cluster independently with ranked assignments, apply the
optional Bernoulli reduction passes, and prune the Poisson intensity.

The standard (unclustered) PMBM filter is the special case with a single
cluster that holds every track and every measurement.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .assignment import murty_kbest
from .clustering import ClusterPartition, cluster_measurement_driven, recluster
from .gating import DEFAULT_GAMMA, METHODS, GateMap, gate
from .lingauss import (MeasurementModel, MotionModel, innovation_batch, joseph_covariance, log_likelihood_batch,
                       predict_batch)
from .metrics import estimate as _estimate
from .reduction import MergeParams, collapse_slice, inter_track_swap, intra_track_merge
from .rfs import (ABSENT, MISDETECTION, Cluster, ClusteredPmbm, DegenerateHypothesesError, PoissonIntensity, Track,
                  coalesce, compact, sort_globals, symmetrize)

# floor on misdetection likelihoods so that log-domain costs stay finite when p_D = r = 1
_LOG_FLOOR = math.log(1e-300)


@dataclass(frozen=True)
class FilterParams:
    """Filter configuration.

    ``n_h`` caps the global hypotheses of the unclustered filter; the
    clustered filter caps each cluster at ``n_h_c_factor`` times its number
    of prior tracks.
    """

    gamma_p: float = 1e-5
    gamma_b: float = 1e-5
    gamma_mbm: float = 1e-4
    n_h: int = 200
    n_h_c_factor: int = 20
    gating: str = "kdtree"
    gamma_g: float | None = None
    post_filter: float | None = None
    estimator_threshold: float = 0.4
    clustered: bool = True
    pmb: bool = False
    merge: bool = False
    swap: bool = False
    gamma_m: float = 0.25
    gamma_s: float = 50.0

    def __post_init__(self):
        for name in ("gamma_p", "gamma_b", "gamma_mbm", "estimator_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.n_h < 1 or self.n_h_c_factor < 1:
            raise ValueError("hypothesis caps must be at least 1")
        if self.gating not in METHODS:
            raise ValueError(f"unknown gating method {self.gating!r}")
        if self.gamma_g is not None and self.gamma_g <= 0:
            raise ValueError("gating threshold must be positive")
        MergeParams(self.gamma_m, self.gamma_s, self.swap)

    @property
    def gate_threshold(self) -> float:
        return DEFAULT_GAMMA[self.gating] if self.gamma_g is None else self.gamma_g

    @property
    def merge_params(self) -> MergeParams:
        return MergeParams(self.gamma_m, self.gamma_s, self.swap)

    def cluster_cap(self, n_tracks: int) -> int:
        return self.n_h_c_factor * max(1, n_tracks)


@dataclass
class StepStats:
    n_clusters: int = 0
    mean_tracks_per_cluster: float = 0.0
    n_gh_before: int = 0
    n_gh_after: int = 0
    wall_ms: float = 0.0


def predict(pmbm: ClusteredPmbm, motion: MotionModel, birth: PoissonIntensity | None = None) -> ClusteredPmbm:
    """Prediction: survival-thinned, Kalman-predicted PPP and Bernoullis; birth appended."""
    ps = motion.p_s
    ppp = pmbm.ppp
    if len(ppp):
        means, covs = predict_batch(ppp.means, ppp.covs, motion)
        ppp = PoissonIntensity(ppp.weights * ps, means, covs)
    if birth is not None and len(birth):
        ppp = ppp.concat(birth) if len(ppp) else birth
    tracks = {}
    for t, tr in pmbm.tracks.items():
        means, covs = predict_batch(tr.means, tr.covs, motion)
        tracks[t] = Track(t, tr.r * ps, means, covs, tr.assoc)
    return ClusteredPmbm(ppp, tracks, pmbm.clusters, pmbm.next_id, pmbm.time)


def prune_ppp(ppp: PoissonIntensity, gamma_p: float) -> PoissonIntensity:
    keep = ppp.weights >= gamma_p
    if keep.all():
        return ppp
    return PoissonIntensity(ppp.weights[keep], ppp.means[keep], ppp.covs[keep])


@dataclass(frozen=True)
class NewTracks:
    """Per-measurement new-track Bernoullis created from the PPP.

    ``log_weight[j]`` is log(e(z_j) + clutter intensity), the factor of a
    global hypothesis in which z_j is not associated with a prior track.
    """

    log_weight: np.ndarray
    r: np.ndarray
    means: np.ndarray
    covs: np.ndarray


def new_track_components(ppp: PoissonIntensity, Z: np.ndarray, model: MeasurementModel) -> NewTracks:
    m, n = Z.shape[0], ppp.dim
    log_clutter = math.log(model.clutter_intensity) if model.clutter_intensity > 0 else -math.inf
    if len(ppp) == 0 or model.p_d == 0 or m == 0:
        log_w = np.full(m, log_clutter)
        return NewTracks(log_w, np.zeros(m), np.zeros((m, n)), np.tile(np.eye(n), (m, 1, 1)))
    zhat, S, chol, K = innovation_batch(ppp.means, ppp.covs, model)
    nu = Z[None, :, :] - zhat[:, None, :]
    with np.errstate(divide="ignore"):
        log_terms = math.log(model.p_d) + np.log(ppp.weights)[:, None] + log_likelihood_batch(nu, chol[:, None])
    log_e = logsumexp(log_terms, axis=0)
    beta = np.exp(log_terms - np.where(np.isfinite(log_e), log_e, 0.0))
    beta[:, ~np.isfinite(log_e)] = 0.0
    post_means = ppp.means[:, None, :] + np.einsum("pij,pmj->pmi", K, nu)
    post_covs = joseph_covariance(ppp.covs, K, model)
    means = np.einsum("pm,pmi->mi", beta, post_means)
    diff = post_means - means[None]
    covs = np.einsum("pm,pij->mij", beta, post_covs) + np.einsum("pm,pmi,pmj->mij", beta, diff, diff)
    dead = ~np.isfinite(log_e)
    if dead.any():
        means[dead] = 0.0
        covs[dead] = np.eye(n)
    log_w = np.logaddexp(log_e, log_clutter)
    with np.errstate(invalid="ignore"):
        r = np.where(np.isfinite(log_w), np.exp(log_e - log_w), 0.0)
    return NewTracks(log_w, r, means, symmetrize(covs))


@dataclass
class _Children:
    """Posterior single-target hypotheses of one prior track restricted to a cluster's measurements."""

    track: Track
    log_md: np.ndarray  # (h,) log misdetection factor per parent hypothesis
    log_det: np.ndarray  # (h, m_c) log detection factor, -inf where not gated
    md_child: np.ndarray  # (h,) child index of the misdetection child
    det_child: np.ndarray  # (h, m_c) child index of the detection child, -1 where not gated


def _track_children(track: Track, inn, gates: Sequence[np.ndarray], local_of: np.ndarray, Z: np.ndarray,
                    model: MeasurementModel, time: int) -> _Children:
    zhat, S, chol, K = inn
    h, m_c = len(track), int(local_of.max()) + 1 if local_of.size else 0
    pd = model.p_d
    r = track.r
    md = 1.0 - r * pd
    with np.errstate(divide="ignore", invalid="ignore"):
        log_md = np.maximum(np.log(md), _LOG_FLOOR)
        r_md = np.where(md > 0, r * (1.0 - pd) / md, 0.0)
    log_det = np.full((h, m_c), -np.inf)
    det_child = np.full((h, m_c), -1, dtype=np.int64)
    md_child = np.empty(h, dtype=np.int64)
    rs, means, covs, assoc = [], [], [], []
    for a in range(h):
        md_child[a] = len(rs)
        rs.append(r_md[a])
        means.append(track.means[a][None])
        covs.append(track.covs[a][None])
        assoc.append(np.array([[time, MISDETECTION]]))
        g = gates[a]
        g = g[local_of[g] >= 0]
        if g.size == 0 or pd == 0 or r[a] == 0:
            continue
        nu = Z[g] - zhat[a]
        ll = log_likelihood_batch(nu, chol[a])
        rows = local_of[g]
        log_det[a, rows] = math.log(pd) + math.log(r[a]) + ll
        det_child[a, rows] = len(rs) + np.arange(g.size)
        rs.extend([1.0] * g.size)
        means.append(track.means[a] + nu @ K[a].T)
        P = joseph_covariance(track.covs[a], K[a], model)
        covs.append(np.broadcast_to(P, (g.size,) + P.shape))
        assoc.append(np.column_stack([np.full(g.size, time), g]))
    child = Track(track.id, np.array(rs), np.concatenate(means), np.concatenate(covs), np.concatenate(assoc))
    return _Children(child, log_md, log_det, md_child, det_child)


def update_cluster(tracks: Sequence[Track], cluster: Cluster, meas: np.ndarray, Z: np.ndarray,
                   inn: Mapping[int, tuple], gates: GateMap, new: NewTracks, model: MeasurementModel,
                   params: FilterParams, cap: int, time: int, next_id: int):
    """Update one cluster with its measurement set.

    Parameters
    ----------
    tracks : prior (predicted) tracks of the cluster, in ``cluster.track_ids`` order
    cluster : prior global hypotheses
    meas : indices into ``Z`` of the cluster's measurements
    inn : per track id, stacked (zhat, S, chol, K) of its hypotheses
    gates : gated measurement indices per (track, hypothesis)
    new : new-track components for every measurement of ``Z``
    cap : hypothesis cap; parent g receives a Murty budget of ceil(w_g * cap)
    next_id : new track for measurement j gets id ``next_id + j``

    Returns
    -------
    tracks : dict of Track
    cluster : Cluster
    n_before : int
        Number of global hypotheses generated before pruning.
    """
    meas = np.asarray(meas, dtype=np.int64)
    m_c, n = meas.size, len(tracks)
    local_of = np.full(Z.shape[0], -1, dtype=np.int64)
    local_of[meas] = np.arange(m_c)
    children = [_track_children(tr, inn[tr.id], gates.per_hyp[tr.id], local_of, Z, model, time) for tr in tracks]
    log_new = new.log_weight[meas]

    total = float(cluster.weights.sum())
    if total <= 0:
        raise DegenerateHypothesesError("prior cluster carries no weight")
    parent_w = cluster.weights / total
    rows_out, logw_out = [], []
    diag = np.arange(m_c)
    for w, choice in zip(parent_w, cluster.choices):
        if w <= 0:
            continue
        cost = np.full((m_c, n + m_c), np.inf)
        cost[diag, n + diag] = -log_new
        const = 0.0
        for c, ch in enumerate(children):
            a = choice[c]
            if a == ABSENT:
                continue
            const += ch.log_md[a]
            cost[:, c] = -(ch.log_det[a] - ch.log_md[a])
        budget = max(1, math.ceil(w * cap - 1e-9))
        for assign, cst in murty_kbest(cost, budget):
            row = np.empty(n + m_c, dtype=np.int64)
            for c, ch in enumerate(children):
                row[c] = ABSENT if choice[c] == ABSENT else ch.md_child[choice[c]]
            row[n:] = ABSENT
            for j, col in enumerate(assign):
                if col < n:
                    row[col] = children[col].det_child[choice[col], j]
                else:
                    row[col] = 0
            rows_out.append(row)
            logw_out.append(math.log(w) + const - cst)
    n_before = len(rows_out)
    if n_before == 0:
        raise DegenerateHypothesesError("no feasible data association for cluster")

    logw = np.array(logw_out)
    weights = np.exp(logw - logsumexp(logw))
    choices = np.array(rows_out, dtype=np.int64).reshape(n_before, n + m_c)
    # prune globals, always keeping the best one
    choices, weights = sort_globals(choices, weights)
    keep = weights >= params.gamma_mbm
    keep[0] = True
    keep[cap:] = False
    choices, weights = choices[keep], weights[keep]

    new_ids = [next_id + int(j) for j in meas]
    out_tracks = {ch.track.id: ch.track for ch in children}
    for j_local, j in enumerate(meas):
        tid = new_ids[j_local]
        out_tracks[tid] = Track(tid, [new.r[j]], new.means[j][None], new.covs[j][None], [[time, j]])
    ids = tuple(tr.id for tr in tracks) + tuple(new_ids)

    # Bernoullis with negligible existence are treated as absent
    for c, tid in enumerate(ids):
        low = out_tracks[tid].r < params.gamma_b
        if low.any():
            col = choices[:, c]
            mask = col != ABSENT
            mask[mask] = low[col[mask]]
            col[mask] = ABSENT
    choices, weights = coalesce(choices, weights)
    weights = weights / weights.sum()
    choices, weights = sort_globals(choices, weights)
    out_tracks, out = compact(out_tracks, Cluster(ids, weights, choices))
    return out_tracks, out, n_before


def _reduce(tracks: dict, cluster: Cluster, params: FilterParams, time: int):
    if params.merge:
        mp = params.merge_params
        for t in cluster.track_ids:
            tracks[t], cluster = intra_track_merge(tracks[t], cluster, mp, time)
        tracks, cluster = compact(tracks, cluster)
        if params.swap:
            tracks, cluster = inter_track_swap(tracks, cluster, mp)
    if params.pmb:
        tracks, cluster = collapse_slice(tracks, cluster)
    return tracks, cluster


def _single_cluster(pmbm: ClusteredPmbm, params: FilterParams) -> Cluster:
    if not pmbm.clusters:
        return Cluster((), [1.0], np.zeros((1, 0), dtype=np.int64))
    if len(pmbm.clusters) == 1:
        return pmbm.clusters[0]
    whole = ClusterPartition((frozenset(pmbm.tracks),))
    return recluster(pmbm, whole, params.gamma_mbm, params.n_h).clusters[0]


def step(pmbm: ClusteredPmbm, Z, motion: MotionModel, model: MeasurementModel, birth: PoissonIntensity | None,
         params: FilterParams, partition: ClusterPartition | None = None) -> tuple[ClusteredPmbm, StepStats]:
    """One prediction and update of a (clustered) PMBM.

    ``partition`` overrides the measurement-driven clustering (clustered mode only).
    """
    t0 = _time.perf_counter()
    time = pmbm.time + 1
    pred = predict(pmbm, motion, birth)
    Z = np.asarray(Z, dtype=float).reshape(-1, model.dim)
    m = Z.shape[0]
    new = new_track_components(pred.ppp, Z, model)

    # innovations and gates of every prior hypothesis
    order = list(pred.tracks)
    inn: dict[int, tuple] = {}
    per_hyp: dict[int, list[np.ndarray]] = {}
    if order:
        means = np.concatenate([pred.tracks[t].means for t in order])
        covs = np.concatenate([pred.tracks[t].covs for t in order])
        zhat, S, chol, K = innovation_batch(means, covs, model)
        flat = gate(zhat, S, Z, params.gating, params.gate_threshold, params.post_filter)
        start = 0
        for t in order:
            h = len(pred.tracks[t])
            sl = slice(start, start + h)
            inn[t] = (zhat[sl], S[sl], chol[sl], K[sl])
            per_hyp[t] = flat[sl]
            start += h
    gates = GateMap(per_hyp)

    jobs = []  # (prior cluster, measurement indices, cap)
    if params.clustered:
        if partition is None:
            partition = cluster_measurement_driven(gates.per_track, ClusterPartition.of(pred))
        pred = recluster(pred, partition, params.gamma_mbm, params.cluster_cap)
        used = np.zeros(m, dtype=bool)
        for cl in pred.clusters:
            parts = [gates.track(t) for t in cl.track_ids]
            meas = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
            used[meas] = True
            jobs.append((cl, meas, params.cluster_cap(len(cl.track_ids))))
        for j in np.flatnonzero(~used):
            jobs.append((Cluster((), [1.0], np.zeros((1, 0), dtype=np.int64)), np.array([j]), params.cluster_cap(0)))
    else:
        jobs.append((_single_cluster(pred, params), np.arange(m), params.n_h))

    tracks: dict[int, Track] = {}
    clusters = []
    stats = StepStats()
    for cl, meas, cap in jobs:
        prior = [pred.tracks[t] for t in cl.track_ids]
        tr, out, n_before = update_cluster(prior, cl, meas, Z, inn, gates, new, model, params, cap, time,
                                           pred.next_id)
        tr, out = _reduce(tr, out, params, time)
        stats.n_gh_before += n_before
        if out.track_ids:
            stats.n_gh_after += len(out)
            tracks.update(tr)
            clusters.append(out)

    ppp = PoissonIntensity(pred.ppp.weights * (1.0 - model.p_d), pred.ppp.means, pred.ppp.covs)
    post = ClusteredPmbm(prune_ppp(ppp, params.gamma_p), tracks, tuple(clusters), pred.next_id + m, time)
    stats.n_clusters = len(clusters)
    stats.mean_tracks_per_cluster = len(tracks) / len(clusters) if clusters else 0.0
    stats.wall_ms = 1000.0 * (_time.perf_counter() - t0)
    return post, stats


@dataclass
class PmbmFilter:
    """Stateful wrapper running :func:`step` over a measurement sequence.

    Parameters
    ----------
    motion, model : MotionModel, MeasurementModel
    birth : callable
        Maps the time step k (1-based) to the birth intensity appended at that step.
    params : FilterParams
    """

    motion: MotionModel
    model: MeasurementModel
    birth: Callable[[int], PoissonIntensity]
    params: FilterParams = field(default_factory=FilterParams)
    state: ClusteredPmbm | None = None

    def __post_init__(self):
        if self.state is None:
            self.state = ClusteredPmbm.empty(self.motion.dim)

    def step(self, Z) -> StepStats:
        k = self.state.time + 1
        self.state, stats = step(self.state, Z, self.motion, self.model, self.birth(k), self.params)
        return stats

    def estimate(self) -> np.ndarray:
        return _estimate(self.state, self.params.estimator_threshold)
