"""Core containers for (clustered) Poisson multi-Bernoulli mixture densities.

Single-target hypotheses of a track are stored as stacked arrays so that the
filter can predict, gate and update them without Python-level loops. Global
hypotheses are stored per cluster as a weight vector plus an integer table of
hypothesis indices, one column per track; ``ABSENT`` marks a track that does
not exist under that global hypothesis (equivalently a Bernoulli with r = 0).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

MISDETECTION = -1
ABSENT = -1
MAX_ORACLE_CARDINALITY = 5


class DegenerateHypothesesError(ValueError):
    """Raised when a set of global hypotheses carries no weight."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class GaussianDensity:
    """Gaussian single-target density N(x; mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def pdf(self, x) -> float:
        return math.exp(gaussian_logpdf(np.asarray(x, dtype=float), self.mean, self.cov))


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = np.asarray(x, dtype=float) - mean
    chol = np.linalg.cholesky(cov)
    y = np.linalg.solve(chol, d)
    return float(-0.5 * y @ y - np.log(np.diag(chol)).sum() - 0.5 * d.size * math.log(2 * math.pi))


@dataclass(frozen=True)
class BernoulliComponent:
    """One single-target hypothesis: existence probability and state density.

    ``assoc`` records (time step, measurement index) of the last update, with
    ``MISDETECTION`` as the measurement index for misdetection updates.
    """

    r: float
    density: GaussianDensity
    assoc: tuple[int, int] = (0, MISDETECTION)

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"existence probability {self.r} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Track:
    """A potential target: stacked single-target hypotheses sharing one id."""

    id: int
    r: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    assoc: np.ndarray = None

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(r.size, -1)
        covs = np.asarray(self.covs, dtype=float).reshape(r.size, means.shape[1], means.shape[1])
        assoc = self.assoc
        if assoc is None:
            assoc = np.tile([0, MISDETECTION], (r.size, 1))
        assoc = np.asarray(assoc, dtype=np.int64).reshape(r.size, 2)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "assoc", assoc)

    @classmethod
    def from_components(cls, track_id: int, hyps: Sequence[BernoulliComponent]) -> "Track":
        if not hyps:
            raise ValueError("a track needs at least one hypothesis")
        return cls(
            track_id,
            np.array([h.r for h in hyps]),
            np.stack([h.density.mean for h in hyps]),
            np.stack([h.density.cov for h in hyps]),
            np.array([h.assoc for h in hyps]),
        )

    def __len__(self) -> int:
        return self.r.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def hyps(self) -> list[BernoulliComponent]:
        return [self.component(a) for a in range(len(self))]

    def component(self, a: int) -> BernoulliComponent:
        return BernoulliComponent(
            float(self.r[a]),
            GaussianDensity(self.means[a], self.covs[a]),
            (int(self.assoc[a, 0]), int(self.assoc[a, 1])),
        )

    def take(self, idx, track_id: int | None = None) -> "Track":
        idx = np.asarray(idx, dtype=np.int64)
        return Track(self.id if track_id is None else track_id,
                     self.r[idx], self.means[idx], self.covs[idx], self.assoc[idx])


@dataclass(frozen=True)
class GlobalHypothesis:
    weight: float
    choice: Mapping[int, int]


@dataclass(frozen=True, eq=False)
class Cluster:
    """An independent multi-Bernoulli mixture over a subset of tracks.

    ``choices[g, c]`` is the hypothesis index of track ``track_ids[c]`` under
    global hypothesis ``g`` (``ABSENT`` if the track does not exist there).
    """

    track_ids: tuple[int, ...]
    weights: np.ndarray
    choices: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.track_ids)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        choices = np.asarray(self.choices, dtype=np.int64).reshape(weights.size, len(ids))
        object.__setattr__(self, "track_ids", ids)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "choices", choices)

    @classmethod
    def from_globals(cls, track_ids: Sequence[int], globs: Sequence[GlobalHypothesis]) -> "Cluster":
        track_ids = tuple(track_ids)
        choices = [[g.choice.get(t, ABSENT) for t in track_ids] for g in globs]
        return cls(track_ids, [g.weight for g in globs], np.array(choices, dtype=np.int64).reshape(len(globs), len(track_ids)))

    @property
    def globals(self) -> list[GlobalHypothesis]:
        return [GlobalHypothesis(float(w), dict(zip(self.track_ids, map(int, row))))
                for w, row in zip(self.weights, self.choices)]

    def __len__(self) -> int:
        return self.weights.size

    def column(self, track_id: int) -> np.ndarray:
        return self.choices[:, self.track_ids.index(track_id)]


@dataclass(frozen=True, eq=False)
class PoissonIntensity:
    """Gaussian-mixture intensity of the undetected-target PPP."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float)
        means = means.reshape(w.size, means.shape[-1] if means.ndim > 1 else -1)
        covs = np.asarray(self.covs, dtype=float).reshape(w.size, means.shape[1], means.shape[1])
        if np.any(w < 0):
            raise ValueError("Poisson intensity weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @classmethod
    def empty(cls, dim: int) -> "PoissonIntensity":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, GaussianDensity]]) -> "PoissonIntensity":
        if not components:
            raise ValueError("use PoissonIntensity.empty for an empty intensity")
        return cls([w for w, _ in components],
                   np.stack([d.mean for _, d in components]),
                   np.stack([d.cov for _, d in components]))

    def __len__(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def components(self) -> list[tuple[float, GaussianDensity]]:
        return [(float(w), GaussianDensity(m, P)) for w, m, P in zip(self.weights, self.means, self.covs)]

    def intensity(self, x) -> float:
        return sum(w * math.exp(gaussian_logpdf(x, m, P)) for w, m, P in zip(self.weights, self.means, self.covs))

    def concat(self, other: "PoissonIntensity") -> "PoissonIntensity":
        return PoissonIntensity(np.concatenate([self.weights, other.weights]),
                                np.concatenate([self.means, other.means]),
                                np.concatenate([self.covs, other.covs]))


@dataclass(frozen=True, eq=False)
class ClusteredPmbm:
    """PPP for undetected targets plus one independent MBM per cluster."""

    ppp: PoissonIntensity
    tracks: Mapping[int, Track] = field(default_factory=dict)
    clusters: tuple[Cluster, ...] = ()
    next_id: int = 0
    time: int = 0

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        self.check_partition()

    @classmethod
    def empty(cls, dim: int) -> "ClusteredPmbm":
        return cls(PoissonIntensity.empty(dim))

    def check_partition(self) -> None:
        seen: set[int] = set()
        for c in self.clusters:
            overlap = seen.intersection(c.track_ids)
            if overlap:
                raise ValueError(f"tracks {sorted(overlap)} belong to more than one cluster")
            seen.update(c.track_ids)
        if seen != set(self.tracks):
            raise ValueError("clusters do not partition the track set")

    def cluster_of(self) -> dict[int, int]:
        return {t: c for c, cl in enumerate(self.clusters) for t in cl.track_ids}

    def marginal_weights(self, track_id: int) -> dict[int, float]:
        """Weight of each hypothesis of a track summed over global hypotheses."""
        for cl in self.clusters:
            if track_id in cl.track_ids:
                col = cl.column(track_id)
                out: dict[int, float] = {}
                for a, w in zip(col, cl.weights):
                    out[int(a)] = out.get(int(a), 0.0) + float(w)
                return out
        raise KeyError(track_id)

    @property
    def n_globals(self) -> int:
        return sum(len(c) for c in self.clusters)


def coalesce(choices: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge identical rows of a global-hypothesis table by summing weights.

    The output keeps the first-occurrence order of the distinct rows.
    """
    if choices.shape[0] <= 1:
        return choices, weights
    if choices.shape[1] == 0:
        return choices[:1], np.array([weights.sum()])
    uniq, first, inverse = np.unique(choices, axis=0, return_index=True, return_inverse=True)
    if uniq.shape[0] == choices.shape[0]:
        return choices, weights
    inverse = inverse.reshape(-1)
    summed = np.bincount(inverse, weights=weights, minlength=uniq.shape[0])
    order = np.argsort(first, kind="stable")
    return uniq[order], summed[order]


def sort_globals(choices: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort by descending weight; ties broken by the lexicographic index tuple."""
    keys = [choices[:, c] for c in range(choices.shape[1] - 1, -1, -1)] + [-weights]
    order = np.lexsort(keys) if keys else np.arange(weights.size)
    return choices[order], weights[order]


def normalize_globals(cluster: Cluster) -> Cluster:
    total = float(cluster.weights.sum())
    if not np.all(cluster.weights >= 0) or total <= 0 or not math.isfinite(total):
        raise DegenerateHypothesesError("global hypothesis weights sum to zero")
    choices, weights = sort_globals(cluster.choices, cluster.weights / total)
    return Cluster(cluster.track_ids, weights, choices)


def _bernoulli_value(track: Track, a: int, x) -> float:
    """Bernoulli set density at {} (x is None) or at {x}."""
    if a == ABSENT:
        return 1.0 if x is None else 0.0
    r = track.r[a]
    if x is None:
        return 1.0 - r
    return r * math.exp(gaussian_logpdf(x, track.means[a], track.covs[a]))


def evaluate_set_density(pmbm: ClusteredPmbm, X) -> float:
    """Multi-object density of the unlabelled clustered PMBM at the set X.

    Brute-force enumeration of every way to attribute the elements of X to the
    PPP or to distinct tracks; intended as a testing oracle for small sets.
    """
    X = [np.asarray(x, dtype=float).reshape(-1) for x in X]
    if len(X) > MAX_ORACLE_CARDINALITY:
        raise ValueError(f"set density oracle limited to {MAX_ORACLE_CARDINALITY} elements")
    dim = pmbm.ppp.dim
    if any(x.size != dim for x in X):
        raise ValueError("state dimension mismatch")

    ids = [t for c in pmbm.clusters for t in c.track_ids]
    ppp_at = [pmbm.ppp.intensity(x) for x in X]
    # cache Bernoulli values: (track, hyp, element or None)
    cache: dict[tuple[int, int, int | None], float] = {}

    def bern(t: int, a: int, e: int | None) -> float:
        key = (t, a, e)
        if key not in cache:
            cache[key] = _bernoulli_value(pmbm.tracks[t], a, None if e is None else X[e])
        return cache[key]

    labels = [0] + ids
    total = 0.0
    for owner in itertools.product(labels, repeat=len(X)):
        taken = [o for o in owner if o != 0]
        if len(taken) != len(set(taken)):
            continue
        element_of = {o: e for e, o in enumerate(owner) if o != 0}
        value = math.prod(ppp_at[e] for e, o in enumerate(owner) if o == 0)
        for cl in pmbm.clusters:
            if value == 0.0:
                break
            mix = 0.0
            for w, row in zip(cl.weights, cl.choices):
                term = w
                for t, a in zip(cl.track_ids, row):
                    term *= bern(t, int(a), element_of.get(t))
                    if term == 0.0:
                        break
                mix += term
            value *= mix
        total += value
    return math.exp(-pmbm.ppp.total) * total


def compact(tracks: Mapping[int, Track], cluster: Cluster) -> tuple[dict[int, Track], Cluster]:
    """Drop hypotheses no global references and tracks absent from every global.

    Hypothesis indices are renumbered densely, keeping their order.
    """
    keep_cols, out = [], {}
    choices = cluster.choices.copy()
    for c, t in enumerate(cluster.track_ids):
        col = choices[:, c]
        used = np.unique(col[col != ABSENT])
        if used.size == 0:
            continue
        keep_cols.append(c)
        track = tracks[t]
        if used.size < len(track):
            mapping = np.full(len(track), ABSENT, dtype=np.int64)
            mapping[used] = np.arange(used.size)
            present = col != ABSENT
            col[present] = mapping[col[present]]
            track = track.take(used)
        out[t] = track
    ids = tuple(cluster.track_ids[c] for c in keep_cols)
    choices = choices[:, keep_cols]
    if len(keep_cols) < len(cluster.track_ids):
        choices, weights = coalesce(choices, cluster.weights)
        choices, weights = sort_globals(choices, weights)
    else:
        weights = cluster.weights
    return out, Cluster(ids, weights, choices)
