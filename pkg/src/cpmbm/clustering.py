"""Measurement-driven clustering of tracks and re-clustering of a clustered PMBM.

Tracks are grouped into the connected components of the graph that links two
tracks whenever they gate a common measurement. Misdetected tracks (empty
gate) are linked through a dummy measurement shared by the tracks that were in
the same cluster at the previous time step.

Re-clustering restricts each old cluster's global hypotheses to the tracks of
a new cluster, coalesces duplicates, and forms the product over the old
clusters with a best-first (K-best) enumeration.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .rfs import Cluster, ClusteredPmbm, DegenerateHypothesesError, coalesce, sort_globals


class UnionFind:
    def __init__(self, items: Iterable = ()):
        self.parent = {x: x for x in items}
        self.rank = {x: 0 for x in self.parent}

    def add(self, x) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.rank[x] = 0

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> list[list]:
        out: dict = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return list(out.values())


@dataclass(frozen=True)
class ClusterPartition:
    """A partition of track ids; ``provenance`` maps track id -> cluster index."""

    clusters: tuple[frozenset, ...]
    provenance: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        clusters = tuple(frozenset(int(t) for t in c) for c in self.clusters)
        seen: set[int] = set()
        for c in clusters:
            if seen & c:
                raise ValueError("clusters overlap")
            seen |= c
        object.__setattr__(self, "clusters", clusters)
        if not self.provenance:
            object.__setattr__(self, "provenance", {t: i for i, c in enumerate(clusters) for t in c})

    @classmethod
    def of(cls, pmbm: ClusteredPmbm) -> "ClusterPartition":
        return cls(tuple(frozenset(c.track_ids) for c in pmbm.clusters))

    @property
    def track_ids(self) -> frozenset:
        return frozenset().union(*self.clusters) if self.clusters else frozenset()

    def __len__(self) -> int:
        return len(self.clusters)


def cluster_measurement_driven(gates: Mapping[int, Iterable[int]], prev: ClusterPartition) -> ClusterPartition:
    """Cluster tracks by shared gated measurements.

    Parameters
    ----------
    gates : mapping of track id -> gated measurement indices
        The union gate of every live track (empty for misdetected tracks).
    prev : ClusterPartition
        Partition at the previous time step, used to link misdetected tracks.
        Tracks unknown to ``prev`` count as singleton previous clusters.
    """
    uf = UnionFind(gates)
    owner: dict = {}
    next_new = len(prev.clusters)
    for t, g in gates.items():
        g = list(g)
        if not g:
            prev_cluster = prev.provenance.get(t)
            if prev_cluster is None:
                prev_cluster, next_new = next_new, next_new + 1
            g = [("dummy", prev_cluster)]
        for z in g:
            z = z if isinstance(z, tuple) else int(z)
            if z in owner:
                uf.union(owner[z], t)
            else:
                owner[z] = t
    groups = sorted((sorted(g) for g in uf.groups()), key=lambda g: g[0])
    return ClusterPartition(tuple(frozenset(g) for g in groups))


def measurement_sets(partition: ClusterPartition, gates: Mapping[int, Iterable[int]]) -> list[np.ndarray]:
    """Union of the gated measurements of the tracks of each cluster."""
    out = []
    for c in partition.clusters:
        parts = [np.asarray(list(gates[t]), dtype=np.int64) for t in c]
        out.append(np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64))
    return out


def kbest_merged_hypotheses(weights: Sequence[Sequence[float]], gamma_mbm: float = 0.0,
                            k_max: int | float = math.inf) -> list[tuple[tuple[int, ...], float]]:
    """Best products of one weight per list, in descending order.

    Enumeration is best-first with a priority queue; it stops once ``k_max``
    products are produced or the next product's normalised weight (relative
    to the product of the list sums) falls below ``gamma_mbm``. The best
    product is always returned. Ties are broken by the lexicographic index
    tuple.

    Parameters
    ----------
    weights : sequence of descending-sorted weight lists
    gamma_mbm : float
        Pruning threshold on normalised weight.
    k_max : int
        Maximum number of products.
    """
    lists = [np.asarray(w, dtype=float) for w in weights]
    if not lists:
        return [((), 1.0)]
    for w in lists:
        if w.size == 0:
            raise ValueError("every weight list must be non-empty")
        if np.any(np.diff(w) > 0):
            raise ValueError("weight lists must be sorted in descending order")
    norm = math.prod(float(w.sum()) for w in lists)
    if norm <= 0:
        raise DegenerateHypothesesError("weight lists carry no mass")

    def product(idx: tuple[int, ...]) -> float:
        return math.prod(float(w[i]) for w, i in zip(lists, idx))

    start = (0,) * len(lists)
    heap = [(-product(start), start, 0)]
    out: list[tuple[tuple[int, ...], float]] = []
    while heap and len(out) < k_max:
        neg_w, idx, last = heapq.heappop(heap)
        if out and -neg_w / norm < gamma_mbm:
            break
        out.append((idx, -neg_w))
        # successors increment one position at or after the last incremented one,
        # so every tuple has exactly one generating parent
        for pos in range(last, len(lists)):
            if idx[pos] + 1 < lists[pos].size:
                child = idx[:pos] + (idx[pos] + 1,) + idx[pos + 1:]
                heapq.heappush(heap, (-product(child), child, pos))
    return out


def restrict(cluster: Cluster, track_ids: Sequence[int]) -> Cluster:
    """Marginalise a cluster onto a subset of its tracks (duplicates coalesced)."""
    cols = [cluster.track_ids.index(t) for t in track_ids]
    choices, weights = coalesce(cluster.choices[:, cols], cluster.weights)
    choices, weights = sort_globals(choices, weights)
    return Cluster(tuple(track_ids), weights, choices)


def recluster(pmbm: ClusteredPmbm, new: ClusterPartition, gamma_mbm: float = 0.0,
              k_max: int | float | Callable[[int], float] = math.inf) -> ClusteredPmbm:
    """Re-express a clustered PMBM on a new partition of its tracks.

    ``k_max`` may be a callable of the number of tracks in the new cluster.
    The Poisson intensity is unchanged.
    """
    if new.track_ids != frozenset(pmbm.tracks):
        raise ValueError("new partition does not cover the tracks of the PMBM")
    old_of = pmbm.cluster_of()
    new_clusters = []
    for members in new.clusters:
        ordered: list[int] = []
        by_old: dict[int, list[int]] = {}
        for t in sorted(members, key=lambda t: (old_of[t], pmbm.clusters[old_of[t]].track_ids.index(t))):
            by_old.setdefault(old_of[t], []).append(t)
        for c in sorted(by_old):
            ordered.extend(by_old[c])
        old = [pmbm.clusters[c] for c in sorted(by_old)]
        if len(old) == 1 and set(old[0].track_ids) == set(members):
            new_clusters.append(old[0])
            continue
        parts = [restrict(pmbm.clusters[c], by_old[c]) for c in sorted(by_old)]
        cap = k_max(len(members)) if callable(k_max) else k_max
        best = kbest_merged_hypotheses([p.weights for p in parts], gamma_mbm, cap)
        choices = np.array([np.concatenate([p.choices[i] for p, i in zip(parts, idx)]) for idx, _ in best],
                           dtype=np.int64).reshape(len(best), len(ordered))
        weights = np.array([w for _, w in best])
        new_clusters.append(Cluster(tuple(ordered), weights / weights.sum(), choices))
    return ClusteredPmbm(pmbm.ppp, pmbm.tracks, tuple(new_clusters), pmbm.next_id, pmbm.time)
