"""Measurement gating for single-target hypotheses.

Three gates are provided, each with its own meaning of the threshold ``gamma``:

``ellipsoidal``
    squared Mahalanobis distance ``(z - zhat)^T S^-1 (z - zhat) <= gamma``.
``kdtree``
    Euclidean ball of radius ``gamma * sigma`` around ``zhat`` with
    ``sigma**2 = tr(S) / n_z``, answered by range queries on a k-d tree of Z.
``rtree``
    axis-aligned box ``|z_d - zhat_d| <= gamma * sqrt(S_dd)``; boxes are
    indexed in an R-tree and every measurement issues one point query.

The tree gates approximate the ellipsoid. Passing ``post_filter`` (a squared
Mahalanobis threshold) applies the exact ellipsoidal test to their candidates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .lingauss import MeasurementModel, innovation_batch
from .rfs import Track

METHODS = ("ellipsoidal", "kdtree", "rtree")
DEFAULT_GAMMA = {"ellipsoidal": 20.0, "kdtree": 4.5, "rtree": 8.0}

_EMPTY = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class GateMap:
    """Gated measurement indices per (track id, hypothesis index)."""

    per_hyp: Mapping[int, Sequence[np.ndarray]] = field(default_factory=dict)

    def __getitem__(self, key: tuple[int, int]) -> np.ndarray:
        track_id, a = key
        return self.per_hyp[track_id][a]

    def track(self, track_id: int) -> np.ndarray:
        """Union of the gates of all hypotheses of a track."""
        gates = self.per_hyp[track_id]
        if not gates:
            return _EMPTY
        return np.unique(np.concatenate(gates))

    @property
    def per_track(self) -> dict[int, np.ndarray]:
        return {t: self.track(t) for t in self.per_hyp}


def _as_points(Z, nz: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.size == 0:
        return np.zeros((0, nz))
    Z = Z.reshape(-1, Z.shape[-1]) if Z.ndim > 1 else Z.reshape(1, -1)
    if Z.shape[1] != nz:
        raise ValueError(f"measurement dimension {Z.shape[1]} does not match predicted measurements ({nz})")
    return Z


def mahalanobis_sq(zhat: np.ndarray, S: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distances, shape (N hypotheses, M measurements)."""
    nu = Z[None, :, :] - zhat[:, None, :]
    chol = np.linalg.cholesky(S)
    y = np.linalg.solve(chol[:, None], nu[..., None])[..., 0]
    return np.einsum("nmi,nmi->nm", y, y)


def _post_filter(gates, zhat, S, Z, threshold):
    out = []
    for n, g in enumerate(gates):
        if g.size:
            d2 = mahalanobis_sq(zhat[n:n + 1], S[n:n + 1], Z[g])[0]
            g = g[d2 <= threshold]
        out.append(g)
    return out


def gate_ellipsoidal(zhat, S, Z, gamma: float) -> list[np.ndarray]:
    """Exhaustive ellipsoidal gate; ``gamma`` is a squared Mahalanobis threshold."""
    if gamma <= 0:
        raise ValueError("gating threshold must be positive")
    zhat = np.asarray(zhat, dtype=float)
    S = np.asarray(S, dtype=float)
    Z = _as_points(Z, zhat.shape[-1] if zhat.size else S.shape[-1] if S.size else 0)
    if zhat.shape[0] == 0:
        return []
    if Z.shape[0] == 0:
        return [_EMPTY] * zhat.shape[0]
    gates = []
    for n in range(zhat.shape[0]):
        try:
            d2 = mahalanobis_sq(zhat[n:n + 1], S[n:n + 1], Z)[0]
        except np.linalg.LinAlgError:
            # singular innovation covariance: flag by leaving the gate empty
            gates.append(_EMPTY)
            continue
        gates.append(np.flatnonzero(d2 <= gamma))
    return gates


def gate_kdtree(zhat, S, Z, gamma: float, post_filter: float | None = None) -> list[np.ndarray]:
    """Range queries of radius ``gamma * sqrt(tr(S) / n_z)`` on a k-d tree of Z."""
    if gamma <= 0:
        raise ValueError("gating threshold must be positive")
    zhat = np.asarray(zhat, dtype=float)
    S = np.asarray(S, dtype=float)
    if zhat.shape[0] == 0:
        return []
    nz = zhat.shape[1]
    Z = _as_points(Z, nz)
    if Z.shape[0] == 0:
        return [_EMPTY] * zhat.shape[0]
    sigma = np.sqrt(np.trace(S, axis1=-2, axis2=-1) / nz)
    tree = cKDTree(Z)
    hits = tree.query_ball_point(zhat, r=gamma * sigma)
    gates = [np.array(sorted(h), dtype=np.int64) for h in hits]
    if post_filter is not None:
        gates = _post_filter(gates, zhat, S, Z, post_filter)
    return gates


class RTree:
    """Static R-tree of axis-aligned boxes, bulk loaded with Sort-Tile-Recursive.

    Parameters
    ----------
    lo, hi : (N, d) arrays
        Lower and upper corners of the boxes.
    capacity : int
        Maximum number of entries per node.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, capacity: int = 8):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.capacity = max(2, int(capacity))
        n = self.lo.shape[0]
        # levels[0] holds leaves; each level: (node_lo, node_hi, children index arrays)
        self.levels: list[tuple[np.ndarray, np.ndarray, list[np.ndarray]]] = []
        if n == 0:
            return
        entries = np.arange(n)
        lo_, hi_ = self.lo, self.hi
        while True:
            groups = self._str_pack(entries, (lo_ + hi_) / 2)
            node_lo = np.array([lo_[g].min(axis=0) for g in groups])
            node_hi = np.array([hi_[g].max(axis=0) for g in groups])
            self.levels.append((node_lo, node_hi, groups))
            if len(groups) == 1:
                break
            entries = np.arange(len(groups))
            lo_, hi_ = node_lo, node_hi

    def _str_pack(self, entries: np.ndarray, centres: np.ndarray) -> list[np.ndarray]:
        d = centres.shape[1]

        def tile(idx: np.ndarray, axis: int) -> list[np.ndarray]:
            if axis == d - 1 or idx.size <= self.capacity:
                idx = idx[np.argsort(centres[idx, axis], kind="stable")]
                return [idx[i:i + self.capacity] for i in range(0, idx.size, self.capacity)]
            leaves_here = int(np.ceil(idx.size / self.capacity))
            n_slices = int(np.ceil(leaves_here ** (1.0 / (d - axis))))
            per_slice = int(np.ceil(idx.size / n_slices))
            idx = idx[np.argsort(centres[idx, axis], kind="stable")]
            out = []
            for i in range(0, idx.size, per_slice):
                out.extend(tile(idx[i:i + per_slice], axis + 1))
            return out

        return tile(entries, 0)

    def __len__(self) -> int:
        return self.lo.shape[0]

    def query_point(self, z: np.ndarray) -> np.ndarray:
        """Indices of all boxes that contain the point ``z`` (sorted)."""
        if not self.levels:
            return _EMPTY
        z = np.asarray(z, dtype=float)
        top = len(self.levels) - 1
        frontier = np.array([0])
        for level in range(top, -1, -1):
            node_lo, node_hi, groups = self.levels[level]
            inside = np.all((node_lo[frontier] <= z) & (z <= node_hi[frontier]), axis=1)
            frontier = frontier[inside]
            if frontier.size == 0:
                return _EMPTY
            frontier = np.concatenate([groups[i] for i in frontier])
        hit = np.all((self.lo[frontier] <= z) & (z <= self.hi[frontier]), axis=1)
        return np.sort(frontier[hit])


def gate_rtree(zhat, S, Z, gamma: float, post_filter: float | None = None) -> list[np.ndarray]:
    """Point queries of each measurement against an R-tree of gating boxes."""
    if gamma <= 0:
        raise ValueError("gating threshold must be positive")
    zhat = np.asarray(zhat, dtype=float)
    S = np.asarray(S, dtype=float)
    if zhat.shape[0] == 0:
        return []
    Z = _as_points(Z, zhat.shape[1])
    if Z.shape[0] == 0:
        return [_EMPTY] * zhat.shape[0]
    half = gamma * np.sqrt(np.diagonal(S, axis1=-2, axis2=-1))
    tree = RTree(zhat - half, zhat + half)
    members: list[list[int]] = [[] for _ in range(zhat.shape[0])]
    for j, z in enumerate(Z):
        for n in tree.query_point(z):
            members[n].append(j)
    gates = [np.array(m, dtype=np.int64) for m in members]
    if post_filter is not None:
        gates = _post_filter(gates, zhat, S, Z, post_filter)
    return gates


_GATES = {"ellipsoidal": gate_ellipsoidal, "kdtree": gate_kdtree, "rtree": gate_rtree}


def gate(zhat, S, Z, method: str = "kdtree", gamma: float | None = None,
         post_filter: float | None = None) -> list[np.ndarray]:
    if method not in _GATES:
        raise ValueError(f"unknown gating method {method!r}; expected one of {METHODS}")
    gamma = DEFAULT_GAMMA[method] if gamma is None else gamma
    if method == "ellipsoidal":
        return gate_ellipsoidal(zhat, S, Z, gamma)
    return _GATES[method](zhat, S, Z, gamma, post_filter=post_filter)


def gate_tracks(tracks: Sequence[Track], Z, model: MeasurementModel, method: str = "kdtree",
                gamma: float | None = None, post_filter: float | None = None) -> GateMap:
    """Gate every hypothesis of every track against the measurement set Z."""
    tracks = list(tracks)
    if not tracks:
        return GateMap({})
    means = np.concatenate([t.means for t in tracks])
    covs = np.concatenate([t.covs for t in tracks])
    zhat, S, _, _ = innovation_batch(means, covs, model)
    flat = gate(zhat, S, _as_points(Z, model.dim), method, gamma, post_filter)
    out, start = {}, 0
    for t in tracks:
        out[t.id] = flat[start:start + len(t)]
        start += len(t)
    return GateMap(out)
