"""Swap hypotheses between tracks so that each track covers one region.

After close crossings a track can hold one hypothesis on each side of the
crossing, which ties two tracks into the same cluster forever. Swapping which
track owns which hypothesis, per global hypothesis, leaves the set density
unchanged but lets the tracks separate again.
"""
import numpy as np

from cpmbm.reduction import MergeParams, divergent_tracks, inter_track_swap
from cpmbm.rfs import Cluster, ClusteredPmbm, PoissonIntensity, Track, evaluate_set_density

cov = np.tile(np.eye(4), (2, 1, 1))
tracks = {1: Track(1, [0.9, 0.8], [[0, 0, 0, 0], [40, 0, 0, 0]], cov),
          2: Track(2, [0.85, 0.7], [[41, 0, 0, 0], [1, 0, 0, 0]], cov)}
cluster = Cluster((1, 2), [0.7, 0.3], [[0, 0], [1, 1]])
print("divergent before:", divergent_tracks(tracks, cluster, 50.0))

out, swapped = inter_track_swap(tracks, cluster, MergeParams(swap=True))
for t in (1, 2):
    print(f"track {t} x-positions before {tracks[t].means[:, 0].tolist()} after {out[t].means[:, 0].tolist()}")
print("divergent after:", divergent_tracks(out, swapped, 50.0))

ppp = PoissonIntensity.empty(4)
X = [np.array([0.5, 0, 0, 0]), np.array([40.5, 0, 0, 0])]
a = evaluate_set_density(ClusteredPmbm(ppp, tracks, (cluster,)), X)
b = evaluate_set_density(ClusteredPmbm(ppp, out, (swapped,)), X)
print(f"set density at a test set: {a:.6e} before, {b:.6e} after")
