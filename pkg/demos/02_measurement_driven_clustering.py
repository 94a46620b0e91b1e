"""Group tracks into independent clusters from their gates, then re-cluster the mixture.

Tracks that can share a measurement must be updated jointly; everything else
factorises. Misdetected tracks have empty gates and stay with their previous
cluster so that existing correlations are never split by accident.
"""
import numpy as np

from cpmbm.clustering import ClusterPartition, cluster_measurement_driven, recluster
from cpmbm.rfs import Cluster, ClusteredPmbm, PoissonIntensity, Track

gates = {0: [0], 1: [0, 1], 2: [1], 3: [2], 4: [2], 5: [], 6: []}
previous = ClusterPartition((frozenset({0, 1, 2, 3, 4}), frozenset({5, 6})))
partition = cluster_measurement_driven(gates, previous)
print("clusters:", sorted(sorted(c) for c in partition.clusters))

# a joint mixture over tracks 0..2, re-clustered into the new partition
tracks = {t: Track(t, [0.9, 0.6], [[t, 0, 0, 0], [t + 0.5, 0, 0, 0]], np.tile(np.eye(4), (2, 1, 1)))
          for t in range(3)}
joint = Cluster((0, 1, 2), [0.5, 0.3, 0.2], [[0, 0, 0], [1, 0, 1], [0, 1, 1]])
pmbm = ClusteredPmbm(PoissonIntensity.empty(4), tracks, (joint,))
split = recluster(pmbm, ClusterPartition((frozenset({0, 2}), frozenset({1}))))
for cl in split.clusters:
    print(f"tracks {cl.track_ids}: weights {np.round(cl.weights, 3).tolist()} choices {cl.choices.tolist()}")
print("marginal of track 1 before:", pmbm.marginal_weights(1), "after:", split.marginal_weights(1))
