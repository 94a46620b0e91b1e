import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpmbm.filter import FilterParams, PmbmFilter, new_track_components, predict, prune_ppp, step, update_cluster
from cpmbm.gating import gate_tracks
from cpmbm.lingauss import MeasurementModel, MotionModel, innovation_batch
from cpmbm.rfs import ABSENT, Cluster, ClusteredPmbm, PoissonIntensity, Track


def single(r, mean=(0.0, 0.0, 0.0, 0.0), tid=0):
    return Track(tid, [r], [list(mean)], np.eye(4)[None])


def pmbm_of(tracks, weights=None, choices=None, ppp=None):
    ids = tuple(t.id for t in tracks)
    if choices is None:
        choices, weights = [[0] * len(tracks)], [1.0]
    ppp = PoissonIntensity.empty(4) if ppp is None else ppp
    return ClusteredPmbm(ppp, {t.id: t for t in tracks}, (Cluster(ids, weights, choices),))


def run_update(tracks, cluster, Z, model, params=FilterParams(), cap=20):
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    gates = gate_tracks(tracks, Z, model, params.gating, params.gate_threshold)
    inn = {t.id: innovation_batch(t.means, t.covs, model) for t in tracks}
    new = new_track_components(PoissonIntensity.empty(4), Z, model)
    return update_cluster(tracks, cluster, np.arange(Z.shape[0]), Z, inn, gates, new, model, params, cap, 1, 100)


def test_predict_examples():
    cv = MotionModel.constant_velocity(0.01, p_s=0.99)
    out = predict(pmbm_of([single(0.8, (0, 1, 0, 0))]), cv)
    assert out.tracks[0].r[0] == pytest.approx(0.792)
    np.testing.assert_allclose(out.tracks[0].means[0], [1, 1, 0, 0])
    birth = PoissonIntensity([3.0] * 4, np.zeros((4, 4)), np.tile(np.eye(4), (4, 1, 1)))
    out = predict(ClusteredPmbm.empty(4), cv, birth)
    assert out.ppp.total == pytest.approx(12.0)


def test_predict_without_survival_keeps_hypotheses():
    dead = MotionModel(np.eye(4), np.zeros((4, 4)), 0.0)
    out = predict(pmbm_of([single(0.8)]), dead)
    assert out.tracks[0].r[0] == 0.0


def test_prune_ppp_examples():
    ppp = PoissonIntensity([1e-6, 0.5], np.zeros((2, 4)), np.tile(np.eye(4), (2, 1, 1)))
    assert prune_ppp(ppp, 1e-5).weights.tolist() == [0.5]
    assert prune_ppp(ppp, 1e-7) is ppp
    assert len(prune_ppp(ppp, 0.9)) == 0


def test_misdetection_update_examples():
    model = MeasurementModel.position(p_d=0.9)
    tr = single(0.5)
    cl = Cluster((0,), [0.5, 0.5], [[0], [ABSENT]])
    tracks, out, n_before = run_update([tr], cl, np.zeros((0, 2)), model)
    assert n_before == 2
    (a,) = out.choices[out.choices[:, 0] != ABSENT, 0]
    assert tracks[0].r[a] == pytest.approx(0.05 / 0.55)
    # the misdetection factor 1 - r p_D = 0.55 against 1 for the empty hypothesis
    present = out.choices[:, 0] != ABSENT
    assert out.weights[present][0] == pytest.approx(0.55 / 1.55)


def test_zero_detection_probability_leaves_prior():
    model = MeasurementModel.position(p_d=0.0, clutter_rate=1.0, area=100.0)
    tr = Track(0, [0.7, 0.4], [[0.0] * 4, [3.0, 0, 0, 0]], np.tile(np.eye(4), (2, 1, 1)))
    cl = Cluster((0,), [0.8, 0.2], [[0], [1]])
    tracks, out, _ = run_update([tr], cl, [[0.1, 0.0]], model)
    own = out.choices[:, 0]
    np.testing.assert_allclose(tracks[0].r[own], [0.7, 0.4])
    np.testing.assert_allclose(out.weights, [0.8, 0.2])


def test_clutter_dominated_new_track():
    model = MeasurementModel.position(p_d=0.9, clutter_rate=1e6, area=1.0)
    ppp = PoissonIntensity([1e-3], np.zeros((1, 4)), np.eye(4)[None])
    new = new_track_components(ppp, np.array([[0.0, 0.0]]), model)
    assert new.r[0] < 1e-8
    assert new.log_weight[0] == pytest.approx(math.log(1e6), rel=1e-9)


def test_new_track_without_clutter_is_certain():
    model = MeasurementModel.position(p_d=0.9)
    ppp = PoissonIntensity([0.1], np.zeros((1, 4)), np.eye(4)[None])
    new = new_track_components(ppp, np.array([[1.0, 0.0]]), model)
    assert new.r[0] == pytest.approx(1.0)
    assert new.means[0, 0] == pytest.approx(0.5)


def test_detection_child_has_unit_existence():
    model = MeasurementModel.position(p_d=1.0)
    tracks, out, _ = run_update([single(0.6)], Cluster((0,), [1.0], [[0]]), [[0.2, 0.0]], model)
    best = out.choices[0]
    assert tracks[0].r[best[0]] == 1.0
    assert out.track_ids == (0,)  # empty PPP: the new-track Bernoulli has r = 0 and is dropped
    # with p_D = 1 the misdetection child has zero existence and is absent
    assert np.all(tracks[0].r[out.choices[:, 0][out.choices[:, 0] != ABSENT]] == 1.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        FilterParams(gamma_mbm=0.0)
    with pytest.raises(ValueError):
        FilterParams(gating="voronoi")
    assert FilterParams().cluster_cap(0) == 20 and FilterParams().cluster_cap(3) == 60


def scene(seed):
    g = np.random.default_rng(seed)
    model = MeasurementModel.position(p_d=0.9, clutter_rate=2.0, area=40.0**2)
    motion = MotionModel.constant_velocity(0.01)
    n = int(g.integers(0, 5))
    tracks = [Track(t, g.uniform(0.3, 1, 2), np.column_stack([g.uniform(0, 40, (2, 1)), np.zeros((2, 1)),
                                                              g.uniform(0, 40, (2, 1)), np.zeros((2, 1))]),
                    np.tile(np.eye(4), (2, 1, 1))) for t in range(n)]
    clusters = tuple(Cluster((t.id,), [0.6, 0.4], [[0], [1]]) for t in tracks)
    ppp = PoissonIntensity([0.05], [[20.0, 0, 20.0, 0]], [np.diag([400.0, 1, 400.0, 1])])
    pmbm = ClusteredPmbm(ppp, {t.id: t for t in tracks}, clusters, next_id=n, time=3)
    Z = g.uniform(0, 40, (int(g.integers(0, 7)), 2))
    return pmbm, Z, motion, model


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.booleans())
def test_step_invariants(seed, clustered, merge):
    pmbm, Z, motion, model = scene(seed)
    params = FilterParams(clustered=clustered, merge=merge)
    post, stats = step(pmbm, Z, motion, model, None, params)
    post.check_partition()
    assert post.time == 4 and post.next_id == pmbm.next_id + len(Z)
    for cl in post.clusters:
        assert cl.weights.sum() == pytest.approx(1.0)
        assert np.all(np.diff(cl.weights) <= 1e-15)
        n_prior = sum(t in pmbm.tracks for t in cl.track_ids)
        assert len(cl) <= (params.cluster_cap(n_prior) if clustered else params.n_h)
    for tr in post.tracks.values():
        assert np.all((tr.r >= 0) & (tr.r <= 1))
    assert stats.n_clusters == len(post.clusters)
    assert stats.n_gh_after == sum(len(c) for c in post.clusters)


def test_filter_tracks_a_single_target():
    model = MeasurementModel.position(p_d=0.95, clutter_rate=1.0, area=100.0**2)
    motion = MotionModel.constant_velocity(0.01)
    birth = PoissonIntensity([0.1], [[50.0, 0, 50.0, 0]], [np.diag([100.0**2, 1, 100.0**2, 1])])
    f = PmbmFilter(motion, model, lambda k: birth)
    g = np.random.default_rng(0)
    x = np.array([10.0, 1.0, 20.0, 0.5])
    for _ in range(15):
        x = motion.F @ x
        f.step(x[[0, 2]] + g.standard_normal(2))
    est = f.estimate()
    assert est.shape[0] == 1
    assert np.linalg.norm(est[0, [0, 2]] - x[[0, 2]]) < 3.0
