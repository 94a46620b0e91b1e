import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpmbm.scenario import (GROUP_SPACING, MEET_STEP, PRESETS, GroundTruth, ScenarioConfig, filter_birth_model,
                            gen_measurements, gen_scenario1, gen_scenario2, group_centres, rng)


def test_scenario1_counts():
    cfg = ScenarioConfig.preset(1, 1)
    truth = gen_scenario1(cfg)
    assert len(truth.targets) == 16
    n = truth.n_alive()
    assert n[0] == 16 and n[MEET_STEP - 2] == 16 and n[MEET_STEP - 1] == 12 and n[-1] == 12
    assert n.mean() == pytest.approx(PRESETS[1][1][2], abs=0.5)


def test_scenario1_geometry():
    cfg = ScenarioConfig.preset(1, 2)
    centres = group_centres(cfg)
    assert centres.shape == (16, 2)
    d = np.linalg.norm(centres[:, None] - centres[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() == pytest.approx(GROUP_SPACING)
    np.testing.assert_allclose(centres.mean(axis=0), [cfg.d_a / 2] * 2)
    truth = gen_scenario1(cfg)
    # every group meets at its centre at the meeting step
    meet = truth.alive_at(MEET_STEP)[:, [0, 2]]
    for c in centres:
        assert np.sum(np.all(np.isclose(meet, c), axis=1)) == 3


def test_scenario1_rejects_non_square_groups():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario=1, n_g=3)


def test_presets_table():
    cfg = ScenarioConfig.preset(1, 4)
    assert (cfg.n_g, cfg.d_a, cfg.lambda_c) == (256, 2550.0, 72.25)
    cfg = ScenarioConfig.preset(2, 3)
    assert (cfg.n_b, cfg.d_a, cfg.lambda_c, cfg.q) == (256, 1800.0, 216.0, 0.2)
    with pytest.raises(ValueError):
        ScenarioConfig.preset(2, 5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 50))
def test_scenario2_trajectories_are_well_formed(seed, run):
    cfg = ScenarioConfig.preset(2, 1, seed=seed, steps=40)
    truth = gen_scenario2(cfg, run)
    for t in truth.targets:
        assert 1 <= t.birth < t.death <= cfg.steps + 1
        assert t.states.shape == (t.death - t.birth, 4)
    assert truth.n_alive().shape == (cfg.steps,)


def test_scenario2_determinism_and_independence():
    cfg = ScenarioConfig.preset(2, 1, seed=7)
    a, b, c = gen_scenario2(cfg, 0), gen_scenario2(cfg, 0), gen_scenario2(cfg, 1)
    assert len(a.targets) == len(b.targets)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(a.targets, b.targets))
    assert [x.birth for x in a.targets] != [x.birth for x in c.targets]


def test_scenario2_birth_rate():
    cfg = ScenarioConfig.preset(2, 1, steps=2000)
    truth = gen_scenario2(cfg, 0)
    expected = cfg.n_b / 100 * cfg.steps
    assert abs(len(truth.targets) - expected) < 4 * math.sqrt(expected)


def test_measurements_without_targets_or_clutter():
    from cpmbm.lingauss import MeasurementModel

    truth = GroundTruth((), 3)
    assert [z.shape for z in gen_measurements(truth, MeasurementModel.position(), 100.0, 0)] == [(0, 2)] * 3


def test_clutter_mean_and_support():
    cfg = ScenarioConfig.preset(1, 4)
    model = cfg.measurement_model()
    scans = gen_measurements(GroundTruth((), 400), model, cfg.d_a, rng(0, 0, 1))
    counts = np.array([len(z) for z in scans])
    assert abs(counts.mean() - 72.25) < 3 * math.sqrt(72.25 / 400)
    allz = np.vstack(scans)
    assert allz.min() >= 0 and allz.max() <= cfg.d_a


def test_detection_only_measurements_are_close_to_truth():
    cfg = ScenarioConfig.preset(1, 1, p_d=1.0, lambda_c=0.0)
    truth = gen_scenario1(cfg)
    scans = gen_measurements(truth, cfg.measurement_model(), cfg.d_a, 0)
    assert len(scans[0]) == 16
    np.testing.assert_allclose(scans[0], truth.alive_at(1)[:, [0, 2]], atol=6.0)


def test_filter_birth_model():
    cfg = ScenarioConfig.preset(1, 1)
    birth = filter_birth_model(cfg)
    assert birth(1).weights.tolist() == [12.0] and birth(2).weights.tolist() == [0.005]
    cfg2 = ScenarioConfig.preset(2, 1)
    b = filter_birth_model(cfg2)(5)
    assert b.weights.tolist() == [0.16]
    assert b.covs[0, 0, 0] == pytest.approx((1.1 * 600) ** 2)
    np.testing.assert_allclose(b.means[0], [300, 0, 300, 0])


def test_rng_streams_are_distinct():
    assert rng(1, 0, 0).random() == rng(1, 0, 0).random()
    assert rng(1, 0, 0).random() != rng(1, 0, 1).random()
    assert rng(1, 0, 0).random() != rng(1, 1, 0).random()


def test_yaml_round_trip(tmp_path):
    cfg = ScenarioConfig.preset(2, 2, seed=11, reduction={"merge": True, "swap": True})
    path = tmp_path / "cfg.yaml"
    cfg.save(path)
    assert ScenarioConfig.load(path) == cfg


def test_partial_config_uses_preset():
    cfg = ScenarioConfig.from_dict({"scenario": 2, "n_sim": 2, "thresholds": {"gamma_m": 0.5}})
    assert cfg.d_a == 1200.0 and cfg.thresholds["gamma_m"] == 0.5 and cfg.thresholds["gamma_mbm"] == 1e-4
    params = cfg.filter_params()
    assert params.gamma_m == 0.5 and params.gating == "kdtree"


def test_invalid_config_is_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"thresholds": {"gamma_q": 1}})
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"filter": {"mode": "glmb"}})
