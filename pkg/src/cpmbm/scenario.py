"""Simulation scenarios: configuration, ground truth, measurements and filter birth model.

Scenario 1 places groups of four targets on a square grid. The targets of a
group start at the corners of a 300 x 300 square around the group centre,
meet at the centre at k = 50 and continue straight; one of them dies there.
Scenario 2 has Poisson births near the centre of the area and geometric
lifetimes.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .filter import FilterParams
from .lingauss import MeasurementModel, MotionModel
from .rfs import PoissonIntensity

GROUP_SPACING = 150.0
GROUP_SIDE = 300.0
MEET_STEP = 50

# per N_sim = 1..4: (n_g, n_b, n_a, d_a, lambda_c)
PRESETS = {
    1: {1: (4, 16, 14, 400.0, 2.25), 2: (16, 64, 56, 750.0, 6.25),
        3: (64, 256, 224, 1350.0, 20.25), 4: (256, 1024, 895, 2550.0, 72.25)},
    2: {1: (None, 16, 6, 600.0, 24.0), 2: (None, 64, 24, 1200.0, 96.0),
        3: (None, 256, 96, 1800.0, 216.0), 4: (None, 1024, 374, 2400.0, 384.0)},
}
PROCESS_NOISE = {1: 0.01, 2: 0.2}

_NESTED = {
    "gating": ("method", "gamma"),
    "thresholds": ("gamma_p", "gamma_b", "gamma_mbm", "gamma_m", "gamma_s"),
    "caps": ("n_h", "n_h_c_factor"),
    "reduction": ("merge", "swap"),
    "filter": ("mode", "clustered"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    n_sim: int = 1
    n_g: int | None = 4
    n_b: int = 16
    d_a: float = 400.0
    lambda_c: float = 2.25
    steps: int = 101
    seed: int = 0
    p_d: float = 0.9
    p_s: float = 0.99
    q: float = 0.01
    gating: dict = field(default_factory=lambda: {"method": "kdtree", "gamma": 4.5})
    thresholds: dict = field(default_factory=lambda: {"gamma_p": 1e-5, "gamma_b": 1e-5, "gamma_mbm": 1e-4,
                                                      "gamma_m": 0.25, "gamma_s": 50.0})
    caps: dict = field(default_factory=lambda: {"n_h": 200, "n_h_c_factor": 20})
    reduction: dict = field(default_factory=lambda: {"merge": False, "swap": False})
    filter: dict = field(default_factory=lambda: {"mode": "pmbm", "clustered": True})

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if self.scenario == 1:
            if self.n_g is None or self.n_g < 1 or math.isqrt(self.n_g) ** 2 != self.n_g:
                raise ValueError("scenario 1 needs a perfect-square number of groups")
        if self.steps < 1 or self.d_a <= 0 or self.lambda_c < 0 or self.n_b < 0:
            raise ValueError("invalid scenario dimensions")
        if not (0 <= self.p_d <= 1 and 0 <= self.p_s <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        for key, allowed in _NESTED.items():
            unknown = set(getattr(self, key)) - set(allowed)
            if unknown:
                raise ValueError(f"unknown keys in {key}: {sorted(unknown)}")
        if self.filter.get("mode", "pmbm") not in ("pmbm", "pmb"):
            raise ValueError("filter.mode must be 'pmbm' or 'pmb'")

    @classmethod
    def preset(cls, scenario: int, n_sim: int, **overrides) -> "ScenarioConfig":
        """Configuration of one of the tabulated simulations (N_sim = 1..4)."""
        try:
            n_g, n_b, _, d_a, lam = PRESETS[scenario][n_sim]
        except KeyError:
            raise ValueError(f"no preset for scenario {scenario}, N_sim {n_sim}") from None
        base = dict(scenario=scenario, n_sim=n_sim, n_g=n_g, n_b=n_b, d_a=d_a, lambda_c=lam,
                    q=PROCESS_NOISE[scenario])
        base.update(overrides)
        return cls(**base)

    @property
    def expected_alive(self) -> float:
        return PRESETS[self.scenario].get(self.n_sim, (None, None, math.nan))[2]

    # configuration files
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        defaults = cls()
        for key in _NESTED:
            if key in d:
                merged = dict(getattr(defaults, key))
                merged.update(d[key] or {})
                d[key] = merged
        if "scenario" in d and "n_sim" in d:
            preset = cls.preset(d["scenario"], d["n_sim"])
            base = preset.to_dict()
            base.update(d)
            d = base
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError("configuration file must hold a mapping")
        return cls.from_dict(data)

    # models
    def motion_model(self) -> MotionModel:
        return MotionModel.constant_velocity(self.q, 1.0, self.p_s)

    def measurement_model(self) -> MeasurementModel:
        return MeasurementModel.position(self.p_d, self.lambda_c, self.d_a**2)

    def filter_params(self) -> FilterParams:
        th = self.thresholds
        return FilterParams(
            gamma_p=th["gamma_p"], gamma_b=th["gamma_b"], gamma_mbm=th["gamma_mbm"],
            n_h=self.caps["n_h"], n_h_c_factor=self.caps["n_h_c_factor"],
            gating=self.gating["method"], gamma_g=self.gating.get("gamma"),
            clustered=bool(self.filter["clustered"]), pmb=self.filter["mode"] == "pmb",
            merge=bool(self.reduction["merge"]), swap=bool(self.reduction["swap"]),
            gamma_m=th["gamma_m"], gamma_s=th["gamma_s"],
        )


@dataclass(frozen=True)
class Trajectory:
    """Target alive on time steps [birth, death); ``states[i]`` is the state at step birth + i."""

    birth: int
    death: int
    states: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    targets: tuple[Trajectory, ...]
    steps: int

    def alive_at(self, k: int) -> np.ndarray:
        """States of the targets alive at step k (1-based), shape (N, 4)."""
        out = [t.states[k - t.birth] for t in self.targets if t.birth <= k < t.death]
        return np.array(out).reshape(-1, 4)

    def n_alive(self) -> np.ndarray:
        return np.array([sum(t.birth <= k < t.death for t in self.targets) for k in range(1, self.steps + 1)])


def rng(seed: int, run: int = 0, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, Monte Carlo run, stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run, stream)))


def group_centres(cfg: ScenarioConfig) -> np.ndarray:
    side = math.isqrt(cfg.n_g)
    offs = (np.arange(side) - (side - 1) / 2) * GROUP_SPACING + cfg.d_a / 2
    gx, gy = np.meshgrid(offs, offs, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def gen_scenario1(cfg: ScenarioConfig) -> GroundTruth:
    """Deterministic crossing groups; the top-left target of each group dies at k = 50."""
    if cfg.scenario != 1:
        raise ValueError("not a scenario 1 configuration")
    half = GROUP_SIDE / 2
    # top-left first: that target dies at the meeting step
    corners = np.array([[-half, half], [half, half], [half, -half], [-half, -half]])
    k = np.arange(1, cfg.steps + 1)[:, None]
    targets = []
    for centre in group_centres(cfg):
        for i, corner in enumerate(corners):
            v = -corner / (MEET_STEP - 1)
            pos = centre + corner + (k - 1) * v
            states = np.column_stack([pos[:, 0], np.full(cfg.steps, v[0]), pos[:, 1], np.full(cfg.steps, v[1])])
            death = MEET_STEP if i == 0 else cfg.steps + 1
            targets.append(Trajectory(1, death, states[:death - 1]))
    return GroundTruth(tuple(targets), cfg.steps)


def gen_scenario2(cfg: ScenarioConfig, run: int = 0) -> GroundTruth:
    """Poisson births at every step, survival probability p_S, noisy constant-velocity motion."""
    if cfg.scenario != 2:
        raise ValueError("not a scenario 2 configuration")
    g = rng(cfg.seed, run, 0)
    motion = cfg.motion_model()
    chol_q = np.linalg.cholesky(motion.Q + 1e-12 * np.eye(4))
    mean = np.array([cfg.d_a / 2, 0.0, cfg.d_a / 2, 0.0])
    spread = 60.0 * cfg.n_sim
    std = np.array([spread, 1.0, spread, 1.0])
    targets = []
    for k in range(1, cfg.steps + 1):
        for _ in range(g.poisson(cfg.n_b / 100)):
            x = mean + std * g.standard_normal(4)
            states = [x]
            death = k + 1
            while death <= cfg.steps and g.random() < cfg.p_s:
                x = motion.F @ x + chol_q @ g.standard_normal(4)
                states.append(x)
                death += 1
            targets.append(Trajectory(k, death, np.array(states)))
    return GroundTruth(tuple(targets), cfg.steps)


def gen_truth(cfg: ScenarioConfig, run: int = 0) -> GroundTruth:
    return gen_scenario1(cfg) if cfg.scenario == 1 else gen_scenario2(cfg, run)


def gen_measurements(truth: GroundTruth, model: MeasurementModel, area: float,
                     generator: np.random.Generator | int = 0, return_clutter: bool = False):
    """Per-step measurement sets: detections with probability p_D plus uniform Poisson clutter on [0, area]^2.

    Detections come first in each set. With ``return_clutter`` the per-step
    clutter counts are returned as a second value.
    """
    g = generator if isinstance(generator, np.random.Generator) else np.random.default_rng(generator)
    chol_r = np.linalg.cholesky(model.R)
    out, n_clutter = [], []
    for k in range(1, truth.steps + 1):
        X = truth.alive_at(k)
        detected = X[g.random(X.shape[0]) < model.p_d]
        Z = detected @ model.H.T + g.standard_normal((detected.shape[0], model.dim)) @ chol_r.T
        clutter = g.uniform(0.0, area, size=(g.poisson(model.clutter_rate), model.dim))
        out.append(np.vstack([Z, clutter]))
        n_clutter.append(clutter.shape[0])
    return (out, np.array(n_clutter)) if return_clutter else out


def filter_birth_model(cfg: ScenarioConfig) -> Callable[[int], PoissonIntensity]:
    """Birth intensity of the filter for each time step k (1-based)."""
    mean = np.array([cfg.d_a / 2, 0.0, cfg.d_a / 2, 0.0])
    cov = np.diag([(1.1 * cfg.d_a) ** 2, 1.0, (1.1 * cfg.d_a) ** 2, 1.0])

    def weight(k: int) -> float:
        if cfg.scenario == 1:
            return 3.0 * cfg.n_g if k == 1 else 0.005
        return cfg.n_b / 100

    def birth(k: int) -> PoissonIntensity:
        return PoissonIntensity([weight(k)], mean[None], cov[None])

    return birth
