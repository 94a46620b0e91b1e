"""Track one target moving through light clutter and watch the estimate lock on.

The filter starts with no tracks. A broad birth intensity covers the area, so
the first detection creates a new Bernoulli track whose existence probability
grows as further detections confirm it.
"""
import numpy as np

from cpmbm.filter import PmbmFilter
from cpmbm.lingauss import MeasurementModel, MotionModel
from cpmbm.rfs import PoissonIntensity

area = 100.0
model = MeasurementModel.position(p_d=0.9, clutter_rate=2.0, area=area**2)
motion = MotionModel.constant_velocity(0.01)
birth = PoissonIntensity([0.05], [[area / 2, 0, area / 2, 0]], [np.diag([area**2, 1, area**2, 1])])
filt = PmbmFilter(motion, model, lambda k: birth)

g = np.random.default_rng(1)
x = np.array([20.0, 1.5, 30.0, 1.0])
for k in range(1, 31):
    x = motion.F @ x
    Z = [x[[0, 2]] + g.standard_normal(2)] if g.random() < model.p_d else []
    Z = np.vstack([np.reshape(Z, (-1, 2)), g.uniform(0, area, (g.poisson(model.clutter_rate), 2))])
    stats = filt.step(Z)
    est = filt.estimate()
    if k % 5 == 0 or k <= 3:
        where = ", ".join(f"({e[0]:.1f}, {e[2]:.1f})" for e in est) or "none"
        print(f"k={k:2d}  |Z|={len(Z)}  tracks={len(filt.state.tracks):2d}  "
              f"globals={stats.n_gh_after:3d}  estimate {where}  truth ({x[0]:.1f}, {x[2]:.1f})")
