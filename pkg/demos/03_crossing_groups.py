"""Compare the clustered and the standard filter on groups of crossing targets.

Each group has four targets starting at the corners of a square that meet in
its centre, where one of them disappears. Pass the number of steps as the
first argument to shorten the run (the full scenario has 101).
"""
import sys
import time

from cpmbm.experiment import run_once, variant_config
from cpmbm.scenario import ScenarioConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 101
cfg = ScenarioConfig.preset(1, 1, steps=steps)
for variant in ("clustered-pmbm", "standard-pmbm", "clustered-pmb"):
    t0 = time.perf_counter()
    rows = run_once(variant_config(cfg, variant), run=0)
    elapsed = time.perf_counter() - t0
    gospa = rows[:, 1]
    print(f"{variant:16s} RMS GOSPA {((gospa**2).mean()) ** 0.5:6.3f}  "
          f"clusters/step {rows[:, 5].mean():5.2f}  globals/step {rows[:, 8].mean():6.1f}  {elapsed:5.1f} s")
