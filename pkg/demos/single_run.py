"""One optimization run at the default configuration, iteration by iteration.

Shows the rate climbing under the alternating updates and the final power
split across the streams.  Run with ``python3 demos/single_run.py [trace.csv]``.
"""
import sys

import numpy as np

from nfsim import optimizer as opt
from nfsim.config import SystemConfig
from nfsim.harness import ScenarioSpec, generate_scenario, initial_rng

cfg = SystemConfig()
sc = generate_scenario(ScenarioSpec.from_config(cfg), 0)
res = opt.run_bcd(sc.channels, cfg.noise_var, cfg.budget, cfg.eta, cfg.bcd, rng=initial_rng(sc.seed))

rates = res.trace.rates()
print(f"start {res.trace.initial_wsr:.3f} bits/s/Hz")
for i in sorted({0, 1, 4, 9, 19, 49, len(rates) - 1} & set(range(len(rates)))):
    print(f"iteration {i + 1:>3}: {rates[i]:.4f}")
print(f"{'converged' if res.converged else 'stopped at the cap'} after {res.iterations} iterations")

power_mw = 1e3 * res.power.amplitudes ** 2
print("power per stream (mW):")
print(np.array2string(power_mw, precision=3, suppress_small=True))
print(f"total {power_mw.sum():.3f} mW of {1e3 * cfg.budget:.3f} mW")

if len(sys.argv) > 1:
    res.trace.to_csv(sys.argv[1])
    print(f"trace written to {sys.argv[1]}")
