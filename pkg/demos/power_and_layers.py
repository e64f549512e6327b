"""Sum rate against transmit power, for a 4-layer SIM and a single surface.

Each trial walks up the power grid and starts every budget from the
previous solution, so the per-trial curve never dips.  Run with
``python3 demos/power_and_layers.py [trials]``.
"""
import sys

from nfsim.config import SystemConfig
from nfsim.harness import SweepSpec, mean_rates, run_sweep

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = SystemConfig(trials=trials)

curves = {}
for layers in (1, 4):
    sweep = SweepSpec.from_config(cfg.replace(layers=layers), "P")
    curves[layers] = mean_rates(run_sweep(sweep))

print(f"{'P (dBm)':>8} {'L=1':>8} {'L=4':>8}   bits/s/Hz, mean of {trials} trials")
for p in sorted(curves[4]):
    print(f"{p:8g} {curves[1][p]:8.3f} {curves[4][p]:8.3f}")
