"""Near-field versus far-field beamforming as the SIM grows.

Users stand on one ray from the SIM, so only their distances differ.  A
planar-wave model cannot tell them apart, while the spherical-wave model
can.  Run with ``python3 demos/near_vs_far.py [trials]``.
"""
import sys

from nfsim.config import SystemConfig
from nfsim.geometry import rayleigh_distance
from nfsim.harness import ScenarioSpec, SweepSpec, generate_scenario, mean_rates, run_sweep

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = SystemConfig(placement="inline", trials=trials)

sc = generate_scenario(ScenarioSpec.from_config(cfg), 0)
print(f"Rayleigh distance at N={cfg.elements}: {rayleigh_distance(sc.sim, sc.wavelength.wavelength):.3f} m")
print(f"users of trial 0 at {', '.join(f'{d:.2f}' for d in sc.users.distances)} m on one ray")

sweep = SweepSpec.from_config(cfg, "N", values=(16, 36, 64), compare_far=True)
records = run_sweep(sweep)
near, far = mean_rates(records), mean_rates(records, "far")

print(f"\n{'N':>4} {'near':>8} {'far':>8}   bits/s/Hz, mean of {trials} trials")
for n in sweep.values:
    print(f"{n:>4} {near[n]:8.3f} {far[n]:8.3f}")
