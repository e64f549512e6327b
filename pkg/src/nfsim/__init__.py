"""Near-field multiuser MIMO downlink through a stacked intelligent metasurface.

Submodules
----------
geometry   element, user and BS coordinates
channel    inter-layer, feed and user channel matrices
cascade    SIM phase state and the wave-domain transfer matrix
rate       achievable rates and the WMMSE surrogate
optimizer  block coordinate descent over powers and phases
harness    scenarios, Monte Carlo sweeps and CSV output
"""
from .cascade import PhaseState, assemble_cascade
from .channel import ChannelSet, Wavelength, build_channels
from .config import SystemConfig
from .errors import ConfigurationError, DegenerateGeometryError, NumericalError
from .harness import ScenarioSpec, SweepSpec, emit_csv, generate_scenario, run_sweep
from .optimizer import BcdConfig, run_bcd
from .rate import weighted_sum_rate

__version__ = "0.1.0"

__all__ = [
    "PhaseState", "assemble_cascade", "ChannelSet", "Wavelength", "build_channels",
    "SystemConfig", "ConfigurationError", "DegenerateGeometryError", "NumericalError",
    "ScenarioSpec", "SweepSpec", "emit_csv", "generate_scenario", "run_sweep",
    "BcdConfig", "run_bcd", "weighted_sum_rate",
]
