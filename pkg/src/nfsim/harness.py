"""Scenario generation, Monte Carlo sweeps and CSV emission."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .channel import ChannelSet, PathLossModel, Wavelength, build_channels
from .config import SystemConfig, dbm_to_watt
from .errors import ConfigurationError, NumericalError
from .optimizer import BcdConfig, PowerAllocation, run_bcd

log = logging.getLogger(__name__)

CSV_HEADER = ("sweep_var", "value", "trial", "placement", "mode", "L", "N", "P_dBm",
              "wsr_bits", "iters", "millis", "seed")

SWEEP_VARS = {"n": "N", "power": "P", "layers": "L"}
DEFAULT_GRIDS = {
    "N": (16, 25, 36, 49, 64),
    "L": (1, 2, 4, 6),
    "P": (0.0, 5.0, 10.0, 15.0, 20.0),
}

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def trial_seed(base_seed: int, trial: int) -> int:
    """Seed of one trial: ``base_seed XOR ((trial + 1) * 0x9E3779B97F4A7C15 mod 2**64)``.

    The multiplier is the 64-bit golden-ratio constant, so consecutive trials
    differ in many bits.  The result is a nonnegative 64-bit integer.
    """
    if trial < 0:
        raise ValueError("trial index must be nonnegative")
    return (int(base_seed) & _MASK64) ^ (((trial + 1) * _GOLDEN) & _MASK64)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulated deployment; every length in meters."""

    placement: str = "random"
    r_min: float = 2.0
    r_max: float = 4.0
    users: int = 4
    user_antennas: int = 2
    elements: int = 40
    layers: int = 4
    bs_antennas: int = 8
    mode: str = "near"
    seed: int = 0
    frequency_hz: float = 10e9
    thickness_wavelengths: float = 5.0
    n_y: int = 0
    far_field_pathloss: str = "freespace_match"
    ref_distance: float = 1.0
    pathloss_exponent: float = 2.5

    def __post_init__(self):
        if self.placement not in ("random", "inline"):
            raise ConfigurationError(f"unknown placement {self.placement!r}")
        if self.mode not in ("near", "far"):
            raise ConfigurationError(f"unknown channel mode {self.mode!r}")
        if not 0 < self.r_min <= self.r_max:
            raise ConfigurationError("need 0 < r_min <= r_max")
        if self.bs_antennas != self.users * self.user_antennas:
            raise ConfigurationError(
                f"bs_antennas={self.bs_antennas} must equal K*M={self.users * self.user_antennas}")

    @classmethod
    def from_config(cls, cfg: SystemConfig, **overrides) -> "ScenarioSpec":
        base = dict(placement=cfg.placement, r_min=cfg.r_min, r_max=cfg.r_max, users=cfg.users,
                    user_antennas=cfg.user_antennas, elements=cfg.elements, layers=cfg.layers,
                    bs_antennas=cfg.m_bs, seed=cfg.seed, frequency_hz=cfg.frequency_hz,
                    thickness_wavelengths=cfg.thickness_wavelengths, n_y=cfg.n_y,
                    far_field_pathloss=cfg.far_field_pathloss, ref_distance=cfg.ref_distance,
                    pathloss_exponent=cfg.pathloss_exponent)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ScenarioSpec":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class Scenario:
    sim: geo.SimLayout
    users: geo.UserLayout
    bs: geo.BsLayout
    wavelength: Wavelength
    channels: ChannelSet
    seed: int


def sim_layout(spec: ScenarioSpec, wl: Wavelength) -> geo.SimLayout:
    n_y = spec.n_y or None
    return geo.SimLayout.from_wavelength(wl.wavelength, spec.elements, spec.layers,
                                         spec.thickness_wavelengths, n_y=n_y)


def draw_users(spec: ScenarioSpec, rng: np.random.Generator, wavelength: float) -> geo.UserLayout:
    """Random placement draws independent distances and angles; inline shares one angle."""
    d = rng.uniform(spec.r_min, spec.r_max, size=spec.users)
    if spec.placement == "random":
        angles = rng.uniform(-np.pi / 2, np.pi / 2, size=spec.users)
    else:
        angles = np.full(spec.users, rng.uniform(-np.pi / 2, np.pi / 2))
    return geo.UserLayout(d, angles, spec.user_antennas, wavelength / 2)


def generate_scenario(spec: ScenarioSpec, trial: int) -> Scenario:
    """Layouts and channels of one trial, fully determined by ``(spec.seed, trial)``."""
    seed = trial_seed(spec.seed, trial)
    wl = Wavelength.from_frequency(spec.frequency_hz)
    sim = sim_layout(spec, wl)
    users = draw_users(spec, np.random.default_rng([seed, 0]), wl.wavelength)
    bs = geo.BsLayout(spec.bs_antennas, wl.wavelength / 2)
    pl = PathLossModel.friis(wl.wavelength, spec.ref_distance, spec.pathloss_exponent)
    channels = build_channels(sim, users, bs, wl, spec.mode, spec.far_field_pathloss, pl)
    return Scenario(sim, users, bs, wl, channels, seed)


def initial_rng(seed: int) -> np.random.Generator:
    """Stream for the initial phases; independent of the placement stream."""
    return np.random.default_rng([seed, 1])


@dataclass(frozen=True)
class SweepSpec:
    """``variable`` is ``"N"``, ``"P"`` or ``"L"``; ``values`` its grid."""

    variable: str
    values: tuple
    trials: int
    scenario: ScenarioSpec
    bcd: BcdConfig = BcdConfig()
    power_dbm: float = 10.0
    noise_var: float = dbm_to_watt(-174.0 + 10 * math.log10(20e6))
    eta: tuple | None = None
    compare_far: bool = False
    continuation: bool = True

    def __post_init__(self):
        if self.variable not in DEFAULT_GRIDS:
            raise ConfigurationError(f"swept variable must be N, P or L, got {self.variable!r}")
        if len(self.values) == 0:
            raise ConfigurationError("sweep needs at least one value")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")

    @classmethod
    def from_config(cls, cfg: SystemConfig, variable: str, values=None, trials=None,
                    compare_far=False, mode="near", **overrides) -> "SweepSpec":
        if values is None:
            raw = cfg.sweep_values.strip()
            values = tuple(float(v) for v in raw.split(",")) if raw else DEFAULT_GRIDS[variable]
        if variable in ("N", "L"):
            if any(float(v) != int(v) for v in values):
                raise ConfigurationError(f"{variable} values must be integers")
            values = tuple(int(v) for v in values)
        else:
            values = tuple(float(v) for v in values)
        return cls(variable, values, trials or cfg.trials,
                   ScenarioSpec.from_config(cfg, mode=mode, **overrides), cfg.bcd, cfg.power_dbm,
                   cfg.noise_var, tuple(cfg.eta), compare_far, bool(cfg.power_continuation))


@dataclass
class SweepRecord:
    sweep_var: str
    value: float
    trial: int
    placement: str
    mode: str
    layers: int
    n: int
    power_dbm: float
    wsr: float
    iterations: int
    millis: float
    seed: int
    failed: bool = False
    converged: bool = False
    message: str = ""

    def sort_key(self):
        return (self.value, self.trial, self.mode)


@dataclass
class TrialOutcome:
    records: list = field(default_factory=list)
    results: dict = field(default_factory=dict)


def point_spec(sweep: SweepSpec, value) -> tuple[ScenarioSpec, float]:
    """Scenario and power budget (dBm) of one sweep point."""
    if sweep.variable == "N":
        return sweep.scenario.replace(elements=int(value), n_y=0), sweep.power_dbm
    if sweep.variable == "L":
        return sweep.scenario.replace(layers=int(value)), sweep.power_dbm
    return sweep.scenario, float(value)


def run_trial(spec: ScenarioSpec, trial: int, power_dbm: float, sweep: SweepSpec,
              value, modes, warm: dict | None = None) -> TrialOutcome:
    """Run every channel mode on the same geometry and the same initial phases.

    ``warm`` maps a mode to a previous :class:`~nfsim.optimizer.BcdResult`;
    its phases and power shape seed the run instead of the random start.
    """
    out = TrialOutcome()
    budget = dbm_to_watt(power_dbm)
    for mode in modes:
        scen = generate_scenario(spec.replace(mode=mode), trial)
        start = time.perf_counter()
        init = {}
        if warm and mode in warm:
            prev = warm[mode]
            scale = math.sqrt(budget / prev.power.budget)
            init = dict(phases=prev.phases, power=PowerAllocation(prev.power.amplitudes * scale, budget))
        try:
            res = run_bcd(scen.channels, sweep.noise_var, budget, sweep.eta, sweep.bcd,
                          rng=initial_rng(scen.seed), **init)
        except NumericalError as exc:
            log.warning("trial %d (%s=%s, %s) aborted: %s", trial, sweep.variable, value, mode, exc)
            out.records.append(SweepRecord(sweep.variable, value, trial, spec.placement, mode,
                                           spec.layers, spec.elements, power_dbm, math.nan, 0,
                                           1e3 * (time.perf_counter() - start), scen.seed,
                                           failed=True, message=str(exc)))
            continue
        out.results[mode] = res
        out.records.append(SweepRecord(sweep.variable, value, trial, spec.placement, mode,
                                       spec.layers, spec.elements, power_dbm, res.wsr,
                                       res.iterations, 1e3 * (time.perf_counter() - start),
                                       scen.seed, converged=res.converged))
    return out


def run_sweep(sweep: SweepSpec, progress=None) -> list[SweepRecord]:
    """Every ``(value, trial)`` pair, plus the far-field twin when requested.

    Trial ``t`` reuses the same seed at every sweep point.  Aborted trials
    are kept as failed records with a NaN rate.  With ``continuation`` a
    power sweep visits the budgets in increasing order and starts each point
    from the previous solution with its amplitudes scaled to the new budget.
    Scaling every stream up cannot lower any SINR and each BCD run is
    monotone, so every trial's rate is non-decreasing in the budget.
    """
    modes = ("near", "far") if sweep.compare_far else (sweep.scenario.mode,)
    chain = sweep.continuation and sweep.variable == "P"
    values = sorted(sweep.values) if chain else sweep.values
    records = []
    for trial in range(sweep.trials):
        warm: dict = {}
        for value in values:
            spec, p_dbm = point_spec(sweep, value)
            outcome = run_trial(spec, trial, p_dbm, sweep, value, modes, warm if chain else None)
            records.extend(outcome.records)
            # a failed point restarts the chain from a fresh draw
            warm = outcome.results
            if progress is not None:
                progress(outcome.records[-1])
    return sorted(records, key=SweepRecord.sort_key)


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def record_row(r: SweepRecord, timing: bool = False) -> tuple:
    """CSV fields; ``millis`` is left empty unless ``timing`` is set, to keep output deterministic."""
    return (r.sweep_var, _num(r.value), r.trial, r.placement, r.mode, r.layers, r.n,
            _num(r.power_dbm), _num(r.wsr), r.iterations, f"{r.millis:.3f}" if timing else "",
            r.seed)


def emit_csv(records, path, timing: bool = False) -> None:
    """Header plus one row per record, sorted by ``(value, trial, mode)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for r in sorted(records, key=SweepRecord.sort_key):
            out.writerow(record_row(r, timing))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@dataclass(frozen=True)
class PointSummary:
    value: float
    mode: str
    mean: float
    std: float
    ok: int
    failed: int


def summarize(records) -> list[PointSummary]:
    """Mean and std of the rate per ``(value, mode)``; failed trials are only counted."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.value, r.mode), []).append(r)
    out = []
    for (value, mode), rs in sorted(groups.items()):
        good = np.array([r.wsr for r in rs if not r.failed])
        mean = float(good.mean()) if good.size else math.nan
        std = float(good.std()) if good.size else math.nan
        out.append(PointSummary(value, mode, mean, std, int(good.size), len(rs) - int(good.size)))
    return out


def mean_rates(records, mode="near") -> dict:
    return {s.value: s.mean for s in summarize(records) if s.mode == mode}
