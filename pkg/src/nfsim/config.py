"""System configuration and the ``key = value`` config file format."""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .optimizer import BcdConfig


FAR_FIELD_MODES = ("freespace_match", "freespace_unscaled", "exponent_model")


def _f(default, doc):
    return field(default=default, metadata={"doc": doc})


@dataclass
class SystemConfig:
    """Every physical and algorithmic parameter of a run.

    Powers are in dBm, lengths in meters.  ``bs_antennas = 0`` means ``K*M``
    and ``n_y = 0`` picks the near-square split of ``elements``.
    """

    frequency_hz: float = _f(10e9, "carrier frequency (Hz)")
    users: int = _f(4, "number of users K")
    user_antennas: int = _f(2, "antennas per user M")
    bs_antennas: int = _f(0, "BS antennas M_BS; 0 means K*M (any other value must equal K*M)")
    elements: int = _f(40, "meta-atoms per layer N")
    n_y: int = _f(0, "meta-atoms along y; 0 picks the near-square split of N")
    layers: int = _f(4, "metasurface layers L")
    thickness_wavelengths: float = _f(5.0, "SIM thickness in wavelengths")
    power_dbm: float = _f(10.0, "BS power budget (dBm)")
    noise_psd_dbm_hz: float = _f(-174.0, "noise power spectral density (dBm/Hz)")
    bandwidth_hz: float = _f(20e6, "system bandwidth (Hz)")
    noise_figure_db: float = _f(0.0, "receiver noise figure (dB)")
    weights: str = _f("", "comma-separated user weights; empty means all ones")
    placement: str = _f("random", "user placement: random or inline")
    r_min: float = _f(2.0, "minimum user distance (m)")
    r_max: float = _f(4.0, "maximum user distance (m)")
    ref_distance: float = _f(1.0, "path-loss reference distance (m)")
    pathloss_exponent: float = _f(2.5, "path-loss exponent")
    far_field_pathloss: str = _f("freespace_match", "far-field gain: freespace_match, freespace_unscaled or exponent_model")
    epsilon: float = _f(1e-4, "relative convergence threshold")
    max_outer: int = _f(200, "BCD iteration cap")
    step_init: float = _f(1.0, "initial phase step (radians of the largest move)")
    backtrack_ratio: float = _f(0.5, "Armijo backtracking ratio")
    max_backtracks: int = _f(30, "Armijo backtracking cap")
    inner_phase_steps: int = _f(1, "projected-gradient steps per layer per BCD iteration")
    step_rule: str = _f("bb", "trial step: fixed or bb (Barzilai-Borwein)")
    bisect_tol: float = _f(1e-10, "relative power tolerance of the bisection")
    power_continuation: int = _f(1, "1: power sweeps warm-start each budget from the previous one; 0: cold starts")
    trials: int = _f(10, "Monte Carlo trials per sweep point")
    seed: int = _f(0, "base random seed")
    sweep_values: str = _f("", "comma-separated sweep values; empty uses the built-in grid")

    def __post_init__(self):
        if self.users < 1 or self.user_antennas < 1 or self.elements < 1 or self.layers < 1:
            raise ConfigurationError("users, user_antennas, elements and layers must be >= 1")
        if self.bs_antennas not in (0, self.users * self.user_antennas):
            raise ConfigurationError(
                f"bs_antennas={self.bs_antennas} must equal K*M={self.users * self.user_antennas}")
        if self.n_y and self.elements % self.n_y:
            raise ConfigurationError(f"n_y={self.n_y} does not divide elements={self.elements}")
        if self.placement not in ("random", "inline"):
            raise ConfigurationError("placement must be random or inline")
        if not 0 < self.r_min <= self.r_max:
            raise ConfigurationError("need 0 < r_min <= r_max")
        if self.far_field_pathloss not in FAR_FIELD_MODES:
            raise ConfigurationError(f"far_field_pathloss must be one of {', '.join(FAR_FIELD_MODES)}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        w = self.eta
        if len(w) != self.users or any(x < 0 for x in w):
            raise ConfigurationError("weights must list K nonnegative numbers")
        self.bcd  # validates the algorithm constants

    @property
    def m_bs(self) -> int:
        return self.users * self.user_antennas

    @property
    def eta(self) -> list[float]:
        if not self.weights.strip():
            return [1.0] * self.users
        try:
            return [float(x) for x in self.weights.split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"bad weights {self.weights!r}") from exc

    @property
    def noise_var(self) -> float:
        """Thermal noise power in watts over the system bandwidth."""
        dbm = self.noise_psd_dbm_hz + 10 * math.log10(self.bandwidth_hz) + self.noise_figure_db
        return dbm_to_watt(dbm)

    @property
    def budget(self) -> float:
        return dbm_to_watt(self.power_dbm)

    @property
    def bcd(self) -> BcdConfig:
        return BcdConfig(epsilon=self.epsilon, max_outer=self.max_outer, step_init=self.step_init,
                         backtrack_ratio=self.backtrack_ratio, max_backtracks=self.max_backtracks,
                         inner_phase_steps=self.inner_phase_steps, bisect_tol=self.bisect_tol,
                         step_rule=self.step_rule)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def dbm_to_watt(dbm: float) -> float:
    return 10 ** (dbm / 10) / 1000


def config_keys() -> list[tuple[str, object, str]]:
    """``(key, default, description)`` for every config key."""
    return [(f.name, f.default, f.metadata.get("doc", "")) for f in dataclasses.fields(SystemConfig)]


def _coerce(name, raw: str, kind):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{name}: cannot parse {raw!r}") from exc
    return raw


def parse_config_text(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are an error."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       delimiters=("=",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    types = {f.name: f.type for f in dataclasses.fields(SystemConfig)}
    items = dict(parser["config"])
    unknown = sorted(set(items) - set(types))
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    values = {k: _coerce(k, v.strip(), types[k]) for k, v in items.items()}
    return dataclasses.replace(base or SystemConfig(), **values)


def load_config(path) -> SystemConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {p}: {exc.strerror}") from exc
    return parse_config_text(text)
