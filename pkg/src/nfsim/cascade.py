"""SIM phase state and the wave-domain cascade ``G = Φ_L W_L ... Φ_2 W_2 Φ_1``."""
from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigurationError

TWO_PI = 2 * np.pi


class PhaseState:
    """Phase angles ``theta[l, n]`` of every meta-atom, kept in ``[0, 2π)``.

    Layers are 0-based here (``theta[0]`` is the layer next to the BS).
    """

    def __init__(self, theta):
        theta = np.array(theta, dtype=float, ndmin=2)
        if theta.ndim != 2:
            raise ConfigurationError("theta must have shape (L, N)")
        theta = np.mod(theta, TWO_PI)
        theta[theta >= TWO_PI] = 0.0  # mod of tiny negatives rounds up to 2π
        self.theta = theta

    @classmethod
    def zeros(cls, layers: int, n: int) -> "PhaseState":
        return cls(np.zeros((layers, n)))

    @classmethod
    def random(cls, layers: int, n: int, rng: np.random.Generator) -> "PhaseState":
        return cls(rng.uniform(0.0, TWO_PI, size=(layers, n)))

    @classmethod
    def from_phasors(cls, phi) -> "PhaseState":
        return cls(np.angle(np.asarray(phi)))

    @property
    def layers(self) -> int:
        return self.theta.shape[0]

    @property
    def n(self) -> int:
        return self.theta.shape[1]

    @property
    def phi(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    def copy(self) -> "PhaseState":
        return PhaseState(self.theta.copy())

    def with_layer(self, l: int, phi) -> "PhaseState":
        theta = self.theta.copy()
        theta[l] = np.angle(phi)
        return PhaseState(theta)

    def __eq__(self, other):
        return isinstance(other, PhaseState) and np.array_equal(self.theta, other.theta)

    def __repr__(self):
        return f"PhaseState(layers={self.layers}, n={self.n})"


def _check(phi: np.ndarray, inter) -> None:
    if len(inter) != phi.shape[0] - 1:
        raise ConfigurationError(
            f"{phi.shape[0]} layers need {phi.shape[0] - 1} inter-layer matrices, got {len(inter)}")
    for w in inter:
        if w.shape != (phi.shape[1], phi.shape[1]):
            raise ConfigurationError(f"inter-layer matrix shape {w.shape} does not match N={phi.shape[1]}")


def _as_phi(phases) -> np.ndarray:
    return phases.phi if isinstance(phases, PhaseState) else np.asarray(phases, dtype=complex)


def assemble_cascade(phases, inter) -> np.ndarray:
    """Return ``G``; ``phases`` is a :class:`PhaseState` or an ``(L, N)`` phasor array."""
    phi = _as_phi(phases)
    _check(phi, inter)
    g = np.diag(phi[0])
    for l in range(1, phi.shape[0]):
        g = phi[l][:, None] * (inter[l - 1] @ g)
    return g


def partial_products(phases, inter, l: int) -> tuple[np.ndarray, np.ndarray]:
    """``(R_l, J_l)`` such that ``G = R_l diag(φ_l) J_l``; ``l`` is 0-based.

    ``R_l`` collects everything after layer ``l`` and ``J_l`` everything
    before it, including the hop into layer ``l``.
    """
    phi = _as_phi(phases)
    _check(phi, inter)
    n_layers, n = phi.shape
    if not 0 <= l < n_layers:
        raise ValueError(f"layer {l} outside 0..{n_layers - 1}")
    j = np.eye(n, dtype=complex)
    for i in range(l):
        j = inter[i] @ (phi[i][:, None] * j)
    r = np.eye(n, dtype=complex)
    for i in range(l + 1, n_layers):
        r = phi[i][:, None] * (inter[i - 1] @ r)
    return r, j


class Cascade:
    """Caches ``G`` and the partial products for one phase state.

    Every write through :meth:`set_layer` or :attr:`phases` drops the cache.
    """

    def __init__(self, phases: PhaseState, inter):
        _check(phases.phi, inter)
        self.inter = list(inter)
        self._phases = phases.copy()
        self._cache: dict = {}

    @property
    def phases(self) -> PhaseState:
        return self._phases.copy()

    @phases.setter
    def phases(self, value: PhaseState):
        self._phases = value.copy()
        self._cache.clear()

    def set_layer(self, l: int, phi):
        self._phases = self._phases.with_layer(l, phi)
        self._cache.clear()

    @property
    def g(self) -> np.ndarray:
        if "g" not in self._cache:
            self._cache["g"] = assemble_cascade(self._phases, self.inter)
        return self._cache["g"]

    def partials(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        key = ("rj", l)
        if key not in self._cache:
            self._cache[key] = partial_products(self._phases, self.inter, l)
        return self._cache[key]


def project_unit_modulus(v, fallback=None) -> np.ndarray:
    """Radial projection onto the unit circle.

    Zero entries have no phase; they take the matching entry of ``fallback``
    (normally the previous iterate), and a :class:`ValueError` is raised if
    none was supplied.
    """
    v = np.asarray(v, dtype=complex)
    mag = np.abs(v)
    zero = mag == 0
    out = np.divide(v, mag, out=np.ones_like(v), where=~zero)
    if np.any(zero):
        if fallback is None:
            raise ValueError("cannot project a zero entry without a fallback")
        fb = np.broadcast_to(np.asarray(fallback, dtype=complex), v.shape)
        out[zero] = fb[zero] / np.abs(fb[zero])
    return out


PHASE_CSV_HEADER = ("layer", "index", "theta")


def write_phase_csv(phases: PhaseState, path) -> None:
    """Write ``layer,index,theta`` rows (both 1-based, theta in radians)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(PHASE_CSV_HEADER)
        for (l, n), t in np.ndenumerate(phases.theta):
            out.writerow((l + 1, n + 1, repr(float(t))))


def read_phase_csv(path) -> PhaseState:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["layer"]), int(r["index"]), float(r["theta"])) for r in csv.DictReader(fh)]
    theta = np.zeros((max(r[0] for r in rows), max(r[1] for r in rows)))
    for l, n, t in rows:
        theta[l - 1, n - 1] = t
    return PhaseState(theta)
