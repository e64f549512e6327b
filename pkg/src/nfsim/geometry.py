"""Coordinates, distances and obliquity angles of the SIM, the BS array and the users.

Conventions
-----------
The outer SIM layer lies in the YZ-plane at x = 0, the users lie in the
XY-plane (z = 0) at positive x, and the BS uniform linear array sits a
distance ``d_SIM`` behind the first layer, parallel to the y-axis and
centered on the SIM axis.

Scalar helpers take 1-based indices (element ``n`` in ``1..N``, antenna
``m`` in ``1..M``); user indices ``k`` are 0-based like every array in the
package.  Vectorized helpers return full arrays in element order, where the
y-column index varies fastest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError


def near_square_split(n: int) -> tuple[int, int]:
    """Split ``n`` into ``(n_y, n_z)`` with ``n_y >= n_z`` as close to square as possible.

    >>> near_square_split(40)
    (8, 5)
    """
    if n < 1:
        raise ConfigurationError(f"element count must be >= 1, got {n}")
    n_z = int(math.isqrt(n))
    while n % n_z:
        n_z -= 1
    return n // n_z, n_z


@dataclass(frozen=True)
class SimLayout:
    """Layout of the stacked metasurface.

    Parameters
    ----------
    n_y, n_z : int
        Meta-atoms along the y and z axes.
    layers : int
        Number of metasurface layers ``L``.
    spacing : float
        Meta-atom spacing ``d_S`` in meters.
    thickness : float
        Total SIM thickness ``T_SIM`` in meters; layers are ``thickness / layers`` apart.
    area : float
        Meta-atom area ``A_t`` in square meters.
    reference_offset : tuple of float, optional
        ``(y_s, z_s)`` of the reference element.  ``None`` centers the outer
        surface on the x-axis.
    """

    n_y: int
    n_z: int
    layers: int
    spacing: float
    thickness: float
    area: float
    reference_offset: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ConfigurationError("n_y and n_z must be >= 1")
        if self.layers < 1:
            raise ConfigurationError("layers must be >= 1")
        if self.spacing <= 0 or self.area <= 0 or self.thickness <= 0:
            raise ConfigurationError("spacing, area and thickness must be positive")

    @classmethod
    def from_wavelength(cls, wavelength, n, layers, thickness_wavelengths=5.0,
                        n_y=None, n_z=None, reference_offset=None):
        """Layout with half-wavelength atoms of area ``(λ/2)^2`` and ``T_SIM = 5λ`` by default."""
        if n_y is None and n_z is None:
            n_y, n_z = near_square_split(n)
        elif n_y is None:
            n_y = n // n_z
        elif n_z is None:
            n_z = n // n_y
        if n_y * n_z != n:
            raise ConfigurationError(f"n_y * n_z = {n_y * n_z} does not match N = {n}")
        half = wavelength / 2
        return cls(n_y=n_y, n_z=n_z, layers=layers, spacing=half,
                   thickness=thickness_wavelengths * wavelength, area=half * half,
                   reference_offset=reference_offset)

    @property
    def n(self) -> int:
        return self.n_y * self.n_z

    @property
    def layer_spacing(self) -> float:
        return self.thickness / self.layers

    @property
    def offset(self) -> tuple[float, float]:
        if self.reference_offset is not None:
            return self.reference_offset
        return (-(self.n_y - 1) * self.spacing / 2, -(self.n_z - 1) * self.spacing / 2)


@dataclass(frozen=True)
class UserLayout:
    """Polar user placement in the XY-plane.

    ``distances[k]`` and ``angles[k]`` are the radial distance and the angle
    from the x-axis of the reference antenna of user ``k``.  Every user carries
    a ULA of ``antennas`` elements, parallel to the y-axis.
    """

    distances: np.ndarray
    angles: np.ndarray
    antennas: int
    spacing: float

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.distances, dtype=float))
        a = np.atleast_1d(np.asarray(self.angles, dtype=float))
        if d.shape != a.shape or d.ndim != 1:
            raise ConfigurationError("distances and angles must be 1-D arrays of equal length")
        if np.any(d <= 0):
            raise ConfigurationError("user distances must be positive")
        if self.antennas < 1 or self.spacing <= 0:
            raise ConfigurationError("antennas must be >= 1 and spacing positive")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "angles", a)

    @property
    def users(self) -> int:
        return self.distances.size


@dataclass(frozen=True)
class BsLayout:
    """Centered BS ULA parallel to the y-axis, ``d_SIM`` behind the first layer."""

    antennas: int
    spacing: float

    def check(self, users: UserLayout) -> "BsLayout":
        """Enforce ``M_BS = K * M``: one BS antenna per transmitted stream."""
        expected = users.users * users.antennas
        if self.antennas != expected:
            raise ConfigurationError(
                f"BS antenna count {self.antennas} must equal K*M = {expected}")
        return self


def _check_index(value, upper, name):
    if not 1 <= value <= upper:
        raise ValueError(f"{name}={value} outside 1..{upper}")


def meta_atom_grid(layout: SimLayout) -> tuple[np.ndarray, np.ndarray]:
    """Column and row indices ``(c_y, c_z)`` of all N elements."""
    idx = np.arange(layout.n)
    return idx % layout.n_y, idx // layout.n_y


def meta_atom_position(n: int, layout: SimLayout) -> np.ndarray:
    """Position of element ``n`` (1-based) on the outer surface."""
    _check_index(n, layout.n, "n")
    y_s, z_s = layout.offset
    c_y = (n - 1) % layout.n_y
    c_z = (n - 1) // layout.n_y
    return np.array([0.0, c_y * layout.spacing + y_s, c_z * layout.spacing + z_s])


def meta_atom_positions(layout: SimLayout) -> np.ndarray:
    """``(N, 3)`` positions of all elements of the outer surface."""
    y_s, z_s = layout.offset
    c_y, c_z = meta_atom_grid(layout)
    out = np.zeros((layout.n, 3))
    out[:, 1] = c_y * layout.spacing + y_s
    out[:, 2] = c_z * layout.spacing + z_s
    return out


def user_antenna_position(k: int, m: int, users: UserLayout) -> np.ndarray:
    """Position of antenna ``m`` (1-based) of user ``k`` (0-based)."""
    if not 0 <= k < users.users:
        raise ValueError(f"user index {k} outside 0..{users.users - 1}")
    _check_index(m, users.antennas, "m")
    d, a = users.distances[k], users.angles[k]
    return np.array([d * math.cos(a), (m - 1) * users.spacing + d * math.sin(a), 0.0])


def user_antenna_positions(users: UserLayout) -> np.ndarray:
    """``(K, M, 3)`` antenna positions of all users."""
    x = users.distances * np.cos(users.angles)
    y = users.distances * np.sin(users.angles)
    out = np.zeros((users.users, users.antennas, 3))
    out[:, :, 0] = x[:, None]
    out[:, :, 1] = y[:, None] + np.arange(users.antennas)[None, :] * users.spacing
    return out


def element_user_distance(k: int, m: int, n: int, sim: SimLayout, users: UserLayout) -> float:
    """Distance between antenna ``m`` of user ``k`` and outer element ``n``."""
    r = float(np.linalg.norm(user_antenna_position(k, m, users) - meta_atom_position(n, sim)))
    if r == 0.0:
        raise DegenerateGeometryError(f"user {k} antenna {m} coincides with element {n}")
    return r


def element_user_distances(sim: SimLayout, users: UserLayout) -> np.ndarray:
    """``(K, M, N)`` distances between every user antenna and every outer element."""
    u = user_antenna_positions(users)
    s = meta_atom_positions(sim)
    r = np.linalg.norm(u[:, :, None, :] - s[None, None, :, :], axis=-1)
    if np.any(r == 0.0):
        raise DegenerateGeometryError("a user antenna coincides with a SIM element")
    return r


def intra_layer_offset(n: int, n_other: int, layout: SimLayout, printed: bool = False) -> float:
    """Transverse distance between elements ``n`` and ``n_other`` of two aligned layers.

    By default the offset is measured on the element grid, so elements in
    different rows are never treated as neighbours.  ``printed=True`` evaluates
    the index-difference closed form ``d_S * hypot(floor(|Δ|/N_y), mod(|Δ|, N_y))``
    instead; the two agree whenever the column difference does not wrap.
    """
    _check_index(n, layout.n, "n")
    _check_index(n_other, layout.n, "n_other")
    if printed:
        delta = abs(n - n_other)
        return layout.spacing * math.hypot(delta // layout.n_y, delta % layout.n_y)
    dy = (n - 1) % layout.n_y - (n_other - 1) % layout.n_y
    dz = (n - 1) // layout.n_y - (n_other - 1) // layout.n_y
    return layout.spacing * math.hypot(dy, dz)


def intra_layer_offsets(layout: SimLayout) -> np.ndarray:
    """``(N, N)`` matrix of :func:`intra_layer_offset` on the grid."""
    c_y, c_z = meta_atom_grid(layout)
    dy = c_y[:, None] - c_y[None, :]
    dz = c_z[:, None] - c_z[None, :]
    return layout.spacing * np.hypot(dy, dz)


def inter_layer_distance(n: int, n_other: int, layout: SimLayout) -> tuple[float, float]:
    """Hop distance between element ``n_other`` of one layer and ``n`` of the next, with its obliquity."""
    d_sim = layout.layer_spacing
    d = math.sqrt(d_sim ** 2 + intra_layer_offset(n, n_other, layout) ** 2)
    return d, d_sim / d


def inter_layer_distances(layout: SimLayout) -> tuple[np.ndarray, np.ndarray]:
    """``(N, N)`` hop distances and obliquity cosines between adjacent layers."""
    d_sim = layout.layer_spacing
    d = np.sqrt(d_sim ** 2 + intra_layer_offsets(layout) ** 2)
    return d, d_sim / d


def _centered_transverse(layout: SimLayout) -> tuple[np.ndarray, np.ndarray]:
    c_y, c_z = meta_atom_grid(layout)
    return ((c_y - (layout.n_y - 1) / 2) * layout.spacing,
            (c_z - (layout.n_z - 1) / 2) * layout.spacing)


def bs_antenna_offsets(bs: BsLayout) -> np.ndarray:
    """y-coordinates of the BS antennas relative to the SIM axis."""
    m = np.arange(1, bs.antennas + 1)
    return (m - (bs.antennas + 1) / 2) * bs.spacing


def bs_feed_distance(n: int, m: int, sim: SimLayout, bs: BsLayout) -> float:
    """Distance between BS antenna ``m`` and element ``n`` of the first layer (both 1-based)."""
    _check_index(n, sim.n, "n")
    _check_index(m, bs.antennas, "m")
    y = ((n - 1) % sim.n_y - (sim.n_y - 1) / 2) * sim.spacing
    z = ((n - 1) // sim.n_y - (sim.n_z - 1) / 2) * sim.spacing
    y_m = (m - (bs.antennas + 1) / 2) * bs.spacing
    return math.sqrt(sim.layer_spacing ** 2 + (y - y_m) ** 2 + z ** 2)


def bs_feed_distances(sim: SimLayout, bs: BsLayout) -> np.ndarray:
    """``(N, M_BS)`` distances between first-layer elements and BS antennas."""
    y, z = _centered_transverse(sim)
    y_m = bs_antenna_offsets(bs)
    return np.sqrt(sim.layer_spacing ** 2 + (y[:, None] - y_m[None, :]) ** 2 + z[:, None] ** 2)


def rayleigh_distance(layout: SimLayout, wavelength: float) -> float:
    """Fraunhofer distance ``2 D^2 / λ`` with ``D`` the diagonal of the outer surface."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    diag = math.hypot(layout.n_y - 1, layout.n_z - 1) * layout.spacing
    return 2 * diag ** 2 / wavelength
