"""Propagation matrices: inter-layer diffraction, BS feed, near- and far-field user channels."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import ConfigurationError, DegenerateGeometryError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Wavelength:
    """Carrier description; build with :meth:`from_frequency`."""

    frequency: float
    wavelength: float

    @classmethod
    def from_frequency(cls, frequency: float) -> "Wavelength":
        if frequency <= 0:
            raise ConfigurationError("carrier frequency must be positive")
        return cls(frequency, SPEED_OF_LIGHT / frequency)

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength


@dataclass(frozen=True)
class PathLossModel:
    """Distance power law ``C0 * (d / d_ref) ** -exponent``."""

    c0: float
    ref_distance: float = 1.0
    exponent: float = 2.5

    def __post_init__(self):
        if self.c0 <= 0 or self.ref_distance <= 0 or self.exponent < 2:
            raise ConfigurationError("path loss needs c0 > 0, ref_distance > 0, exponent >= 2")

    @classmethod
    def friis(cls, wavelength: float, ref_distance: float = 1.0, exponent: float = 2.5):
        """Reference loss ``C0 = (λ / (4π d_ref))^2``."""
        return cls((wavelength / (4 * math.pi * ref_distance)) ** 2, ref_distance, exponent)


def path_loss(distance, pl: PathLossModel):
    """Large-scale power gain at ``distance`` (scalar or array)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = pl.c0 * (d / pl.ref_distance) ** (-pl.exponent)
    return float(out) if out.ndim == 0 else out


def rs_coefficient(r, cos_x, area, wavelength):
    """Rayleigh-Sommerfeld transmission coefficient between two meta-atoms.

    ``w = (A cos x / r) * (1/(2π r) - j/λ) * exp(j 2π r / λ)``.  Works
    elementwise on arrays.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DegenerateGeometryError("propagation distance must be positive")
    w = (area * np.asarray(cos_x) / r) * (1 / (2 * np.pi * r) - 1j / wavelength) \
        * np.exp(2j * np.pi * r / wavelength)
    return complex(w) if w.ndim == 0 else w


def build_inter_layer_matrix(layout: geo.SimLayout, wavelength: float) -> np.ndarray:
    """``N x N`` matrix between two adjacent layers; identical for every ``l >= 2``."""
    d, cos_x = geo.inter_layer_distances(layout)
    return rs_coefficient(d, cos_x, layout.area, wavelength)


def build_feed_matrix(layout: geo.SimLayout, bs: geo.BsLayout, wavelength: float) -> np.ndarray:
    """``N x M_BS`` matrix from the BS antennas to the first layer.

    The obliquity of each hop is ``d_SIM / d``, as for the inter-layer hops.
    """
    d = geo.bs_feed_distances(layout, bs)
    return rs_coefficient(d, layout.layer_spacing / d, layout.area, wavelength)


def feed_block(feed: np.ndarray, k: int, antennas: int) -> np.ndarray:
    """Columns of the feed matrix that carry the streams of user ``k``."""
    return feed[:, k * antennas:(k + 1) * antennas]


def near_field_channels(sim: geo.SimLayout, users: geo.UserLayout, wavelength: float) -> np.ndarray:
    """``(K, M, N)`` spherical-wavefront LoS channels ``λ/(4π r) exp(-j 2π r / λ)``."""
    r = geo.element_user_distances(sim, users)
    return wavelength / (4 * np.pi * r) * np.exp(-2j * np.pi * r / wavelength)


def build_near_field_channel(k: int, sim: geo.SimLayout, users: geo.UserLayout,
                             wavelength: float) -> np.ndarray:
    """``M x N`` near-field channel of user ``k``."""
    if not 0 <= k < users.users:
        raise ValueError(f"user index {k} outside 0..{users.users - 1}")
    sub = geo.UserLayout(users.distances[k:k + 1], users.angles[k:k + 1],
                         users.antennas, users.spacing)
    return near_field_channels(sim, sub, wavelength)[0]


def far_field_angles(k: int, users: geo.UserLayout) -> tuple[float, float, float]:
    """``(azimuth, elevation, arrival)`` angles of user ``k`` seen from the SIM center.

    Azimuth is measured from the SIM boresight (x-axis) in the XY-plane,
    elevation from the z-axis, and the arrival angle from the user's ULA
    axis (the y-axis).
    """
    x = users.distances[k] * math.cos(users.angles[k])
    y = users.distances[k] * math.sin(users.angles[k])
    azimuth = math.atan2(y, x)
    elevation = math.pi / 2
    arrival = math.acos(y / math.hypot(x, y))
    return azimuth, elevation, arrival


def steering_user(arrival: float, antennas: int, spacing: float, wavelength: float) -> np.ndarray:
    kappa = 2 * np.pi / wavelength
    return np.exp(1j * kappa * spacing * np.arange(antennas) * math.cos(arrival))


def steering_sim(azimuth: float, elevation: float, layout: geo.SimLayout,
                 wavelength: float) -> np.ndarray:
    """UPA response in element order (y-column fastest, then z-row)."""
    kappa = 2 * np.pi / wavelength
    c_y, c_z = geo.meta_atom_grid(layout)
    phase = c_y * math.sin(azimuth) * math.sin(elevation) + c_z * math.cos(elevation)
    return np.exp(1j * kappa * layout.spacing * phase)


def build_far_field_channel(k: int, sim: geo.SimLayout, users: geo.UserLayout,
                            wavelength: float, beta: float) -> np.ndarray:
    """Rank-one planar-wavefront channel ``sqrt(β M N) e_user e_sim^H`` of user ``k``."""
    az, el, arr = far_field_angles(k, users)
    e_u = steering_user(arr, users.antennas, users.spacing, wavelength)
    e_s = steering_sim(az, el, sim, wavelength)
    return math.sqrt(beta * users.antennas * sim.n) * np.outer(e_u, e_s.conj())


def far_field_beta(users: geo.UserLayout, wavelength: float, mode: str = "freespace_match",
                   pl: PathLossModel | None = None, n: int = 1) -> np.ndarray:
    """Per-user far-field power gains ``β_k``.

    ``freespace_match`` uses ``(λ/(4π d_k))^2 / (M N)`` so every entry of
    ``sqrt(β M N) e_user e_sim^H`` has the near-field magnitude at the
    user's radial distance.  ``freespace_unscaled`` drops the ``1/(M N)``,
    giving each entry ``M N`` times the near-field power.  ``exponent_model``
    uses :func:`path_loss`.  ``n`` is the meta-atom count.
    """
    if mode == "freespace_match":
        return (wavelength / (4 * np.pi * users.distances)) ** 2 / (users.antennas * n)
    if mode == "freespace_unscaled":
        return (wavelength / (4 * np.pi * users.distances)) ** 2
    if mode == "exponent_model":
        pl = pl or PathLossModel.friis(wavelength)
        return np.atleast_1d(path_loss(users.distances, pl))
    raise ConfigurationError(f"unknown far_field_pathloss mode {mode!r}")


def far_field_channels(sim, users, wavelength, mode="freespace_match", pl=None) -> np.ndarray:
    beta = far_field_beta(users, wavelength, mode, pl, sim.n)
    return np.stack([build_far_field_channel(k, sim, users, wavelength, beta[k])
                     for k in range(users.users)])


@dataclass(frozen=True)
class ChannelSet:
    """Every matrix a scenario needs.

    Attributes
    ----------
    inter : list of ndarray
        ``L - 1`` inter-layer matrices, ``inter[i]`` is the hop into layer ``i + 2``.
    feed : ndarray, shape (N, M_BS)
    users : ndarray, shape (K, M, N)
    mode : {"near", "far"}
    """

    inter: list
    feed: np.ndarray
    users: np.ndarray
    mode: str = "near"

    @property
    def n(self) -> int:
        return self.feed.shape[0]

    @property
    def layers(self) -> int:
        return len(self.inter) + 1

    @property
    def k(self) -> int:
        return self.users.shape[0]

    @property
    def m(self) -> int:
        return self.users.shape[1]

    def stacked_users(self) -> np.ndarray:
        """``(K*M, N)`` user channels stacked row-wise."""
        return self.users.reshape(-1, self.n)


def build_channels(sim: geo.SimLayout, users: geo.UserLayout, bs: geo.BsLayout,
                   wl: Wavelength, mode: str = "near", far_field_pathloss="freespace_match",
                   pl: PathLossModel | None = None) -> ChannelSet:
    bs.check(users)
    w = build_inter_layer_matrix(sim, wl.wavelength)
    feed = build_feed_matrix(sim, bs, wl.wavelength)
    if mode == "near":
        h = near_field_channels(sim, users, wl.wavelength)
    elif mode == "far":
        h = far_field_channels(sim, users, wl.wavelength, far_field_pathloss, pl)
    else:
        raise ConfigurationError(f"unknown channel mode {mode!r}")
    return ChannelSet([w] * (sim.layers - 1), feed, h, mode)


MATRIX_CSV_HEADER = ("matrix", "row", "col", "re", "im")


def write_matrix_csv(channels: ChannelSet, path) -> None:
    """Dump every matrix entry as ``matrix,row,col,re,im`` (0-based rows/cols).

    Matrix ids: ``W1`` (feed), ``W2``..``WL`` (inter-layer), ``H0``..``H{K-1}``.
    """
    mats = [("W1", channels.feed)]
    mats += [(f"W{i + 2}", w) for i, w in enumerate(channels.inter)]
    mats += [(f"H{k}", h) for k, h in enumerate(channels.users)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(MATRIX_CSV_HEADER)
        for name, mat in mats:
            for (r, c), v in np.ndenumerate(mat):
                out.writerow((name, r, c, repr(float(v.real)), repr(float(v.imag))))


def read_matrix_csv(path) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_matrix_csv`."""
    entries: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entries.setdefault(row["matrix"], []).append(
                (int(row["row"]), int(row["col"]), float(row["re"]) + 1j * float(row["im"])))
    out = {}
    for name, items in entries.items():
        shape = (max(i[0] for i in items) + 1, max(i[1] for i in items) + 1)
        mat = np.zeros(shape, dtype=complex)
        for r, c, v in items:
            mat[r, c] = v
        out[name] = mat
    return out
