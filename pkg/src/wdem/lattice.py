"""Fourier-harmonic index lattice of a planar aperture.

The propagating harmonics of a rectangular aperture are the integer pairs
``(m_x, m_y)`` whose wavenumbers ``(2 pi m_x / L_x, 2 pi m_y / L_y)`` lie
inside the disk of radius ``k = 2 pi f_c / c``.  Everything downstream
indexes vectors by the canonical row-major scan order of that set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

ThetaBranch = Literal["principal", "quadrant_shift"]

# slack on the membership test so that exact boundary harmonics survive rounding
_MEMBERSHIP_RTOL = 1e-12


class DegenerateApertureError(ValueError):
    """The aperture is too small to hold any propagating harmonic off the axis."""


@dataclass(frozen=True)
class ApertureConfig:
    """Rectangular planar array geometry.

    Lengths are in meters and the carrier frequency in Hz.  ``l_x`` and
    ``l_y`` must agree with ``n_x * delta`` and ``n_y * delta``.
    """

    l_x: float
    l_y: float
    f_c: float
    delta: float
    n_x: int
    n_y: int
    z_0: float = 0.0

    def __post_init__(self):
        if not self.f_c > 0:
            raise ValueError(f"carrier frequency must be positive, got {self.f_c}")
        if not self.delta > 0:
            raise ValueError(f"antenna spacing must be positive, got {self.delta}")
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError(f"element counts must be >= 1, got ({self.n_x}, {self.n_y})")
        for name, length, count in (("l_x", self.l_x, self.n_x), ("l_y", self.l_y, self.n_y)):
            if not math.isclose(length, count * self.delta, rel_tol=1e-9):
                raise ValueError(
                    f"{name}={length} inconsistent with {count} elements at spacing {self.delta}"
                )

    @classmethod
    def from_elements(cls, n_x: int, n_y: int, f_c: float, delta: float | None = None,
                      z_0: float = 0.0) -> "ApertureConfig":
        """Build an aperture from element counts; spacing defaults to half a wavelength."""
        if delta is None:
            delta = SPEED_OF_LIGHT / f_c / 2.0
        return cls(l_x=n_x * delta, l_y=n_y * delta, f_c=f_c, delta=delta,
                   n_x=n_x, n_y=n_y, z_0=z_0)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi * self.f_c / SPEED_OF_LIGHT

    @property
    def n_antennas(self) -> int:
        return self.n_x * self.n_y

    @property
    def bounds(self) -> tuple[float, float]:
        """Largest admissible |m_x| and |m_y| as real numbers (L f_c / c)."""
        return self.l_x / self.wavelength, self.l_y / self.wavelength


@dataclass(frozen=True)
class WavenumberIndex:
    m_x: int
    m_y: int


@dataclass(frozen=True, eq=False)
class LatticeEllipse:
    """Admissible harmonic indices in canonical scan order.

    ``m_x`` and ``m_y`` are aligned integer arrays; position ``i`` in them is
    scan ordinal ``i + 1``.
    """

    m_x: np.ndarray
    m_y: np.ndarray
    aperture: ApertureConfig
    _ordinal: dict = field(repr=False, compare=False)

    def __len__(self) -> int:
        return int(self.m_x.size)

    def __iter__(self):
        for mx, my in zip(self.m_x.tolist(), self.m_y.tolist()):
            yield WavenumberIndex(mx, my)

    def __contains__(self, m) -> bool:
        key = (m.m_x, m.m_y) if isinstance(m, WavenumberIndex) else (int(m[0]), int(m[1]))
        return key in self._ordinal

    @property
    def indices(self) -> list[WavenumberIndex]:
        return list(self)

    def ordinal(self, m: WavenumberIndex | tuple[int, int]) -> int:
        """1-based scan ordinal of a member index (inverse of :func:`scan_position`)."""
        key = (m.m_x, m.m_y) if isinstance(m, WavenumberIndex) else (int(m[0]), int(m[1]))
        try:
            return self._ordinal[key]
        except KeyError:
            raise KeyError(f"{key} is not a member of the lattice") from None


def is_propagating(m_x, m_y, aperture: ApertureConfig):
    """Membership test ``(m_x/b_x)^2 + (m_y/b_y)^2 <= 1`` with ``b = L f_c / c``."""
    b_x, b_y = aperture.bounds
    lhs = (np.asarray(m_x, dtype=float) / b_x) ** 2 + (np.asarray(m_y, dtype=float) / b_y) ** 2
    return lhs <= 1.0 + _MEMBERSHIP_RTOL


def build_lattice(aperture: ApertureConfig) -> LatticeEllipse:
    """Enumerate the propagating harmonics of ``aperture`` in row-major order.

    Rows are ascending ``m_y``; within a row ``m_x`` ascends.

    Raises
    ------
    DegenerateApertureError
        If ``L f_c / c < 1`` along either axis.
    """
    b_x, b_y = aperture.bounds
    if b_x < 1.0 or b_y < 1.0:
        raise DegenerateApertureError(
            f"aperture bounds L*f_c/c = ({b_x:.4g}, {b_y:.4g}); need >= 1 on both axes"
        )
    r_x, r_y = int(math.floor(b_x * (1 + _MEMBERSHIP_RTOL))), int(math.floor(b_y * (1 + _MEMBERSHIP_RTOL)))
    gy, gx = np.meshgrid(np.arange(-r_y, r_y + 1), np.arange(-r_x, r_x + 1), indexing="ij")
    keep = is_propagating(gx, gy, aperture)
    # meshgrid with 'ij' on (y, x) already yields row-major order when flattened
    m_x = gx[keep].astype(np.int64)
    m_y = gy[keep].astype(np.int64)
    ordinal = {(a, b): i + 1 for i, (a, b) in enumerate(zip(m_x.tolist(), m_y.tolist()))}
    m_x.setflags(write=False)
    m_y.setflags(write=False)
    return LatticeEllipse(m_x=m_x, m_y=m_y, aperture=aperture, _ordinal=ordinal)


def scan_position(lattice: LatticeEllipse, ordinal: int) -> WavenumberIndex:
    """Index at 1-based ``ordinal`` in scan order."""
    if not 1 <= ordinal <= len(lattice):
        raise IndexError(f"ordinal {ordinal} outside 1..{len(lattice)}")
    return WavenumberIndex(int(lattice.m_x[ordinal - 1]), int(lattice.m_y[ordinal - 1]))


def harmonic_angles(m_x, m_y, aperture: ApertureConfig, theta_branch: ThetaBranch = "principal"):
    """Vectorized arrival angles ``(theta, phi)`` of harmonics.

    ``theta`` is the arcsine of the normalized radial wavenumber; with
    ``theta_branch="quadrant_shift"`` indices with ``m_x * m_y < 0`` get ``+pi``
    added.  ``phi`` follows the quadrant table of the arctangent, with the
    axis directions mapped to 0, pi/2, pi and 3pi/2 and the origin to 0.
    """
    if theta_branch not in ("principal", "quadrant_shift"):
        raise ValueError(f"unknown theta branch {theta_branch!r}")
    m_x = np.asarray(m_x)
    m_y = np.asarray(m_y)
    if not np.all(is_propagating(m_x, m_y, aperture)):
        raise ValueError("index outside the lattice ellipse (evanescent harmonic)")
    kx = m_x / aperture.l_x
    ky = m_y / aperture.l_y
    rho = SPEED_OF_LIGHT * np.hypot(kx, ky) / aperture.f_c
    theta = np.arcsin(np.minimum(rho, 1.0))
    if theta_branch == "quadrant_shift":
        theta = np.where(m_x * m_y < 0, theta + np.pi, theta)

    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.arctan(ky / kx)
    phi = np.select(
        [
            (m_x > 0) & (m_y > 0),
            m_x < 0,
            (m_x > 0) & (m_y < 0),
            (m_x > 0) & (m_y == 0),
            (m_x == 0) & (m_y > 0),
            (m_x == 0) & (m_y < 0),
        ],
        [base, base + np.pi, base + 2 * np.pi, 0.0, np.pi / 2, 3 * np.pi / 2],
        default=0.0,
    )
    return theta, phi


def index_to_angles(m: WavenumberIndex | tuple[int, int], aperture: ApertureConfig,
                    theta_branch: ThetaBranch = "principal") -> tuple[float, float]:
    """Arrival angles of a single harmonic; see :func:`harmonic_angles`."""
    m_x, m_y = (m.m_x, m.m_y) if isinstance(m, WavenumberIndex) else m
    theta, phi = harmonic_angles(np.array([m_x]), np.array([m_y]), aperture, theta_branch)
    return float(theta[0]), float(phi[0])
