"""RF-chain combining, noisy pilots and wavenumber-domain sample sets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel import Dictionary, SparseChannel, VarianceProfile
from .lattice import LatticeEllipse, ThetaBranch, harmonic_angles


@dataclass(frozen=True, eq=False)
class SelectionMap:
    """RF chain ``i`` reads harmonic ``picks[i]`` (1-based scan ordinal)."""

    picks: np.ndarray
    n_rf: int
    lattice_size: int

    @property
    def positions(self) -> np.ndarray:
        """0-based positions into lattice-aligned arrays."""
        return self.picks - 1

    def matrix(self) -> np.ndarray:
        """The 0/1 selection matrix ``B`` (``n_rf x |xi|``)."""
        b = np.zeros((self.n_rf, self.lattice_size))
        b[np.arange(self.n_rf), self.positions] = 1.0
        return b


def build_selection(lattice: LatticeEllipse, n_rf: int) -> SelectionMap:
    """Uniform scan-order sampling: chain ``i`` picks ordinal ``floor(|xi|/n_rf)(i-1)+1``."""
    size = len(lattice)
    if not 1 <= n_rf <= size:
        raise ValueError(f"n_rf={n_rf} outside 1..{size}")
    stride = size // n_rf
    picks = stride * np.arange(n_rf, dtype=np.int64) + 1
    picks.setflags(write=False)
    return SelectionMap(picks, n_rf, size)


def observe(g: SparseChannel, sel: SelectionMap, pilot: complex = 1.0, noise_var: float = 0.0,
            seed=None, exact_gram: bool = False, dictionary: Dictionary | None = None) -> np.ndarray:
    """Received pilot ``y = C H x + n`` with ``C = B Psi^H``.

    By default ``Psi^H Psi`` is taken as the identity so that chain ``i``
    reads the picked coefficient directly.  ``exact_gram`` applies the true
    Gram rows (needs ``dictionary``).
    """
    coeffs = g.coefficients
    if coeffs.size != sel.lattice_size:
        raise ValueError(f"channel has {coeffs.size} harmonics, selection expects {sel.lattice_size}")
    if exact_gram:
        if dictionary is None:
            raise ValueError("exact_gram needs the dictionary")
        psi = dictionary.columns
        if psi.shape[1] != coeffs.size:
            raise ValueError("dictionary and channel disagree on lattice size")
        clean = psi[:, sel.positions].conj().T @ (psi @ coeffs)
    else:
        clean = coeffs[sel.positions]
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, sel.n_rf))
    noise = math.sqrt(noise_var / 2.0) * (z[0] + 1j * z[1])
    return pilot * clean + noise


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Sampling directions and powers consumed by the estimators."""

    theta: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    noise_var: float = 0.0
    pilot_power: float = 1.0

    def __post_init__(self):
        theta, phi, s = (np.asarray(a, dtype=float) for a in (self.theta, self.phi, self.s))
        if not theta.shape == phi.shape == s.shape or theta.ndim != 1:
            raise ValueError("theta, phi and s must be aligned 1-d arrays")
        if np.any(s < 0):
            raise ValueError("sample powers must be non-negative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return self.s.size

    def with_values(self, s) -> "SampleSet":
        return SampleSet(self.theta, self.phi, s, self.noise_var, self.pilot_power)


def sample_angles(sel: SelectionMap, lattice: LatticeEllipse, theta_branch: ThetaBranch = "principal"):
    pos = sel.positions
    return harmonic_angles(lattice.m_x[pos], lattice.m_y[pos], lattice.aperture, theta_branch)


def sample_values(y, sel: SelectionMap, lattice: LatticeEllipse, noise_var: float = 0.0,
                  pilot_power: float = 1.0, theta_branch: ThetaBranch = "principal",
                  denoise_floor: bool = False) -> SampleSet:
    """``s_i = |y_i|^2`` at the picked harmonics' arrival angles.

    With ``denoise_floor`` the noise variance is subtracted and the result
    clamped at zero.
    """
    s = np.abs(np.asarray(y)) ** 2
    if denoise_floor:
        s = np.maximum(s - noise_var, 0.0)
    theta, phi = sample_angles(sel, lattice, theta_branch)
    return SampleSet(theta, phi, s, noise_var, pilot_power)


def expected_sample_values(profile: VarianceProfile, sel: SelectionMap, noise_var: float = 0.0,
                           pilot_power: float = 1.0, theta_branch: ThetaBranch = "principal",
                           denoise_floor: bool = False) -> SampleSet:
    """Sample set built from ``E|y_i|^2 = sigma2(m_i) |x|^2 + noise_var``.

    This is the many-snapshot limit of :func:`sample_values`, free of the
    exponential fluctuation of a single ``|CN|^2`` draw.
    """
    s = profile.sigma2[sel.positions] * pilot_power + (0.0 if denoise_floor else noise_var)
    theta, phi = sample_angles(sel, profile.lattice, theta_branch)
    return SampleSet(theta, phi, s, noise_var, pilot_power)


def save_samples(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "phi", "s"])
        for row in zip(samples.theta.tolist(), samples.phi.tolist(), samples.s.tolist()):
            writer.writerow([repr(v) for v in row])


def load_samples(path, noise_var: float = 0.0, pilot_power: float = 1.0) -> SampleSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {k: np.array([float(r[k]) for r in rows]) for k in ("theta", "phi", "s")}
    return SampleSet(cols["theta"], cols["phi"], cols["s"], noise_var, pilot_power)


def snr_of(profile: VarianceProfile, sel: SelectionMap, pilot_power: float = 1.0,
           noise_var: float = 1.0) -> float:
    """Expected ``||C H x||^2 / (n_rf noise_var)`` as a linear ratio (``inf`` when noiseless)."""
    signal = float(profile.sigma2[sel.positions].sum()) * pilot_power
    if noise_var == 0:
        return math.inf
    return signal / (sel.n_rf * noise_var)


def noise_var_for_snr(profile: VarianceProfile, sel: SelectionMap, snr_db: float,
                      pilot_power: float = 1.0) -> float:
    """Noise variance that makes :func:`snr_of` equal ``snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    signal = float(profile.sigma2[sel.positions].sum()) * pilot_power
    return signal / (sel.n_rf * 10.0 ** (snr_db / 10.0))


def to_db(x):
    return 10.0 * np.log10(x)
