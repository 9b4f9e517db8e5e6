"""Wavenumber-domain channel synthesis.

The variance of harmonic ``m`` is the mixture mass falling in the wavenumber
cell ``[m_x, m_x + 1] x [m_y, m_y + 1]`` (in units of ``2 pi / L``) clipped to
the propagating disk.  Integrating the 1/k_z kernel over that cell is the
same as integrating the vMF density over the matching patch of the upper
unit hemisphere with respect to solid angle, which is what is done here:

    u_x = sin(a),  u_y = cos(a) sin(b),  u_z = cos(a) cos(b),  dOmega = cos(a) da db

where ``(u_x, u_y)`` are direction cosines (``k_x / k``, ``k_y / k``).  The
inner limits ``b = asin(y / cos a)`` have square-root kinks where the disk
clip switches on; the outer range is split at those points and mapped
through a smoothstep so tensor Gauss-Legendre converges quickly.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .lattice import LatticeEllipse, build_lattice, ApertureConfig
from .vmf import VmfMixture, log_normalizer

DEFAULT_ELEMENT_BUDGET = 10**8


class QuadratureError(RuntimeError):
    """A cell integral failed to reach its tolerance."""


class MemoryBudgetError(MemoryError):
    pass


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Per-harmonic variances aligned with the lattice scan order."""

    lattice: LatticeEllipse
    sigma2: np.ndarray

    def __post_init__(self):
        sigma2 = np.asarray(self.sigma2, dtype=float)
        if sigma2.shape != (len(self.lattice),):
            raise ValueError(f"profile length {sigma2.shape} does not match lattice size {len(self.lattice)}")
        if np.any(sigma2 < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "sigma2", sigma2)

    def __getitem__(self, m) -> float:
        return float(self.sigma2[self.lattice.ordinal(m) - 1])

    @property
    def total_power(self) -> float:
        return float(self.sigma2.sum())

    def scaled(self, factor: float) -> "VarianceProfile":
        return VarianceProfile(self.lattice, self.sigma2 * factor)

    @classmethod
    def zeros(cls, lattice: LatticeEllipse) -> "VarianceProfile":
        return cls(lattice, np.zeros(len(lattice)))


def save_profile(profile: VarianceProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m_x", "m_y", "sigma2"])
        for mx, my, s in zip(profile.lattice.m_x.tolist(), profile.lattice.m_y.tolist(),
                             profile.sigma2.tolist()):
            writer.writerow([mx, my, repr(s)])


def load_profile(path, lattice: LatticeEllipse) -> VarianceProfile:
    sigma2 = np.zeros(len(lattice))
    seen = set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pos = lattice.ordinal((int(row["m_x"]), int(row["m_y"]))) - 1
            sigma2[pos] = float(row["sigma2"])
            seen.add(pos)
    if len(seen) != len(lattice):
        raise ValueError(f"{path}: {len(seen)} rows for a lattice of {len(lattice)} harmonics")
    return VarianceProfile(lattice, sigma2)


# ---------------------------------------------------------------------------
# cell quadrature


def cell_bounds(lattice: LatticeEllipse, positions=None):
    """Direction-cosine rectangles ``(x0, x1, y0, y1)`` of lattice cells."""
    b_x, b_y = lattice.aperture.bounds
    m_x = lattice.m_x if positions is None else lattice.m_x[positions]
    m_y = lattice.m_y if positions is None else lattice.m_y[positions]
    return m_x / b_x, (m_x + 1) / b_x, m_y / b_y, (m_y + 1) / b_y


def _pieces(x0, x1, y0, y1):
    """Split each cell's outer angle range where an inner limit meets the rim."""
    cell, a_lo, a_hi, py0, py1 = [], [], [], [], []
    for i in range(len(x0)):
        lo = math.asin(min(max(x0[i], -1.0), 1.0))
        hi = math.asin(min(max(x1[i], -1.0), 1.0))
        if not hi > lo:
            continue
        cuts = {lo, hi}
        for y in (y0[i], y1[i]):
            if abs(y) < 1.0:
                bp = math.acos(abs(y))
                for c in (bp, -bp):
                    if lo < c < hi:
                        cuts.add(c)
        cuts = sorted(cuts)
        for a, b in zip(cuts[:-1], cuts[1:]):
            cm = math.cos(0.5 * (a + b))
            if y0[i] / cm < 1.0 and y1[i] / cm > -1.0:
                cell.append(i)
                a_lo.append(a)
                a_hi.append(b)
                py0.append(y0[i])
                py1.append(y1[i])
    return (np.array(cell, dtype=np.int64), np.array(a_lo), np.array(a_hi),
            np.array(py0), np.array(py1))


class _Integrand:
    """Mixture density w.r.t. solid angle, evaluated in log domain."""

    def __init__(self, mixture: VmfMixture):
        w = mixture.weights
        keep = w > 0
        self.log_coef = np.log(w[keep]) + log_normalizer(mixture.alphas[keep])
        self.alpha = mixture.alphas[keep]
        self.mu = mixture.directions[keep]

    def __call__(self, x):
        expo = self.log_coef + self.alpha * (x @ self.mu.T)
        return np.exp(logsumexp(expo, axis=-1))


def _panel_integrals(f, a_lo, a_hi, y0, y1, t0, t1, v0, v1, nodes, weights):
    """Tensor Gauss-Legendre estimate over panels ``[t0,t1] x [v0,v1]`` in the unit square."""
    n = nodes.size
    dt = (t1 - t0)[:, None]
    tau = t0[:, None] + dt * nodes[None, :]
    span = (a_hi - a_lo)[:, None]
    a = a_lo[:, None] + span * tau * tau * (3.0 - 2.0 * tau)
    jac_a = span * 6.0 * tau * (1.0 - tau) * dt * weights[None, :]
    c = np.cos(a)
    csafe = np.maximum(c, 1e-300)
    b_lo = np.arcsin(np.clip(y0[:, None] / csafe, -1.0, 1.0))
    b_hi = np.arcsin(np.clip(y1[:, None] / csafe, -1.0, 1.0))
    width = np.maximum(b_hi - b_lo, 0.0)
    dv = (v1 - v0)[:, None, None]
    v = v0[:, None, None] + dv * nodes[None, None, :]
    b = b_lo[:, :, None] + width[:, :, None] * v
    x = np.empty(b.shape + (3,))
    x[..., 0] = np.sin(a)[:, :, None]
    x[..., 1] = c[:, :, None] * np.sin(b)
    x[..., 2] = c[:, :, None] * np.cos(b)
    vals = f(x) * (c * width * jac_a)[:, :, None] * (dv * weights[None, None, :])
    return vals.reshape(len(a_lo), n * n).sum(axis=1)


def _integrate_cells(f, x0, x1, y0, y1, rtol, atol, order, max_depth, rng_seed):
    ncell = len(x0)
    result = np.zeros(ncell)
    cell, a_lo, a_hi, py0, py1 = _pieces(x0, x1, y0, y1)
    if cell.size == 0:
        return result
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights

    piece = np.arange(cell.size)
    t0 = np.zeros(cell.size)
    t1 = np.ones(cell.size)
    v0 = np.zeros(cell.size)
    v1 = np.ones(cell.size)
    coarse = _panel_integrals(f, a_lo, a_hi, py0, py1, t0, t1, v0, v1, nodes, weights)

    for depth in range(max_depth + 1):
        if piece.size == 0:
            break
        # four children per panel
        tm = 0.5 * (t0 + t1)
        vm = 0.5 * (v0 + v1)
        ct0 = np.concatenate([t0, tm, t0, tm])
        ct1 = np.concatenate([tm, t1, tm, t1])
        cv0 = np.concatenate([v0, v0, vm, vm])
        cv1 = np.concatenate([vm, vm, v1, v1])
        cp = np.tile(piece, 4)
        child = _panel_integrals(f, a_lo[cp], a_hi[cp], py0[cp], py1[cp],
                                 ct0, ct1, cv0, cv1, nodes, weights)
        m = piece.size
        fine = child[:m] + child[m:2 * m] + child[2 * m:3 * m] + child[3 * m:]
        ok = np.abs(fine - coarse) <= np.maximum(rtol * np.abs(fine), atol)
        if depth == max_depth:
            ok[:] = True
            bad = np.abs(fine - coarse) > np.maximum(rtol * np.abs(fine), atol)
            if np.any(bad):
                fine = fine.copy()
                for k in np.flatnonzero(bad):
                    fine[k] = _monte_carlo_panel(
                        f, a_lo[piece[k]], a_hi[piece[k]], py0[piece[k]], py1[piece[k]],
                        t0[k], t1[k], v0[k], v1[k], rtol, atol, rng_seed + k,
                        cell_id=int(cell[piece[k]]))
        np.add.at(result, cell[piece[ok]], fine[ok])
        keep = np.flatnonzero(~ok)
        if keep.size == 0:
            break
        idx = np.concatenate([keep, keep + m, keep + 2 * m, keep + 3 * m])
        piece = cp[idx]
        t0, t1, v0, v1 = ct0[idx], ct1[idx], cv0[idx], cv1[idx]
        coarse = child[idx]
    return result


def _monte_carlo_panel(f, a_lo, a_hi, y0, y1, t0, t1, v0, v1, rtol, atol, seed, cell_id,
                       batch=20_000, max_samples=2_000_000, mc_rtol=1e-3):
    warnings.warn(f"cell {cell_id}: Gauss-Legendre did not converge, falling back to Monte Carlo",
                  RuntimeWarning, stacklevel=4)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(max_samples // batch):
        t = rng.uniform(t0, t1, batch)
        v = rng.uniform(v0, v1, batch)
        span = a_hi - a_lo
        a = a_lo + span * t * t * (3.0 - 2.0 * t)
        c = np.cos(a)
        csafe = np.maximum(c, 1e-300)
        b_lo = np.arcsin(np.clip(y0 / csafe, -1.0, 1.0))
        b_hi = np.arcsin(np.clip(y1 / csafe, -1.0, 1.0))
        width = np.maximum(b_hi - b_lo, 0.0)
        b = b_lo + width * v
        x = np.stack([np.sin(a), c * np.sin(b), c * np.cos(b)], axis=-1)
        g = f(x) * c * width * span * 6.0 * t * (1.0 - t) * (t1 - t0) * (v1 - v0)
        vals.append(g)
        allv = np.concatenate(vals)
        mean = allv.mean()
        err = allv.std(ddof=1) / math.sqrt(allv.size)
        if err <= max(mc_rtol * abs(mean), atol):
            return mean
    raise QuadratureError(
        f"cell {cell_id}: Monte Carlo fallback stalled at {mean:.6g} +/- {err:.2g} "
        f"after {allv.size} samples"
    )


def cell_masses(mixture: VmfMixture, lattice: LatticeEllipse, positions=None, *,
                rtol: float = 1e-6, atol: float = 1e-14, order: int = 8, max_depth: int = 10,
                workers: int = 1, chunk: int = 512) -> np.ndarray:
    """Mixture mass in each requested lattice cell (0-based scan positions)."""
    x0, x1, y0, y1 = cell_bounds(lattice, positions)
    f = _Integrand(mixture)
    n = len(x0)
    starts = list(range(0, n, chunk))

    def work(s):
        e = min(s + chunk, n)
        return _integrate_cells(f, x0[s:e], x1[s:e], y0[s:e], y1[s:e], rtol, atol,
                                order, max_depth, rng_seed=s)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0)


def variance_profile(mixture: VmfMixture, lattice: LatticeEllipse, **quad) -> VarianceProfile:
    """Per-harmonic variances of the channel driven by ``mixture``.

    Keyword arguments are forwarded to :func:`cell_masses`.
    """
    return VarianceProfile(lattice, cell_masses(mixture, lattice, **quad))


# ---------------------------------------------------------------------------
# dictionary, realizations, covariance


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm Fourier-harmonic columns over the antenna grid (x index fastest)."""

    columns: np.ndarray
    lattice: LatticeEllipse

    @property
    def gram(self) -> np.ndarray:
        return self.columns.conj().T @ self.columns


def build_dictionary(aperture: ApertureConfig, lattice: LatticeEllipse,
                     budget: int = DEFAULT_ELEMENT_BUDGET) -> Dictionary:
    size = aperture.n_antennas * len(lattice)
    if size > budget:
        raise MemoryBudgetError(f"dictionary needs {size} elements, budget is {budget}")
    n_y, n_x = np.meshgrid(np.arange(aperture.n_y), np.arange(aperture.n_x), indexing="ij")
    n_x = n_x.ravel()
    n_y = n_y.ravel()
    phase = 2 * np.pi * (np.outer(n_x * aperture.delta / aperture.l_x, lattice.m_x)
                         + np.outer(n_y * aperture.delta / aperture.l_y, lattice.m_y))
    return Dictionary(np.exp(1j * phase) / math.sqrt(aperture.n_antennas), lattice)


@dataclass(frozen=True, eq=False)
class SparseChannel:
    coefficients: np.ndarray
    lattice: LatticeEllipse


def sample_channel(profile: VarianceProfile, seed) -> SparseChannel:
    """One draw of independent ``CN(0, sigma2)`` harmonic coefficients."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, len(profile.sigma2)))
    g = np.sqrt(profile.sigma2 / 2.0) * (z[0] + 1j * z[1])
    return SparseChannel(g, profile.lattice)


def spatial_channel(dictionary: Dictionary, g: SparseChannel) -> np.ndarray:
    if dictionary.columns.shape[1] != g.coefficients.size:
        raise ValueError(
            f"dictionary has {dictionary.columns.shape[1]} columns, channel has {g.coefficients.size} entries"
        )
    return dictionary.columns @ g.coefficients


def covariance_nmse(true: VarianceProfile, est: VarianceProfile, dictionary: Dictionary | None = None,
                    mode: str = "wavenumber", budget: int = DEFAULT_ELEMENT_BUDGET) -> float:
    """Normalized squared Frobenius error of the channel covariance.

    ``mode="full"`` forms ``Psi D Psi^H`` for both profiles; ``"wavenumber"``
    compares the diagonals directly.
    """
    if len(true.sigma2) != len(est.sigma2):
        raise ValueError("profiles are on different lattices")
    if mode == "wavenumber":
        num = np.sum((true.sigma2 - est.sigma2) ** 2)
        den = np.sum(true.sigma2 ** 2)
    elif mode == "full":
        if dictionary is None:
            raise ValueError("full mode needs the dictionary")
        n = dictionary.columns.shape[0]
        if n * n > budget:
            raise MemoryBudgetError(f"covariance needs {n * n} elements, budget is {budget}")
        psi = dictionary.columns
        r_true = (psi * true.sigma2) @ psi.conj().T
        r_est = (psi * est.sigma2) @ psi.conj().T
        num = np.sum(np.abs(r_true - r_est) ** 2)
        den = np.sum(np.abs(r_true) ** 2)
    else:
        raise ValueError(f"unknown NMSE mode {mode!r}")
    return float(num / den)
