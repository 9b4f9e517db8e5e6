"""Comparison estimators of the wavenumber-domain variance profile.

``ls`` and ``omp`` work on the raw pilots ``y``; ``kmeans`` and
``naive_gmm`` work on the sample set and turn a fitted vMF mixture into a
profile the same way WD-EM does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .channel import Dictionary, VarianceProfile, variance_profile
from .lattice import LatticeEllipse
from .observation import SampleSet, SelectionMap
from .vmf import VmfMixture, unit_vectors
from .wd_em import ALPHA_MAX, EmSettings, FitReport, inverse_langevin, R_CLAMP, THETA_EPS, run

Method = Literal["ls", "omp", "kmeans", "naive_gmm"]
METHODS = ("ls", "omp", "kmeans", "naive_gmm")


@dataclass(frozen=True)
class BaselineConfig:
    method: Method = "ls"
    omp_sparsity: int = 64
    kmeans_k: int = 4
    gmm_components: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}")
        for name in ("omp_sparsity", "kmeans_k", "gmm_components"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


# ---------------------------------------------------------------------------
# pilot-domain estimators


def ls_estimate(y, sel: SelectionMap, lattice: LatticeEllipse) -> VarianceProfile:
    """Minimum-norm least squares: ``|y_i|^2`` on the picked harmonics, zero elsewhere."""
    y = np.asarray(y)
    if y.size != sel.n_rf:
        raise ValueError(f"expected {sel.n_rf} observations, got {y.size}")
    sigma2 = np.zeros(len(lattice))
    sigma2[sel.positions] = np.abs(y) ** 2
    return VarianceProfile(lattice, sigma2)


@dataclass(frozen=True, eq=False)
class PursuitResult:
    support: np.ndarray
    coefficients: np.ndarray
    residual_norms: list


def sensing_matrix(sel: SelectionMap, dictionary: Dictionary | None = None) -> np.ndarray:
    """``B`` under idealized sampling, ``B Psi^H Psi`` when a dictionary is given."""
    if dictionary is None:
        return sel.matrix().astype(complex)
    psi = dictionary.columns
    return psi[:, sel.positions].conj().T @ psi


def orthogonal_matching_pursuit(y, a: np.ndarray, sparsity: int) -> PursuitResult:
    """Greedy pursuit: ``sparsity`` rounds of best-correlated column plus LS refit."""
    y = np.asarray(y, dtype=complex)
    n_obs, n_atoms = a.shape
    if sparsity < 1:
        raise ValueError("sparsity must be >= 1")
    if sparsity > n_obs:
        raise ValueError(f"sparsity {sparsity} exceeds the {n_obs} observations")
    norms = np.linalg.norm(a, axis=0)
    usable = norms > 0
    safe = np.where(usable, norms, 1.0)
    residual = y.copy()
    support: list[int] = []
    history = [float(np.linalg.norm(residual))]
    coef = np.zeros(0, dtype=complex)
    for _ in range(sparsity):
        score = np.abs(a.conj().T @ residual) / safe
        score[~usable] = -1.0
        score[support] = -1.0
        j = int(np.argmax(score))
        if score[j] < 0:
            break
        support.append(j)
        coef, *_ = np.linalg.lstsq(a[:, support], y, rcond=None)
        residual = y - a[:, support] @ coef
        history.append(float(np.linalg.norm(residual)))
    x = np.zeros(n_atoms, dtype=complex)
    x[support] = coef
    return PursuitResult(np.array(support, dtype=np.int64), x, history)


def omp_estimate(y, sel: SelectionMap, lattice: LatticeEllipse, sparsity: int = 64,
                 dictionary: Dictionary | None = None) -> VarianceProfile:
    """Profile ``|g_hat|^2`` from a ``sparsity``-term OMP fit of the pilots.

    Pass ``dictionary`` to pursue over the exact ``B Psi^H Psi`` columns.
    """
    result = orthogonal_matching_pursuit(y, sensing_matrix(sel, dictionary), sparsity)
    if result.coefficients.size != len(lattice):
        raise ValueError("sensing matrix and lattice disagree on size")
    return VarianceProfile(lattice, np.abs(result.coefficients) ** 2)


# ---------------------------------------------------------------------------
# sample-domain estimators


def _weighted_seed(rng, s, k):
    p = s / s.sum()
    live = int(np.count_nonzero(p))
    return rng.choice(s.size, size=min(k, live), replace=False, p=p)


def spherical_kmeans(x: np.ndarray, s: np.ndarray, k: int, seed=0, max_iter: int = 300):
    """Power-weighted k-means of unit vectors under cosine similarity.

    Returns ``(centroids, labels)``.  An emptied cluster is re-seeded at the
    sample worst served by its centroid; a centroid that cannot be re-seeded
    (all remaining samples coincide with existing centroids) is dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, dtype=float)
    if not np.any(s > 0):
        raise ValueError("all sample powers are zero")
    rng = np.random.default_rng(seed)
    cent = x[_weighted_seed(rng, s, k)].copy()
    labels = np.full(s.size, -1)
    for _ in range(max_iter):
        new = np.argmax(x @ cent.T, axis=1)
        for j in range(cent.shape[0]):
            if s[new == j].sum() > 0:
                continue
            gap = s * (1.0 - np.max(x @ cent.T, axis=1))
            i = int(np.argmax(gap))
            if gap[i] <= 0:
                continue
            cent[j] = x[i]
            new = np.argmax(x @ cent.T, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(cent.shape[0]):
            v = s[labels == j] @ x[labels == j]
            norm = np.linalg.norm(v)
            if norm > 0:
                cent[j] = v / norm
    alive = np.array([s[labels == j].sum() > 0 for j in range(cent.shape[0])])
    remap = np.cumsum(alive) - 1
    return cent[alive], remap[labels]


def moment_matched_mixture(x: np.ndarray, s: np.ndarray, labels: np.ndarray,
                           alpha_max: float = ALPHA_MAX) -> VmfMixture:
    """One vMF per label: mean direction and inverse-Langevin concentration of the resultant."""
    w, alpha, theta, phi = [], [], [], []
    total = s.sum()
    for j in range(int(labels.max()) + 1):
        sj = s[labels == j]
        mass = sj.sum()
        if mass <= 0:
            continue
        v = sj @ x[labels == j]
        r = min(np.linalg.norm(v) / mass, R_CLAMP)
        alpha.append(min(max(inverse_langevin(r), 1e-12), alpha_max))
        u = v / np.linalg.norm(v)
        theta.append(min(max(math.acos(max(-1.0, min(1.0, u[2]))), THETA_EPS), math.pi - THETA_EPS))
        phi.append(math.atan2(u[1], u[0]) % (2 * math.pi))
        w.append(mass / total)
    return VmfMixture.from_arrays(w, alpha, theta, phi, normalize=True)


def kmeans_mixture(samples: SampleSet, k: int = 4, seed=0, alpha_max: float = ALPHA_MAX) -> VmfMixture:
    x = unit_vectors(samples.theta, samples.phi)
    _, labels = spherical_kmeans(x, samples.s, k, seed)
    return moment_matched_mixture(x, samples.s, labels, alpha_max)


def kmeans_estimate(samples: SampleSet, lattice: LatticeEllipse, k: int = 4, seed=0,
                    **quad) -> VarianceProfile:
    return variance_profile(kmeans_mixture(samples, k, seed), lattice, **quad)


def naive_gmm_fit(samples: SampleSet, components: int = 4, seed=0,
                  settings: EmSettings | None = None) -> FitReport:
    """The WD-EM loop with every weight held at ``1/components``."""
    settings = replace(settings or EmSettings(), max_scatterers=components, seed=seed)
    return run(samples, settings, freeze_weights=True)


def naive_gmm_estimate(samples: SampleSet, lattice: LatticeEllipse, components: int = 4, seed=0,
                       settings: EmSettings | None = None, **quad) -> VarianceProfile:
    report = naive_gmm_fit(samples, components, seed, settings)
    return variance_profile(report.mixture, lattice, **quad)
