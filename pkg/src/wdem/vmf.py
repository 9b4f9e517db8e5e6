"""Von Mises-Fisher mixtures over arrival directions.

Densities are with respect to ``d(theta) d(phi)``, so each component carries
the ``sin(theta)`` surface factor and integrates to one over
``(0, pi) x (0, 2 pi)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_4PI = math.log(4.0 * math.pi)
# below this concentration the kernel is replaced by its uniform limit
ALPHA_UNIFORM = 1e-8


def log_sinh(alpha):
    """``log(sinh(alpha))`` for ``alpha > 0`` without overflow."""
    alpha = np.asarray(alpha, dtype=float)
    return alpha + np.log(-np.expm1(-2.0 * alpha)) - math.log(2.0)


def log_normalizer(alpha):
    """``log(alpha / (4 pi sinh(alpha)))``; tends to ``-log(4 pi)`` as alpha -> 0."""
    alpha = np.asarray(alpha, dtype=float)
    small = alpha < ALPHA_UNIFORM
    safe = np.where(small, 1.0, alpha)
    return np.where(small, -LOG_4PI, np.log(safe) - LOG_4PI - log_sinh(safe))


def unit_vectors(theta, phi):
    """Cartesian unit vectors, shape ``(..., 3)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


@dataclass(frozen=True)
class VmfCluster:
    w: float
    alpha: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.w >= 0:
            raise ValueError(f"weight must be non-negative, got {self.w}")
        if not self.alpha > 0:
            raise ValueError(f"concentration must be positive, got {self.alpha}")
        if not 0 < self.theta < math.pi:
            raise ValueError(f"zenith {self.theta} outside (0, pi)")
        if not 0 <= self.phi < 2 * math.pi:
            raise ValueError(f"azimuth {self.phi} outside [0, 2pi)")

    @property
    def direction(self) -> np.ndarray:
        return unit_vectors(self.theta, self.phi)


@dataclass(frozen=True)
class VmfMixture:
    clusters: tuple[VmfCluster, ...]

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if not self.clusters:
            raise ValueError("a mixture needs at least one cluster")
        total = math.fsum(c.w for c in self.clusters)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, expected 1")

    @classmethod
    def from_arrays(cls, w, alpha, theta, phi, normalize: bool = False) -> "VmfMixture":
        w = np.asarray(w, dtype=float)
        if normalize:
            w = w / w.sum()
        phi = np.mod(np.asarray(phi, dtype=float), 2 * math.pi)
        return cls(tuple(
            VmfCluster(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(w, np.asarray(alpha, float), np.asarray(theta, float), phi)
        ))

    def __len__(self) -> int:
        return len(self.clusters)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.w for c in self.clusters])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.clusters])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([c.theta for c in self.clusters])

    @property
    def phis(self) -> np.ndarray:
        return np.array([c.phi for c in self.clusters])

    @property
    def directions(self) -> np.ndarray:
        return unit_vectors(self.thetas, self.phis)

    def to_dict(self) -> dict:
        return {"clusters": [
            {"w": c.w, "alpha": c.alpha, "theta": c.theta, "phi": c.phi} for c in self.clusters
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "VmfMixture":
        return cls(tuple(
            VmfCluster(float(c["w"]), float(c["alpha"]), float(c["theta"]), float(c["phi"]))
            for c in data["clusters"]
        ))


def save_mixture(mixture: VmfMixture, path) -> None:
    Path(path).write_text(json.dumps(mixture.to_dict(), indent=2))


def load_mixture(path) -> VmfMixture:
    return VmfMixture.from_dict(json.loads(Path(path).read_text()))


def _check_angles(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any((theta <= 0) | (theta >= math.pi)):
        raise ValueError("zenith angles must lie in (0, pi)")
    if np.any((phi < 0) | (phi >= 2 * math.pi)):
        raise ValueError("azimuth angles must lie in [0, 2pi)")
    return theta, phi


def log_kernel(x, alpha, mu):
    """Log vMF density w.r.t. solid angle at unit vectors ``x`` (shape ``(..., 3)``).

    ``alpha`` has shape ``(J,)`` and ``mu`` shape ``(J, 3)``; the result has
    shape ``(..., J)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    cosg = np.asarray(x) @ np.asarray(mu).T
    return log_normalizer(alpha) + alpha * cosg


def cluster_density(theta, phi, c: VmfCluster):
    """Density of one component in ``(theta, phi)`` coordinates."""
    theta, phi = _check_angles(theta, phi)
    if c.alpha < ALPHA_UNIFORM:
        return np.sin(theta) / (4 * math.pi)
    x = unit_vectors(theta, phi)
    logp = log_kernel(x, np.array([c.alpha]), c.direction[None, :])[..., 0]
    return np.exp(logp + np.log(np.sin(theta)))


def mixture_density(theta, phi, mixture: VmfMixture):
    theta, phi = _check_angles(theta, phi)
    return sum(c.w * cluster_density(theta, phi, c) for c in mixture.clusters)


def random_scene(seed, n_c: int, alpha_range=(50.0, 100.0), theta_range=(0.0, math.pi / 2),
                 phi_range=(0.0, 2 * math.pi)) -> VmfMixture:
    """Random ground-truth mixture.

    Raw weights are uniform on (0, 1) and normalized; concentrations and
    angles are uniform on the given ranges.
    """
    if n_c < 1:
        raise ValueError("need at least one scatterer")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, n_c)
    alpha = rng.uniform(*alpha_range, n_c)
    theta = rng.uniform(*theta_range, n_c)
    phi = rng.uniform(*phi_range, n_c)
    w = raw / raw.sum()
    if n_c == 1:
        w = np.ones(1)
    # absorb the normalization residue so the sum is exactly representable
    w[-1] = 1.0 - math.fsum(w[:-1])
    return VmfMixture.from_arrays(w, alpha, theta, phi)
