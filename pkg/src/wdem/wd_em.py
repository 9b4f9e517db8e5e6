"""Weighted EM for vMF mixtures over wavenumber-domain samples.

Each sample ``i`` is a direction ``(theta_i, phi_i)`` carrying power
``s_i``.  The E-step splits ``s_i`` across clusters in proportion to
``w_j p_j(theta_i, phi_i)``; the M-step then solves the weighted
maximum-likelihood conditions of every cluster in closed form for the
azimuth and zenith (in that order) and through the inverse Langevin
function for the concentration, and finally re-estimates the weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .observation import SampleSet
from .vmf import VmfMixture, log_normalizer, unit_vectors

ALPHA_MAX = 700.0
ALPHA_MIN = 1e-12
R_CLAMP = 1.0 - 1e-12
# keep fitted zenith angles strictly inside (0, pi)
THETA_EPS = 1e-12


class EmptySampleError(ValueError):
    """Nothing to fit: the sample powers are all zero."""


class StarvedClusterError(ValueError):
    """A cluster received no responsibility mass."""


@dataclass(frozen=True)
class EmSettings:
    max_scatterers: int = 4
    tol: float = 1e-6
    max_iter: int = 500
    restarts: int = 5
    prune_weight: float = 0.01
    seed: int = 0
    merge_angle: float = math.radians(1.0)
    merge_alpha_rtol: float = 0.1
    alpha_max: float = ALPHA_MAX

    def __post_init__(self):
        if self.max_scatterers < 1:
            raise ValueError("max_scatterers must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """``shat[i, j]``: share of sample power ``s_i`` attributed to cluster ``j``."""

    shat: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        return self.shat.sum(axis=0)


@dataclass(eq=False)
class FitReport:
    mixture: VmfMixture
    iterations: int
    final_objective: float
    objective_trace: list[float]
    converged: bool
    responsibilities: Responsibilities | None = None
    pruned: int = 0
    merged: int = 0
    restart_objectives: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mixture": self.mixture.to_dict(),
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "objective_trace": list(self.objective_trace),
            "converged": self.converged,
            "pruned": self.pruned,
            "merged": self.merged,
            "restart_objectives": list(self.restart_objectives),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# building blocks


def _sample_geometry(samples: SampleSet):
    x = unit_vectors(samples.theta, samples.phi)
    with np.errstate(divide="ignore"):
        log_sin = np.log(np.abs(np.sin(samples.theta)))
    return x, log_sin


def _log_joint(x, w, alpha, theta, phi):
    """``log(w_j p_j(theta_i, phi_i)) - log(sin(theta_i))``, shape ``(n, J)``.

    The ``sin(theta_i)`` factor is common to every cluster, so it cancels in
    the responsibilities and only shifts the objective by a constant; leaving
    it out keeps samples at the pole (``theta = 0``) finite.
    """
    mu = unit_vectors(theta, phi)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    return log_w + log_normalizer(alpha) + alpha * (x @ mu.T)


def init_params(settings: EmSettings, rng=None) -> VmfMixture:
    """Equal weights, unit concentration and random angles on the upper hemisphere."""
    rng = np.random.default_rng(settings.seed if rng is None else rng)
    j = settings.max_scatterers
    theta = rng.uniform(0.0, math.pi / 2, j)
    phi = rng.uniform(0.0, 2 * math.pi, j)
    theta = np.clip(theta, THETA_EPS, math.pi - THETA_EPS)
    return VmfMixture.from_arrays(np.full(j, 1.0 / j), np.ones(j), theta, phi)


def _lse_rows(logp):
    return logsumexp(logp, axis=1)


def _posterior(s, logp, lse, w):
    with np.errstate(invalid="ignore"):
        post = np.exp(logp - lse[:, None])
    # a row whose every term underflowed falls back to the current weights
    bad = ~np.isfinite(lse)
    if np.any(bad):
        post[bad] = w / w.sum()
    return post * s[:, None]


def _e_step_arrays(s, logp, w):
    return _posterior(s, logp, _lse_rows(logp), w)


def e_step(samples: SampleSet, mixture: VmfMixture) -> Responsibilities:
    """Split every sample's power across clusters by posterior responsibility."""
    if not np.any(samples.s > 0):
        raise EmptySampleError("all sample powers are zero")
    x, _ = _sample_geometry(samples)
    logp = _log_joint(x, mixture.weights, mixture.alphas, mixture.thetas, mixture.phis)
    return Responsibilities(_e_step_arrays(samples.s, logp, mixture.weights))


def _azimuth(mu1, eta1, previous):
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.arctan(mu1 / eta1)
    return np.select(
        [
            (mu1 > 0) & (eta1 > 0),
            eta1 < 0,
            (mu1 < 0) & (eta1 > 0),
            (mu1 == 0) & (eta1 > 0),
            (eta1 == 0) & (mu1 > 0),
            (eta1 == 0) & (mu1 < 0),
        ],
        [base, base + np.pi, base + 2 * np.pi, 0.0, np.pi / 2, 3 * np.pi / 2],
        default=previous,
    )


def _zenith(mu2, eta2):
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.arctan(mu2 / eta2)
    theta = np.select(
        [mu2 * eta2 > 0, mu2 * eta2 < 0, eta2 == 0, (mu2 == 0) & (eta2 > 0)],
        [base, base + np.pi, np.pi / 2, 0.0],
        default=np.pi,
    )
    return np.clip(theta, THETA_EPS, np.pi - THETA_EPS)


def _column(resp, j=None):
    col = resp.shat if isinstance(resp, Responsibilities) else np.asarray(resp, dtype=float)
    if j is not None:
        col = col[:, j]
    if col.sum() <= 0:
        raise StarvedClusterError("cluster has no responsibility mass")
    return col


def m_step_azimuth(resp, samples: SampleSet, previous: float = 0.0) -> float:
    """Azimuth update from one responsibility column (``resp`` may be a 1-d array)."""
    col = _column(resp)
    x, _ = _sample_geometry(samples)
    return float(_azimuth(col @ x[:, 1], col @ x[:, 0], previous))


def m_step_zenith(resp, samples: SampleSet, phi_hat: float) -> float:
    col = _column(resp)
    x, _ = _sample_geometry(samples)
    mu2 = math.cos(phi_hat) * (col @ x[:, 0]) + math.sin(phi_hat) * (col @ x[:, 1])
    return float(_zenith(mu2, col @ x[:, 2]))


def langevin(alpha):
    """``coth(alpha) - 1/alpha`` with a series near zero."""
    alpha = np.asarray(alpha, dtype=float)
    small = np.abs(alpha) < 1e-2
    a = np.where(small, 1.0, alpha)
    with np.errstate(over="ignore"):
        direct = 1.0 / np.tanh(a) - 1.0 / a
    a2 = alpha * alpha
    series = alpha * (1.0 / 3 - a2 * (1.0 / 45 - a2 * (2.0 / 945 - a2 / 4725)))
    return np.where(small, series, direct)


def _langevin_scalar(a: float) -> float:
    if a < 1e-2:
        a2 = a * a
        return a * (1.0 / 3 - a2 * (1.0 / 45 - a2 * (2.0 / 945 - a2 / 4725)))
    return 1.0 / math.tanh(a) - 1.0 / a


def _langevin_prime_scalar(a: float) -> float:
    if a < 1e-2:
        a2 = a * a
        return 1.0 / 3 - a2 * (1.0 / 15 - a2 * (2.0 / 189 - a2 / 675))
    if a > 350.0:
        return 1.0 / (a * a)
    return 1.0 / (a * a) - 1.0 / math.sinh(a) ** 2


def inverse_langevin(r: float, tol: float = 1e-14, max_iter: int = 100) -> float:
    """Solve ``coth(a) - 1/a = r`` for ``a`` given ``0 <= r < 1``.

    Newton from ``r (3 - r^2) / (1 - r^2)``; bisection on the bracket
    ``[3r, 1/(1-r)]`` takes over if Newton leaves it or stalls.
    """
    r = float(r)
    if not 0.0 <= r < 1.0:
        raise ValueError(f"mean resultant length {r} outside [0, 1)")
    if r == 0.0:
        return 0.0
    lo, hi = 3.0 * r, 1.0 / (1.0 - r)
    a = r * (3.0 - r * r) / (1.0 - r * r)
    for _ in range(max_iter):
        if not lo <= a <= hi:
            break
        res = _langevin_scalar(a) - r
        if abs(res) <= tol:
            return a
        step = res / _langevin_prime_scalar(a)
        if res > 0:
            hi = min(hi, a)
        else:
            lo = max(lo, a)
        a = a - step
    for _ in range(2000):
        a = 0.5 * (lo + hi)
        res = _langevin_scalar(a) - r
        if abs(res) <= tol or hi - lo <= 4 * np.finfo(float).eps * hi:
            return a
        if res > 0:
            hi = a
        else:
            lo = a
    return 0.5 * (lo + hi)


def _concentration(mu3, eta3, alpha_max):
    r = np.clip(mu3 / eta3, 0.0, R_CLAMP)
    out = np.array([inverse_langevin(v) for v in np.atleast_1d(r)])
    return np.clip(out, ALPHA_MIN, alpha_max)


def m_step_concentration(resp, samples: SampleSet, theta_hat: float, phi_hat: float,
                         alpha_max: float = ALPHA_MAX) -> float:
    col = _column(resp)
    x, _ = _sample_geometry(samples)
    mu3 = col @ (x @ unit_vectors(theta_hat, phi_hat))
    return float(_concentration(np.array([mu3]), np.array([col.sum()]), alpha_max)[0])


def m_step_weights(resp) -> np.ndarray:
    shat = resp.shat if isinstance(resp, Responsibilities) else np.asarray(resp, dtype=float)
    total = shat.sum()
    if not total > 0:
        raise EmptySampleError("responsibilities carry no mass")
    return shat.sum(axis=0) / total


def weighted_log_likelihood(samples: SampleSet, mixture: VmfMixture, jacobian: bool = True) -> float:
    """``sum_i s_i log sum_j w_j p_j(theta_i, phi_i)``.

    ``jacobian=False`` drops the parameter-free ``sum_i s_i log sin(theta_i)``
    term; that is the quantity EM monitors (it stays finite for a sample at
    the pole).
    """
    x, log_sin = _sample_geometry(samples)
    obj = _objective(samples.s, x, mixture.weights, mixture.alphas, mixture.thetas, mixture.phis)
    if jacobian:
        live = samples.s > 0
        obj += float(samples.s[live] @ log_sin[live])
    return obj


def _objective(s, x, w, alpha, theta, phi):
    live = s > 0
    if not np.any(live):
        return 0.0
    logp = _log_joint(x[live], w, alpha, theta, phi)
    return float(s[live] @ logsumexp(logp, axis=1))


# ---------------------------------------------------------------------------
# the loop


@dataclass
class _State:
    w: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    @classmethod
    def of(cls, m: VmfMixture) -> "_State":
        return cls(m.weights, m.alphas, m.thetas, m.phis)

    def take(self, keep) -> "_State":
        return _State(self.w[keep], self.alpha[keep], self.theta[keep], self.phi[keep])

    def mixture(self) -> VmfMixture:
        w = self.w / self.w.sum()
        return VmfMixture.from_arrays(w, self.alpha, self.theta, self.phi, normalize=True)


def _m_step(shat, x, st: _State, freeze_weights: bool, alpha_max: float) -> _State:
    mass = shat.sum(axis=0)
    keep = mass > 0
    if not np.all(keep):
        shat = shat[:, keep]
        mass = mass[keep]
        st = st.take(keep)
    mu1 = shat.T @ x[:, 1]
    eta1 = shat.T @ x[:, 0]
    phi = _azimuth(mu1, eta1, st.phi)
    mu2 = np.cos(phi) * eta1 + np.sin(phi) * mu1
    eta2 = shat.T @ x[:, 2]
    theta = _zenith(mu2, eta2)
    mu3 = np.sin(theta) * mu2 + np.cos(theta) * eta2
    alpha = _concentration(mu3, mass, alpha_max)
    if freeze_weights:
        w = np.full(mass.size, 1.0 / mass.size)
    else:
        w = mass / mass.sum()
    return _State(w, alpha, theta, np.mod(phi, 2 * np.pi))


def _em(samples: SampleSet, init: VmfMixture, settings: EmSettings, freeze_weights: bool):
    s = samples.s
    if not np.any(s > 0):
        raise EmptySampleError("all sample powers are zero")
    x, _ = _sample_geometry(samples)
    live = s > 0
    st = _State.of(init)
    if freeze_weights:
        st.w = np.full(st.w.size, 1.0 / st.w.size)
    scale = float(s.sum())
    # the log-joint at the current parameters serves both the objective and the next E-step
    logp = _log_joint(x, st.w, st.alpha, st.theta, st.phi)
    lse = _lse_rows(logp)
    obj = float(s[live] @ lse[live])
    trace = [obj]
    shat = None
    converged = False
    it = 0
    for it in range(1, settings.max_iter + 1):
        shat = _posterior(s, logp, lse, st.w)
        keep = shat.sum(axis=0) > 0
        st = _m_step(shat, x, st, freeze_weights, settings.alpha_max)
        shat = shat[:, keep]
        logp = _log_joint(x, st.w, st.alpha, st.theta, st.phi)
        lse = _lse_rows(logp)
        new = float(s[live] @ lse[live])
        trace.append(new)
        if abs(new - obj) <= settings.tol * max(abs(obj), scale):
            obj = new
            converged = True
            break
        obj = new
    return st, trace, converged, it, shat


def _merge(st: _State, angle: float, alpha_rtol: float):
    """Fuse components that sit on the same direction with matching concentration."""
    order = np.argsort(-st.w, kind="stable")
    mu = unit_vectors(st.theta, st.phi)
    groups: list[list[int]] = []
    for j in order:
        for g in groups:
            lead = g[0]
            close = math.acos(min(1.0, float(mu[j] @ mu[lead]))) <= angle
            similar = abs(st.alpha[j] - st.alpha[lead]) <= alpha_rtol * st.alpha[lead]
            if close and similar:
                g.append(j)
                break
        else:
            groups.append([j])
    if all(len(g) == 1 for g in groups):
        return st, 0
    w, alpha, theta, phi = [], [], [], []
    for g in groups:
        gw = st.w[g]
        tot = gw.sum()
        v = (gw[:, None] * mu[g]).sum(axis=0)
        v /= np.linalg.norm(v)
        w.append(tot)
        alpha.append(float(gw @ st.alpha[g] / tot))
        theta.append(math.acos(max(-1.0, min(1.0, v[2]))))
        phi.append(math.atan2(v[1], v[0]) % (2 * math.pi))
    merged = len(st.w) - len(groups)
    return _State(np.array(w), np.array(alpha), np.clip(theta, THETA_EPS, math.pi - THETA_EPS),
                  np.array(phi)), merged


def _finalize(st: _State, settings: EmSettings, freeze_weights: bool):
    st, merged = _merge(st, settings.merge_angle, settings.merge_alpha_rtol)
    keep = st.w >= settings.prune_weight * st.w.sum()
    if not np.any(keep):
        keep = st.w == st.w.max()
    st = st.take(keep)
    if freeze_weights:
        st.w = np.full(st.w.size, 1.0 / st.w.size)
    return st, int((~keep).sum()), merged


def _report(samples, init, settings, freeze_weights, finalize) -> FitReport:
    st, trace, converged, it, shat = _em(samples, init, settings, freeze_weights)
    pruned = merged = 0
    if finalize:
        st, pruned, merged = _finalize(st, settings, freeze_weights)
    return FitReport(
        mixture=st.mixture(),
        iterations=it,
        final_objective=trace[-1],
        objective_trace=trace,
        converged=converged,
        responsibilities=None if shat is None else Responsibilities(shat),
        pruned=pruned,
        merged=merged,
    )


def fit_from(samples: SampleSet, init: VmfMixture, settings: EmSettings,
             freeze_weights: bool = False, finalize: bool = True) -> FitReport:
    """Run one EM pass from ``init``.

    With ``finalize`` the converged mixture has coincident components fused
    and components below ``prune_weight`` removed (weights renormalized).
    ``responsibilities`` in the report are the ones the last M-step used.
    """
    return _report(samples, init, settings, freeze_weights, finalize)


def run(samples: SampleSet, settings: EmSettings = EmSettings(),
        freeze_weights: bool = False) -> FitReport:
    """Best-of-restarts WD-EM fit.

    Restart ``r`` draws its initial angles from an independent child of
    ``settings.seed``; the restart with the highest final objective wins.
    """
    if len(samples) == 0:
        raise EmptySampleError("no samples")
    children = np.random.SeedSequence(settings.seed).spawn(settings.restarts)
    best = None
    objectives = []
    for child in children:
        init = init_params(settings, np.random.default_rng(child))
        result = _em(samples, init, settings, freeze_weights)
        objectives.append(result[1][-1])
        if best is None or result[1][-1] > best[1][-1]:
            best = result
    st, trace, converged, it, shat = best
    st, pruned, merged = _finalize(st, settings, freeze_weights)
    return FitReport(
        mixture=st.mixture(),
        iterations=it,
        final_objective=trace[-1],
        objective_trace=trace,
        converged=converged,
        responsibilities=Responsibilities(shat),
        pruned=pruned,
        merged=merged,
        restart_objectives=objectives,
    )
