import math

import numpy as np
import pytest

from wdem.baselines import (BaselineConfig, kmeans_estimate, kmeans_mixture, ls_estimate,
                            naive_gmm_estimate, naive_gmm_fit, omp_estimate,
                            orthogonal_matching_pursuit, sensing_matrix, spherical_kmeans)
from wdem.channel import (VarianceProfile, build_dictionary, covariance_nmse, sample_channel,
                          variance_profile)
from wdem.lattice import ApertureConfig, build_lattice
from wdem.observation import SampleSet, build_selection, expected_sample_values, observe, sample_values
from wdem.vmf import VmfMixture, random_scene, unit_vectors
from wdem.wd_em import ALPHA_MAX, EmSettings, run

AP = ApertureConfig(0.1, 0.1, 30e9, 0.1 / 21, 21, 21)
LAT = build_lattice(AP)


def test_config_validation():
    assert BaselineConfig().omp_sparsity == 64
    with pytest.raises(ValueError):
        BaselineConfig(method="amp")
    with pytest.raises(ValueError):
        BaselineConfig(kmeans_k=0)


# --- LS -----------------------------------------------------------------------

def test_ls_single_nonzero_pick():
    sel = build_selection(LAT, 50)
    y = np.zeros(50, dtype=complex)
    y[7] = 0.3 - 0.4j
    prof = ls_estimate(y, sel, LAT)
    assert np.count_nonzero(prof.sigma2) == 1
    assert prof.sigma2[sel.positions[7]] == pytest.approx(0.25)


def test_ls_zero_and_support():
    sel = build_selection(LAT, 80)
    assert ls_estimate(np.zeros(80), sel, LAT).total_power == 0.0
    y = np.random.default_rng(0).normal(size=80) + 0j
    assert np.count_nonzero(ls_estimate(y, sel, LAT).sigma2) <= 80


def test_ls_is_minimum_norm_solution():
    sel = build_selection(LAT, 60)
    y = np.random.default_rng(1).normal(size=60) + 1j
    b = sel.matrix()
    g_min = np.linalg.pinv(b) @ y
    np.testing.assert_allclose(ls_estimate(y, sel, LAT).sigma2, np.abs(g_min) ** 2, atol=1e-12)


# --- OMP ----------------------------------------------------------------------

def test_omp_exact_support_recovery():
    sel = build_selection(LAT, 100)
    g = np.zeros(len(LAT), dtype=complex)
    support = sel.positions[[3, 40, 77]]
    g[support] = [1.0, -2.0j, 0.5 + 0.5j]
    y = g[sel.positions]
    res = orthogonal_matching_pursuit(y, sensing_matrix(sel), 3)
    assert sorted(res.support.tolist()) == sorted(support.tolist())
    np.testing.assert_allclose(res.coefficients, g, atol=1e-12)


def test_omp_rejects_bad_sparsity():
    sel = build_selection(LAT, 10)
    with pytest.raises(ValueError):
        omp_estimate(np.ones(10), sel, LAT, sparsity=11)
    with pytest.raises(ValueError):
        omp_estimate(np.ones(10), sel, LAT, sparsity=0)


def test_omp_residual_non_increasing():
    sel = build_selection(LAT, 100)
    y = np.random.default_rng(2).normal(size=100) + 1j * np.random.default_rng(3).normal(size=100)
    res = orthogonal_matching_pursuit(y, sensing_matrix(sel), 40)
    assert np.all(np.diff(res.residual_norms) <= 1e-12)


def test_omp_full_sparsity_matches_ls_support():
    sel = build_selection(LAT, 64)
    rng = np.random.default_rng(4)
    y = rng.normal(size=64) + 1j * rng.normal(size=64)
    a = omp_estimate(y, sel, LAT, sparsity=64)
    b = ls_estimate(y, sel, LAT)
    assert set(np.flatnonzero(a.sigma2)) == set(np.flatnonzero(b.sigma2))
    np.testing.assert_allclose(a.sigma2, b.sigma2, atol=1e-12)


def test_omp_exact_gram_mode():
    d = build_dictionary(AP, LAT)
    sel = build_selection(LAT, 100)
    a = sensing_matrix(sel, d)
    # the default aperture's Gram is the identity, so both sensing matrices agree
    np.testing.assert_allclose(a, sensing_matrix(sel), atol=1e-12)


# --- k-means ------------------------------------------------------------------

def _blob(rng, n, theta, phi, spread=0.03):
    th = np.clip(theta + rng.normal(0, spread, n), 1e-3, math.pi - 1e-3)
    ph = (phi + rng.normal(0, spread, n)) % (2 * math.pi)
    return th, ph


def test_kmeans_all_samples_at_one_point():
    s = SampleSet(np.full(12, 0.7), np.full(12, 1.3), np.linspace(0.1, 1.2, 12))
    m = kmeans_mixture(s, k=3, seed=0)
    assert len(m) == 1
    assert m.clusters[0].theta == pytest.approx(0.7) and m.clusters[0].phi == pytest.approx(1.3)
    assert m.alphas[0] == ALPHA_MAX


def test_kmeans_single_centroid_is_weighted_mean():
    rng = np.random.default_rng(5)
    th, ph = _blob(rng, 40, 0.6, 2.0, 0.2)
    s = rng.uniform(0.1, 1.0, 40)
    x = unit_vectors(th, ph)
    cent, labels = spherical_kmeans(x, s, 1)
    v = s @ x
    np.testing.assert_allclose(cent[0], v / np.linalg.norm(v), atol=1e-12)
    assert np.all(labels == 0)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(6)
    t1, p1 = _blob(rng, 60, 0.4, 1.0)
    t2, p2 = _blob(rng, 60, 1.0, 4.0)
    s = SampleSet(np.r_[t1, t2], np.r_[p1, p2], np.ones(120))
    m = kmeans_mixture(s, k=2, seed=1)
    centers = unit_vectors(np.array([0.4, 1.0]), np.array([1.0, 4.0]))
    for c in centers:
        ang = min(math.degrees(math.acos(min(1.0, float(c @ d)))) for d in m.directions)
        assert ang < 2.0
    np.testing.assert_allclose(sorted(m.weights), [0.5, 0.5])


def test_kmeans_mixture_is_valid():
    s = sample_values(observe(sample_channel(variance_profile(random_scene(1, 3), LAT), 1),
                              build_selection(LAT, 200)), build_selection(LAT, 200), LAT)
    m = kmeans_mixture(s, k=4, seed=0)
    assert math.fsum(m.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.alphas > 0)
    prof = kmeans_estimate(s, LAT, k=4, seed=0)
    assert prof.total_power <= 1.0 + 1e-6


def test_kmeans_reseeds_empty_cluster():
    # three identical far-out points plus a big blob: a centroid starting on the
    # duplicates must not be lost when another centroid steals them
    rng = np.random.default_rng(7)
    th, ph = _blob(rng, 50, 0.5, 1.0, 0.3)
    s = np.r_[np.ones(50), np.full(3, 1e-3)]
    x = unit_vectors(np.r_[th, [1.3] * 3], np.r_[ph, [4.5] * 3])
    cent, labels = spherical_kmeans(x, s, 4, seed=0)
    assert cent.shape[0] == 4
    assert set(labels.tolist()) == {0, 1, 2, 3}


# --- Naive-GMM ----------------------------------------------------------------

def test_naive_gmm_keeps_weights_equal():
    prof = variance_profile(random_scene(2, 3), LAT)
    s = expected_sample_values(prof, build_selection(LAT, 317))
    rep = naive_gmm_fit(s, components=4, seed=0)
    np.testing.assert_allclose(rep.mixture.weights, 1.0 / len(rep.mixture))
    assert np.all(np.diff(rep.objective_trace) >= -1e-9)


def test_naive_gmm_matches_wd_em_on_equal_weights():
    scene = VmfMixture.from_arrays([0.5, 0.5], [90, 90], [0.4, 0.6], [0.8, 3.8])
    s = expected_sample_values(variance_profile(scene, LAT), build_selection(LAT, len(LAT)))
    a = run(s, EmSettings(max_scatterers=2, seed=0)).mixture
    b = naive_gmm_fit(s, components=2, seed=0).mixture
    key = lambda m: sorted(zip(m.thetas.round(6), m.phis.round(6)))
    np.testing.assert_allclose(key(a), key(b), atol=1e-3)


def test_naive_gmm_worse_on_unequal_weights():
    scene_w = (0.7, 0.3)
    gaps = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        th = rng.uniform(0.2, 0.6, 2)
        ph = np.array([rng.uniform(0, math.pi), rng.uniform(math.pi, 2 * math.pi)])
        scene = VmfMixture.from_arrays(scene_w, rng.uniform(50, 100, 2), th, ph)
        prof = variance_profile(scene, LAT)
        sel = build_selection(LAT, 200)
        s = sample_values(observe(sample_channel(prof, seed), sel), sel, LAT)
        wd = variance_profile(run(s, EmSettings(max_scatterers=4, seed=seed)).mixture, LAT)
        ng = naive_gmm_estimate(s, LAT, components=4, seed=seed)
        gaps.append(covariance_nmse(prof, ng) - covariance_nmse(prof, wd))
    assert np.median(gaps) > 0

