import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdem.channel import VarianceProfile, build_dictionary, sample_channel, variance_profile
from wdem.lattice import build_lattice, index_to_angles, scan_position
from wdem.observation import (SampleSet, build_selection, expected_sample_values, load_samples,
                              noise_var_for_snr, observe, sample_values, save_samples, snr_of, to_db)
from wdem.vmf import random_scene


def test_selection_stride_one(lat05):
    sel = build_selection(lat05, 81)
    assert sel.picks.tolist() == list(range(1, 82))


def test_selection_formula(lat05):
    assert build_selection(lat05, 4).picks.tolist() == [1, 21, 41, 61]
    assert build_selection(lat05, 1).picks.tolist() == [1]


@pytest.mark.parametrize("n_rf", [0, 82])
def test_selection_range(lat05, n_rf):
    with pytest.raises(ValueError):
        build_selection(lat05, n_rf)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 317))
def test_selection_properties(n_rf):
    from wdem.lattice import ApertureConfig
    lat = build_lattice(ApertureConfig(0.1, 0.1, 30e9, 0.1 / 21, 21, 21))
    sel = build_selection(lat, n_rf)
    picks = sel.picks
    assert picks.size == n_rf
    assert np.all(np.diff(picks) > 0)
    assert picks[0] == 1 and picks[-1] <= len(lat)
    assert np.array_equal(picks, build_selection(lat, n_rf).picks)
    b = sel.matrix()
    assert b.shape == (n_rf, len(lat)) and np.all(b.sum(axis=1) == 1)


def noiseless_setup(lat):
    prof = variance_profile(random_scene(0, 3), lat)
    return prof, sample_channel(prof, 1), build_selection(lat, 20)


def test_observe_noiseless_reads_picked_coefficients(lat05):
    prof, g, sel = noiseless_setup(lat05)
    y = observe(g, sel)
    np.testing.assert_array_equal(y, g.coefficients[sel.positions])


def test_observe_linear_in_pilot(lat05):
    prof, g, sel = noiseless_setup(lat05)
    y1 = observe(g, sel, pilot=1.0, noise_var=0.3, seed=4)
    y2 = observe(g, sel, pilot=2.5j, noise_var=0.3, seed=4)
    n = y1 - g.coefficients[sel.positions]
    np.testing.assert_allclose(y2 - n, 2.5j * (y1 - n), atol=1e-14)


def test_observe_noise_power(lat05):
    g = sample_channel(VarianceProfile.zeros(lat05), 0)
    sel = build_selection(lat05, 81)
    power = np.mean([np.abs(observe(g, sel, noise_var=0.4, seed=s)) ** 2 for s in range(1300)])
    assert power == pytest.approx(0.4, rel=0.03)


def test_observe_exact_gram_equals_ideal_when_orthogonal(ap05, lat05):
    _, g, sel = noiseless_setup(lat05)
    # away from the aliased edge harmonics the exact and idealized reads coincide
    d = build_dictionary(ap05, lat05)
    exact = observe(g, sel, exact_gram=True, dictionary=d)
    ideal = observe(g, sel)
    edge = {(5, 0), (-5, 0), (0, 5), (0, -5)}
    keep = [i for i, p in enumerate(sel.positions)
            if (int(lat05.m_x[p]), int(lat05.m_y[p])) not in edge]
    np.testing.assert_allclose(exact[keep], ideal[keep], atol=1e-12)
    with pytest.raises(ValueError):
        observe(g, sel, exact_gram=True)


def test_observe_dimension_mismatch(lat05, lat10):
    g = sample_channel(VarianceProfile.zeros(lat05), 0)
    with pytest.raises(ValueError):
        observe(g, build_selection(lat10, 5))


def test_sample_values_and_angles(lat05):
    sel = build_selection(lat05, 4)
    s = sample_values(np.array([1 + 0j, 0.5j, 0, 2]), sel, lat05, noise_var=0.1)
    np.testing.assert_allclose(s.s, [1.0, 0.25, 0.0, 4.0])
    assert s.noise_var == 0.1 and s.pilot_power == 1.0
    for i, pick in enumerate(sel.picks):
        th, ph = index_to_angles(scan_position(lat05, int(pick)), lat05.aperture)
        assert (s.theta[i], s.phi[i]) == (th, ph)


def test_sample_values_mean(lat05):
    prof = variance_profile(random_scene(2, 3), lat05)
    sel = build_selection(lat05, 81)
    nv = 0.002
    acc = np.zeros(81)
    runs = 6000
    for k in range(runs):
        y = observe(sample_channel(prof, k), sel, noise_var=nv, seed=10**6 + k)
        acc += sample_values(y, sel, lat05, nv).s
    want = expected_sample_values(prof, sel, nv).s
    big = want > 0.01
    np.testing.assert_allclose(acc[big] / runs, want[big], rtol=0.06)


def test_denoise_floor(lat05):
    sel = build_selection(lat05, 2)
    s = sample_values(np.array([1.0, 0.1]), sel, lat05, noise_var=0.05, denoise_floor=True)
    np.testing.assert_allclose(s.s, [0.95, 0.0])


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet([0.1], [0.2], [-1.0])
    with pytest.raises(ValueError):
        SampleSet([0.1, 0.2], [0.2], [1.0])


def test_sample_csv_round_trip(tmp_path, lat05):
    prof = variance_profile(random_scene(2, 3), lat05)
    s = expected_sample_values(prof, build_selection(lat05, 30))
    save_samples(s, tmp_path / "s.csv")
    back = load_samples(tmp_path / "s.csv")
    for a in ("theta", "phi", "s"):
        assert np.array_equal(getattr(back, a), getattr(s, a))


def test_snr_round_trip_and_scaling(lat10):
    prof = variance_profile(random_scene(3, 3), lat10)
    sel = build_selection(lat10, 200)
    nv = noise_var_for_snr(prof, sel, 10.0)
    assert to_db(snr_of(prof, sel, 1.0, nv)) == pytest.approx(10.0, abs=1e-9)
    gain = to_db(snr_of(prof, sel, 2.0, nv)) - to_db(snr_of(prof, sel, 1.0, nv))
    assert gain == pytest.approx(3.0103, abs=1e-4)
    assert snr_of(prof, sel, 1.0, 0.0) == math.inf
    assert noise_var_for_snr(prof, sel, math.inf) == 0.0


def test_snr_uniform_profile(lat05):
    prof = VarianceProfile(lat05, np.full(len(lat05), 0.01))
    sel = build_selection(lat05, 10)
    assert snr_of(prof, sel, 2.0, 0.5) == pytest.approx(0.01 * 2.0 / 0.5)
