import math
import time

import numpy as np
import pytest

from sstsim.freqdomain import (FreqResponse, delay_factor, gmvdc_eval, log_grid, margins,
                               pir_factor, plant_factor, sensor_factor, sweep, timescale_audit)
from sstsim.params import DabGains, SpmParams

P = SpmParams()
G = DabGains()


def test_unity_gain_near_643_hz():
    g = gmvdc_eval(643.0, P, G)
    assert abs(20 * math.log10(abs(g))) < 0.5


def test_plant_times_proportional_asymptote():
    coeff = P.n_turns * 750 * G.k_pmv / (2 * math.pi * P.f_s1 * P.l_leak * P.c_mv)
    assert coeff == pytest.approx(3998.8, rel=1e-3)
    assert coeff / (2 * math.pi) == pytest.approx(636.6, abs=0.2)
    s = 2j * math.pi * 1e3
    assert abs(plant_factor(s, P) * G.k_pmv) == pytest.approx(coeff / abs(s), rel=1e-12)


def test_low_frequency_gain_grows_without_bound():
    mags = np.abs(gmvdc_eval(np.array([1.0, 1e-1, 1e-2, 1e-3]), P, G))
    assert np.all(np.diff(mags) > 0)
    assert mags[-1] > 1e6


def test_integrator_with_delay_margin():
    k, T = 2 * math.pi * 500, 100e-6
    fn = lambda f: k / (2j * np.pi * np.asarray(f)) * np.exp(-2j * np.pi * np.asarray(f) * T)  # noqa: E731
    freqs = log_grid(1, 1e5)
    fc, pm, gm = margins(FreqResponse(freqs, fn(freqs), fn=fn))
    assert fc == pytest.approx(500.0, rel=1e-6)
    assert pm == pytest.approx(90 - k * T * 180 / math.pi, abs=1e-6)
    # phase reaches -180 deg where w*T = pi/2
    assert gm == pytest.approx(-20 * math.log10(k / (math.pi / 2 / T)), abs=1e-6)


def test_design_margins():
    t0 = time.perf_counter()
    r = sweep(P, G)
    assert time.perf_counter() - t0 < 1.0
    assert abs(r.crossover_hz - 643) <= 20
    assert abs(r.phase_margin_deg - 55) <= 5
    assert abs(r.gain_margin_db - 10) <= 1


def test_phase_crossover_close_to_delay_estimate():
    r = sweep(P, G)
    w180 = (math.pi / 2) / 127e-6
    assert w180 == pytest.approx(12.4e3, rel=0.01)
    assert r.annotations["phase_crossover_hz"] == pytest.approx(w180 / (2 * math.pi), rel=0.05)
    assert r.gain_margin_db == pytest.approx(9.8, abs=0.5)


@pytest.mark.parametrize("f", [1.0, 37.0, 120.0, 643.0, 2e3, 9.9e3])
def test_factorization(f):
    s = 2j * math.pi * f
    prod = plant_factor(s, P) * pir_factor(s, G) * sensor_factor(s, G) * delay_factor(s, G)
    assert abs(gmvdc_eval(f, P, G) / prod - 1) < 1e-12


def test_margins_stable_under_grid_refinement():
    a = sweep(P, G, log_grid(1, 10e3, 200))
    b = sweep(P, G, log_grid(1, 10e3, 1000))
    for x, y in ((a.crossover_hz, b.crossover_hz), (a.phase_margin_deg, b.phase_margin_deg),
                 (a.gain_margin_db, b.gain_margin_db)):
        assert abs(x / y - 1) < 1e-3


def test_loaded_operating_point_lowers_crossover():
    light = sweep(P, G)
    loaded = sweep(P, G, phi_op=0.2122)
    assert loaded.crossover_hz < light.crossover_hz


def test_resonator_off_changes_only_near_120_hz():
    on = gmvdc_eval(np.array([120.0, 2e3]), P, G, resonant=True)
    off = gmvdc_eval(np.array([120.0, 2e3]), P, G, resonant=False)
    assert abs(on[0]) > 5 * abs(off[0])
    # far from resonance the branch rolls off as omega_b/(T_r*omega), 2.5% at 2 kHz
    assert abs(on[1] / off[1] - 1) < 0.03


def test_no_crossing_gives_none():
    freqs = log_grid(1, 100, 50)
    r = FreqResponse(freqs, np.full(len(freqs), 0.5 + 0j))
    assert margins(r) == (None, None, None)
    with pytest.raises(ValueError):
        FreqResponse(freqs[::-1], np.ones(len(freqs)))


def test_timescale_audit():
    ok = timescale_audit(G, 30.0, 643.0)
    assert ok.passed
    assert ok.ratio == pytest.approx(21.4, abs=0.05)
    assert ok.ref_target_hz == pytest.approx(128.6, abs=0.05)
    bad = timescale_audit(G, 100.0, 643.0)
    assert not bad.passed
    assert bad.ratio == pytest.approx(6.4, abs=0.05)
    computed = timescale_audit(G, 30.0, p=P)
    assert computed.passed


def test_rows_and_phase_unwrap():
    r = sweep(P, G)
    rows = list(r.rows())
    assert len(rows) == len(r.freqs)
    assert np.all(np.abs(np.diff(r.phase_deg)) < 180)
