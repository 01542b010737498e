import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstsim import plant as pk
from sstsim.params import SpmParams, SystemParams

P = SpmParams()
S = SystemParams()


def test_dab_power_zero_phase():
    assert pk.dab_power(0.0, 750, 2150, P) == 0.0


def test_dab_power_rated_point_printed_law():
    # back-substitute the root of phi(1-phi) = P*2*pi*f*L/(n*v_lv*v_mv)
    k = P.n_turns * 750 * 2150 / (2 * math.pi * P.f_s1 * P.l_leak)
    phi = (1 - math.sqrt(1 - 4 * 55.6e3 / k)) / 2
    assert phi == pytest.approx(0.2717, abs=1e-4)
    assert pk.dab_power(0.2717, 750, 2150, P, "printed") == pytest.approx(55.6e3, rel=1e-3)


def test_dab_power_maximum_printed_law():
    assert pk.dab_power(0.5, 750, 2150, P, "printed") == pytest.approx(70.26e3, rel=1e-3)


def test_dab_power_range_enforced():
    with pytest.raises(ValueError):
        pk.dab_power(0.6, 750, 2150, P, "printed")
    with pytest.raises(ValueError):
        pk.dab_power(2.0, 750, 2150, P, "sps")


@pytest.mark.parametrize("law,top", [("printed", 0.5), ("sps", math.pi / 2)])
def test_dab_power_odd_and_peaks_at_range_end(law, top):
    phis = np.linspace(0, top, 2001)
    p = np.array([pk.dab_power(x, 750, 2150, P, law) for x in phis])
    assert np.argmax(p) == len(phis) - 1
    for x in phis[::97]:
        assert pk.dab_power(-x, 750, 2150, P, law) == -pk.dab_power(x, 750, 2150, P, law)


def test_sps_law_matches_printed_slope_at_origin():
    h = 1e-7
    a = pk.dab_power(h, 750, 2150, P, "sps") / h
    b = pk.dab_power(h, 750, 2150, P, "printed") / h
    assert a == pytest.approx(b, rel=1e-5)


def test_sps_rated_point():
    k = P.n_turns * 750 * 2150 / (2 * math.pi * P.f_s1 * P.l_leak)
    phi = (math.pi - math.sqrt(math.pi ** 2 - 4 * math.pi * 55.6e3 / k)) / 2
    assert pk.dab_power(phi, 750, 2150, P) == pytest.approx(55.6e3, rel=1e-12)
    assert phi == pytest.approx(0.2122, abs=1e-4)


def test_spm_derivative_examples():
    s = pk.SpmPlantState(2150.0, m_afe=1.0, p_dab=55.6e3)
    assert pk.spm_derivative(s, P, 55.6e3 / 2150) == pytest.approx(0.0, abs=1e-9)
    s = pk.SpmPlantState(2150.0, m_afe=1.0, p_dab=0.0)
    assert pk.spm_derivative(s, P, 55.6e3 / 2150) == pytest.approx(96.5e3, rel=1e-3)
    s = pk.SpmPlantState(2150.0)
    r = 2150 ** 2 / 700
    assert pk.spm_derivative(s, P, 0.0, r) == pytest.approx(-1.215e3, rel=1e-3)


def test_spm_derivative_low_voltage_guard():
    with pytest.raises(ValueError):
        pk.spm_derivative(pk.SpmPlantState(0.5), P, 0.0)
    assert pk.spm_energy_rate(10.0, 4.0, 0.5) == 6.0


def test_stack_voltage_examples():
    st0 = [pk.SpmPlantState(2150.0) for _ in range(6)]
    assert pk.phase_stack_voltage(st0) == 0.0
    full = [pk.SpmPlantState(2150.0, m_afe=1.0) for _ in range(6)]
    assert pk.phase_stack_voltage(full) == pytest.approx(12.9e3)
    alt = [pk.SpmPlantState(2150.0, m_afe=(-1) ** k) for k in range(6)]
    assert pk.phase_stack_voltage(alt) == 0.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 3000), st.floats(-1, 1)), min_size=6, max_size=6),
       st.randoms())
def test_stack_voltage_permutation_invariant(mods, rnd):
    states = [pk.SpmPlantState(v, m_afe=m) for v, m in mods]
    shuffled = states[:]
    rnd.shuffle(shuffled)
    assert pk.phase_stack_voltage(shuffled) == pytest.approx(pk.phase_stack_voltage(states),
                                                             abs=1e-6)


def test_diode_stack_clamps_and_blocks():
    states = [pk.SpmPlantState(2150.0) for _ in range(6)]
    assert pk.phase_stack_voltage(states, True, False, 5e3, 0.0) == 5e3
    assert pk.phase_stack_voltage(states, True, False, 14e3, 0.0) == pytest.approx(12.9e3)
    assert pk.phase_stack_voltage(states, True, False, -14e3, 0.0) == pytest.approx(-12.9e3)


def test_grid_derivative_examples():
    g = pk.GridPlantState(theta_grid=0.3)
    di, _ = pk.grid_derivative(g, g.v_phase, S)
    assert np.allclose(di, 0.0)
    g_open = pk.GridPlantState(theta_grid=0.3, breaker_closed=False)
    di, _ = pk.grid_derivative(g_open, np.zeros(3), S)
    assert np.all(di == 0.0)
    i_full = S.p_rated / S.v_lv_ref
    assert i_full == pytest.approx(1333.3, abs=0.05)
    assert i_full * 750 == pytest.approx(1e6)


def test_lvdc_kirchhoff():
    g = pk.GridPlantState(v_lv=740.0, i_lv=100.0)
    _, dv = pk.grid_derivative(g, np.zeros(3), S, p_dab_total=200e3, bleed_power=700.0)
    assert dv == pytest.approx((200e3 / 740 - 100 - 700 / 740) / S.c_lv)


@pytest.mark.parametrize("v,i", [(750.0, 0.0), (0.0, 50.0), (740.0, 10.0)])
def test_precharge_examples(v, i):
    assert pk.precharge_current(v, S) == pytest.approx(i)


# -- compiled kernel ---------------------------------------------------------

def _prm(breaker=1.0, afe=1.0):
    prm = np.zeros(pk.N_PRM)
    prm[pk.P_N] = P.n_turns
    prm[pk.P_FS] = P.f_s1
    prm[pk.P_LF] = S.l_filter
    prm[pk.P_CLV] = S.c_lv
    prm[pk.P_VAMP] = S.v_phase_peak
    prm[pk.P_OMEGA] = S.omega_0
    prm[pk.P_BREAKER] = breaker
    prm[pk.P_AFE] = afe
    prm[pk.P_PCLIM], prm[pk.P_PCV], prm[pk.P_PCR] = 50.0, 750.0, 1.0
    prm[pk.P_TAU] = 5e-3
    return prm


def test_kernel_matches_scalar_equations():
    rng = np.random.default_rng(1)
    nb = 6
    m = 3 * nb
    y = np.zeros(pk.state_size(nb))
    y[:m] = rng.uniform(2000, 2300, m)
    y[m:m + 3] = [30.0, -10.0, -20.0]
    y[m + 3] = 745.0
    y[m + 4] = 0.7
    phi = rng.uniform(-0.4, 0.4, m)
    m_afe = rng.uniform(-0.9, 0.9, m)
    c_mv = P.c_mv * rng.uniform(0.9, 1.1, m)
    l_leak = P.l_leak * rng.uniform(0.9, 1.1, m)
    prm = _prm()
    prm[pk.P_ILOAD] = 300.0
    mode = np.full(m, pk.MODE_PHASE, dtype=np.int64)
    dy = pk.derivative(y, phi, m_afe, mode, c_mv, l_leak, prm, nb)

    p_dab = np.zeros(m)
    for k in range(m):
        pm = SpmParams(c_mv=c_mv[k], l_leak=l_leak[k])
        p_dab[k] = pk.dab_power(phi[k], y[m + 3], y[k], pm)
        i_line = y[m + k // nb]
        s = pk.SpmPlantState(y[k], m_afe=m_afe[k], p_dab=p_dab[k])
        assert dy[k] == pytest.approx(pk.spm_derivative(s, pm, i_line), rel=1e-10, abs=1e-6)

    stack = [sum(m_afe[k] * y[k] for k in range(p * nb, (p + 1) * nb)) for p in range(3)]
    g = pk.GridPlantState(theta_grid=y[m + 4], i_phase=y[m:m + 3], v_lv=y[m + 3], i_lv=300.0)
    di, dv = pk.grid_derivative(g, stack, S, p_dab_total=p_dab.sum())
    assert np.allclose(dy[m:m + 3], di, rtol=1e-10)
    assert dy[m + 3] == pytest.approx(dv, rel=1e-10)
    assert dy[m + 4] == S.omega_0


def test_kernel_holds_voltage_when_powers_balance():
    nb = 6
    m = 3 * nb
    y = np.zeros(pk.state_size(nb))
    y[:m] = 2150.0
    y[m + 3] = 750.0
    y0 = y.copy()
    pk.rk4_integrate(y, 1000, 1e-6, np.zeros(m), np.zeros(m), np.zeros(m, dtype=np.int64),
                     np.full(m, P.c_mv), np.full(m, P.l_leak), _prm(breaker=0.0, afe=0.0), nb)
    assert np.array_equal(y[:m], y0[:m])
    assert y[m + 3] == y0[m + 3]


def test_kernel_breaker_open_keeps_currents_zero():
    nb = 6
    m = 3 * nb
    y = np.zeros(pk.state_size(nb))
    y[:m] = 100.0
    pk.rk4_integrate(y, 500, 1e-6, np.zeros(m), np.ones(m), np.zeros(m, dtype=np.int64),
                     np.full(m, P.c_mv), np.full(m, P.l_leak), _prm(breaker=0.0), nb)
    assert np.all(y[m:m + 3] == 0.0)


def _bookkeeping_residual(h, n, pc=0.0, v_lv=750.0):
    rng = np.random.default_rng(3)
    nb = 6
    m = 3 * nb
    y = np.zeros(pk.state_size(nb))
    y[:m] = rng.uniform(2100, 2200, m)
    y[m + 3] = v_lv
    phi = rng.uniform(0, 0.3, m)
    m_afe = np.full(m, 0.8)
    c_mv = np.full(m, P.c_mv)
    l_leak = np.full(m, P.l_leak)
    prm = _prm()
    prm[pk.P_GBLEED] = 1e-4
    prm[pk.P_ILOAD] = 500.0
    prm[pk.P_PC] = pc
    mode = np.full(m, pk.MODE_PHASE, dtype=np.int64)
    e0 = pk.stored_energy(y, c_mv, S.c_lv, S.l_filter, nb)
    pk.rk4_integrate(y, n, h, phi, m_afe, mode, c_mv, l_leak, prm, nb)
    e1 = pk.stored_energy(y, c_mv, S.c_lv, S.l_filter, nb)
    acc = y[m + 5:]
    ports = acc[pk.ACC_GRID] + acc[pk.ACC_PC] - acc[pk.ACC_LOAD] - acc[pk.ACC_BLEED]
    return e1 - e0, ports


def test_kernel_energy_bookkeeping():
    """Stored energy change equals the accumulated port energies."""
    # 0.5 ms keeps the capacitors well away from the zero-voltage clamp
    de, ports = _bookkeeping_residual(1e-6, 500)
    assert de == pytest.approx(ports, rel=1e-9)


def test_kernel_bookkeeping_with_precharge():
    de, ports = _bookkeeping_residual(1e-6, 500, pc=1.0, v_lv=700.0)
    assert de == pytest.approx(ports, rel=1e-9)
