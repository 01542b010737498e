"""Cycle-averaged electrical model of the ISOP converter.

Module ``k`` sits in phase ``k // n_blocks``. Line currents are positive from
the grid into the converter; DAB power is positive from the MVDC bus to the
shared LVDC bus.

The scalar functions below state the model one equation at a time. The
engine integrates the same equations through :func:`rk4_integrate`, a compiled
kernel that is cross-checked against them in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .params import SpmParams, SystemParams
from .scenario import LoadProfile  # noqa: F401  (re-exported)

TWO_PI_3 = 2.0 * math.pi / 3.0


@dataclass
class SpmPlantState:
    v_mv: float
    p_afe: float = 0.0
    p_dab: float = 0.0
    m_afe: float = 0.0
    phi: float = 0.0


@dataclass
class GridPlantState:
    theta_grid: float = 0.0
    i_phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_lv: float = 750.0
    i_lv: float = 0.0
    breaker_closed: bool = True
    precharge_active: bool = False
    v_amp: float = math.sqrt(2.0) * 13.2e3 / math.sqrt(3.0)

    @property
    def v_phase(self) -> np.ndarray:
        return source_voltages(self.theta_grid, self.v_amp)


def source_voltages(theta: float, v_amp: float) -> np.ndarray:
    return v_amp * np.cos(theta - TWO_PI_3 * np.arange(3))


def dab_shape(phi: float, law: str = "sps") -> float:
    """Normalized power shape; odd in ``phi``, largest at the range limit."""
    if law == "sps":
        return phi * (1.0 - abs(phi) / math.pi)
    return phi * (1.0 - abs(phi))


def dab_power(phi: float, v_lv: float, v_mv: float, p: SpmParams,
              law: str | None = None) -> float:
    """Averaged power through one DAB, MV to LV positive."""
    law = law or p.dab_law
    if abs(phi) > (math.pi / 2 if law == "sps" else 0.5) + 1e-12:
        raise ValueError(f"phase shift {phi} outside the {law} range")
    k = p.n_turns * v_lv * v_mv / (2.0 * math.pi * p.f_s1 * p.l_leak)
    return k * dab_shape(phi, law)


def spm_energy_rate(p_afe: float, p_dab: float, v_mv: float,
                    bleed_r: float | None = None) -> float:
    """d/dt of the stored MVDC energy 0.5*C*v^2."""
    bleed = v_mv * v_mv / bleed_r if bleed_r else 0.0
    return p_afe - p_dab - bleed


def spm_derivative(s: SpmPlantState, p: SpmParams, i_line: float,
                   bleed_r: float | None = None) -> float:
    """dv_mv/dt from the stored-energy balance.

    Below 1 V the voltage form is singular for a fixed DAB power; integrate
    :func:`spm_energy_rate` there instead.
    """
    if s.v_mv < 1.0:
        raise ValueError("v_mv below 1 V: use spm_energy_rate and integrate energy")
    p_afe = s.m_afe * s.v_mv * i_line
    return spm_energy_rate(p_afe, s.p_dab, s.v_mv, bleed_r) / (p.c_mv * s.v_mv)


def phase_stack_voltage(states, breaker_closed: bool = True, afe_enabled: bool = True,
                        v_source: float = 0.0, i_line: float = 0.0) -> float:
    """Terminal voltage of one series stack of modules.

    With gating disabled the stack is a chain of diode rectifiers: it clamps at
    the sum of its bus voltages once the source exceeds that sum (or while
    current is still flowing) and otherwise blocks, i.e. follows the source.
    """
    if afe_enabled:
        return float(sum(s.m_afe * s.v_mv for s in states))
    total = float(sum(s.v_mv for s in states))
    if not breaker_closed:
        return v_source
    if i_line > 0 or (i_line == 0 and v_source > total):
        return total
    if i_line < 0 or (i_line == 0 and v_source < -total):
        return -total
    return v_source


def grid_derivative(g: GridPlantState, stack_v, sys: SystemParams,
                    p_dab_total: float = 0.0, bleed_power: float = 0.0,
                    p_lv: float = 0.0) -> tuple[np.ndarray, float]:
    """(di_phase/dt, dv_lv/dt).

    The converter star point floats, so the common-mode part of the
    source-minus-stack voltage drives no current. ``bleed_power`` is only
    for loads hung directly on the LVDC node.
    """
    if g.breaker_closed:
        drop = g.v_phase - np.asarray(stack_v, dtype=float)
        di = (drop - drop.mean()) / sys.l_filter
    else:
        di = np.zeros(3)
    v = max(g.v_lv, 1.0)
    i_in = p_dab_total / v
    if g.precharge_active:
        i_in += precharge_current(g.v_lv, sys)
    dv = (i_in - g.i_lv - (p_lv + bleed_power) / v) / sys.c_lv
    return di, dv


def precharge_current(v_lv: float, sys: SystemParams) -> float:
    """Current-limited, unidirectional pre-charge source into the LVDC bus."""
    i = (sys.precharge_v_target - v_lv) / sys.precharge_r
    return min(sys.precharge_i_limit, max(0.0, i))


# --- compiled kernel -------------------------------------------------------

# scalar parameter slots
P_N, P_FS, P_LAW, P_LF, P_CLV, P_VAMP, P_OMEGA, P_BREAKER, P_AFE, P_PC, \
    P_PCLIM, P_PCV, P_PCR, P_ILOAD, P_PLOAD, P_GBLEED, P_TAU, P_DUTY, N_PRM = range(19)

# DAB operating modes
MODE_OFF, MODE_CHARGE, MODE_PHASE = 0, 1, 2

# accumulated energies appended after the physical states
ACC_GRID, ACC_PC, ACC_LOAD, ACC_BLEED = range(4)


def state_size(n_blocks: int) -> int:
    return 3 * n_blocks + 3 + 2 + 4


@njit(cache=True)
def _shape(phi, law):
    if law == 0:
        return phi * (1.0 - abs(phi) / math.pi)
    return phi * (1.0 - abs(phi))


@njit(cache=True)
def _deriv(y, dy, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb):
    m = 3 * nb
    ia = m
    ilv = m + 3
    ith = m + 4
    iacc = m + 5
    v_lv = y[ilv]
    v_lv_f = max(v_lv, 1.0)
    amp = prm[P_VAMP]
    th = y[ith]
    breaker = prm[P_BREAKER] > 0.5
    afe = prm[P_AFE] > 0.5
    g = prm[P_GBLEED]
    kd = prm[P_N] / (2.0 * math.pi * prm[P_FS])

    vs = np.empty(3)
    u = np.zeros(3)
    for p in range(3):
        vs[p] = amp * math.cos(th - p * 2.0 * math.pi / 3.0)

    i_dab_lv = 0.0  # current delivered into the LVDC node by all DABs
    p_bleed = 0.0
    for k in range(m):
        p = k // nb
        v = y[k]
        i_line = y[ia + p]
        if breaker and afe:
            i_afe = m_afe[k] * i_line
            u[p] += m_afe[k] * v
        elif breaker and cond[p] != 0:
            i_afe = cond[p] * i_line
            u[p] += cond[p] * v
        else:
            i_afe = 0.0
        dv = (i_afe - g * v) / c_mv[k]
        if mode[k] == MODE_PHASE:
            sh = _shape(phi[k], prm[P_LAW])
            dv -= kd * v_lv * sh / (l_leak[k] * c_mv[k])
            i_dab_lv += kd * v * sh / l_leak[k]
        elif mode[k] == MODE_CHARGE:
            v_t = 2.0 * prm[P_DUTY] * prm[P_N] * v_lv
            dvc = max(v_t - v, 0.0) / prm[P_TAU]
            dv += dvc
            i_dab_lv -= c_mv[k] * v * dvc / v_lv_f
        dy[k] = dv
        p_bleed += g * v * v

    if breaker and afe:
        vn = 0.0
        for p in range(3):
            vn += vs[p] - u[p]
        vn /= 3.0
        for p in range(3):
            dy[ia + p] = (vs[p] - u[p] - vn) / prm[P_LF]
    elif breaker:
        # diode stacks, referred to the source neutral
        for p in range(3):
            if cond[p] != 0:
                dy[ia + p] = (vs[p] - u[p]) / prm[P_LF]
            else:
                dy[ia + p] = 0.0
    else:
        for p in range(3):
            dy[ia + p] = 0.0

    i_pc = 0.0
    if prm[P_PC] > 0.5:
        i_pc = min(prm[P_PCLIM], max(0.0, (prm[P_PCV] - v_lv) / prm[P_PCR]))
    i_load = prm[P_ILOAD] if v_lv > 0.0 else 0.0
    p_load = prm[P_PLOAD] if v_lv > 0.0 else 0.0
    dy[ilv] = (i_dab_lv + i_pc - i_load - p_load / v_lv_f) / prm[P_CLV]
    dy[ith] = prm[P_OMEGA]

    p_grid = 0.0
    for p in range(3):
        p_grid += vs[p] * y[ia + p]
    dy[iacc + ACC_GRID] = p_grid
    dy[iacc + ACC_PC] = v_lv * i_pc
    dy[iacc + ACC_LOAD] = v_lv * i_load + (p_load * v_lv / v_lv_f)
    dy[iacc + ACC_BLEED] = p_bleed


@njit(cache=True)
def _diode_conduction(y, cond, prm, nb):
    m = 3 * nb
    amp = prm[P_VAMP]
    th = y[m + 4]
    for p in range(3):
        i = y[m + p]
        s = 0.0
        for k in range(p * nb, (p + 1) * nb):
            s += y[k]
        vs = amp * math.cos(th - p * 2.0 * math.pi / 3.0)
        if i > 0.0:
            cond[p] = 1
        elif i < 0.0:
            cond[p] = -1
        elif vs > s:
            cond[p] = 1
        elif vs < -s:
            cond[p] = -1
        else:
            cond[p] = 0


@njit(cache=True)
def rk4_integrate(y, n_steps, h, phi, m_afe, mode, c_mv, l_leak, prm, nb):
    """Advance ``y`` in place by ``n_steps`` RK4 steps with inputs held."""
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    yt = np.empty(n)
    cond = np.zeros(3, dtype=np.int64)
    diode = prm[P_BREAKER] > 0.5 and prm[P_AFE] < 0.5
    m = 3 * nb
    for _ in range(n_steps):
        if diode:
            _diode_conduction(y, cond, prm, nb)
        _deriv(y, k1, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb)
        for j in range(n):
            yt[j] = y[j] + 0.5 * h * k1[j]
        _deriv(yt, k2, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb)
        for j in range(n):
            yt[j] = y[j] + 0.5 * h * k2[j]
        _deriv(yt, k3, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb)
        for j in range(n):
            yt[j] = y[j] + h * k3[j]
        _deriv(yt, k4, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb)
        for j in range(n):
            y[j] += h * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0
        if diode:
            # a diode cannot carry reverse current
            for p in range(3):
                if cond[p] > 0 and y[m + p] < 0.0:
                    y[m + p] = 0.0
                elif cond[p] < 0 and y[m + p] > 0.0:
                    y[m + p] = 0.0
        for k in range(m):
            if y[k] < 0.0:
                y[k] = 0.0


def derivative(y, phi, m_afe, mode, c_mv, l_leak, prm, nb) -> np.ndarray:
    """Kernel derivative at ``y`` (for tests and diagnostics)."""
    dy = np.empty_like(y)
    cond = np.zeros(3, dtype=np.int64)
    if prm[P_BREAKER] > 0.5 and prm[P_AFE] < 0.5:
        _diode_conduction(y, cond, prm, nb)
    _deriv(y, dy, phi, m_afe, mode, cond, c_mv, l_leak, prm, nb)
    return dy


def stored_energy(y, c_mv, c_lv: float, l_filter: float, nb: int) -> float:
    m = 3 * nb
    v = y[:m]
    return float(0.5 * np.dot(c_mv, v * v) + 0.5 * c_lv * y[m + 3] ** 2
                 + 0.5 * l_filter * np.dot(y[m:m + 3], y[m:m + 3]))
