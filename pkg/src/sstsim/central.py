"""Central LVDC-side controller.

Inputs are limited to the LVDC voltage and current, the grid voltages and the
grid currents. The MVDC buses are never measured here; the modulation scales
commands by an MVDC estimate that reproduces the DAB reference filter acting on
``k_v * v_lv``, which is where the decentralized loops hold every bus.
"""

from __future__ import annotations

import math
import queue
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .discrete import Biquad, resonator_coeffs
from .params import SystemParams

SQRT3 = math.sqrt(3.0)


def clarke(v_abc) -> tuple[float, float]:
    a, b, c = v_abc
    return (2.0 * a - b - c) / 3.0, (b - c) / SQRT3


def inverse_clarke(alpha: float, beta: float) -> np.ndarray:
    return np.array([alpha,
                     -0.5 * alpha + 0.5 * SQRT3 * beta,
                     -0.5 * alpha - 0.5 * SQRT3 * beta])


class Pll:
    """Synchronous-reference-frame PLL with a normalized q-axis PI."""

    def __init__(self, omega_0: float, bandwidth_hz: float, dt: float, v_nominal: float,
                 zeta: float = 1 / math.sqrt(2.0)):
        # -3 dB bandwidth of the type-2 loop is w_n*sqrt(1 + 2z^2 + sqrt((1 + 2z^2)^2 + 1))
        a = 1 + 2 * zeta * zeta
        omega_n = 2 * math.pi * bandwidth_hz / math.sqrt(a + math.sqrt(a * a + 1))
        self.kp = 2 * zeta * omega_n
        self.ki = omega_n * omega_n
        self.omega_0 = omega_0
        self.dt = dt
        self.v_min = 0.1 * v_nominal
        self.theta_hat = 0.0
        self.omega_hat = omega_0
        self.integ = 0.0
        self.v_amp = 0.0

    def lock_to(self, theta: float) -> None:
        self.theta_hat = theta % (2 * math.pi)
        self.omega_hat = self.omega_0
        self.integ = 0.0

    def step(self, v_abc) -> float:
        alpha, beta = clarke(v_abc)
        self.v_amp = math.hypot(alpha, beta)
        if self.v_amp > self.v_min:
            s, c = math.sin(self.theta_hat), math.cos(self.theta_hat)
            err = (-alpha * s + beta * c) / self.v_amp
            self.integ += self.ki * err * self.dt
        else:
            err = 0.0
        self.omega_hat = self.omega_0 + self.kp * err + self.integ
        self.theta_hat = (self.theta_hat + self.omega_hat * self.dt) % (2 * math.pi)
        return self.theta_hat


class LvdcRegulator:
    """PI on the LVDC voltage plus load-power feedforward; output is the grid power reference.

    The plant seen by this loop is the LVDC capacitor plus every MVDC capacitor
    reflected through the DC-transformer ratio, which is what sets the gains.
    """

    def __init__(self, sys: SystemParams, c_mv_nominal: float, k_v: float):
        c_eff = sys.c_lv + sys.n_modules * c_mv_nominal * k_v * k_v
        omega_c = 2 * math.pi * sys.lvdc_bw
        self.kp = omega_c * c_eff * sys.v_lv_ref
        self.ki = self.kp * omega_c / 4.0
        self.v_ref = sys.v_lv_ref
        self.limit = sys.s_rated
        self.dt = 1.0 / sys.f_c
        self.integ = 0.0

    def step(self, v_lv_meas: float, i_lv_meas: float) -> float:
        err = self.v_ref - v_lv_meas
        ff = v_lv_meas * i_lv_meas
        integ = self.integ + self.ki * err * self.dt
        p = self.kp * err + integ + ff
        if p > self.limit:
            p = self.limit
            if err < 0:
                self.integ = integ
        elif p < -self.limit:
            p = -self.limit
            if err > 0:
                self.integ = integ
        else:
            self.integ = integ
        return p


def current_refs(theta_hat: float, p_ref: float, q_ref: float, v_amp: float,
                 v_nominal: float | None = None) -> tuple[float, float]:
    """Stationary-frame current references delivering ``p_ref``/``q_ref`` from the grid.

    Zero below 10% of ``v_nominal`` (undervoltage lockout).
    """
    if v_nominal is not None and v_amp <= 0.1 * v_nominal:
        return 0.0, 0.0
    if v_amp <= 0.0:
        return 0.0, 0.0
    k = 2.0 / (3.0 * v_amp)
    c, s = math.cos(theta_hat), math.sin(theta_hat)
    return k * (p_ref * c + q_ref * s), k * (p_ref * s - q_ref * c)


class PrCurrentController:
    """Per-axis proportional + resonant current control with grid-voltage feedforward.

    The proportional gain is calibrated so the sampled closed current loop
    through the filter inductance is 3 dB down at the target bandwidth; the
    resonant term removes the steady-state error at the line frequency.
    """

    def __init__(self, l_filter: float, bandwidth_hz: float, omega_0: float, dt: float,
                 resonant_ratio: float = 0.1):
        self.dt = dt
        self.omega_0 = omega_0
        self.resonant_ratio = resonant_ratio
        self.bandwidth_hz = bandwidth_hz
        # the continuous rule kp = w_bw*L overshoots once sampling and the
        # resonator are included, so bisect kp on |T(f_bw)| = 1/sqrt(2)
        lo, hi = 0.2, 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            self._set_gains(mid * 2 * math.pi * bandwidth_hz * l_filter)
            if abs(self.loop_response(bandwidth_hz, l_filter)) > 1 / math.sqrt(2):
                hi = mid
            else:
                lo = mid
        self._set_gains(0.5 * (lo + hi) * 2 * math.pi * bandwidth_hz * l_filter)

    def _set_gains(self, kp: float) -> None:
        self.kp = kp
        self.kr = kp * 2 * math.pi * self.bandwidth_hz * self.resonant_ratio
        self._coeffs = resonator_coeffs(self.kr, 0.0, self.omega_0, self.dt)
        self.res = (Biquad(self._coeffs), Biquad(self._coeffs))

    def reset(self) -> None:
        for r in self.res:
            r.reset()

    def step(self, i_ref_ab, i_meas_ab, v_ff_ab=(0.0, 0.0)) -> tuple[float, float]:
        out = []
        for axis in range(2):
            e = i_ref_ab[axis] - i_meas_ab[axis]
            out.append(v_ff_ab[axis] - self.kp * e - self.res[axis].step(e))
        return out[0], out[1]

    def loop_response(self, f_hz: float, l_filter: float) -> complex:
        """Closed current loop i/i_ref at ``f_hz`` for the sampled controller and L plant.

        The plant is the exact zero-order-hold discretization of 1/(sL) and
        the feedforward is assumed ideal.
        """
        w = 2 * math.pi * f_hz
        zi = complex(math.cos(w * self.dt), -math.sin(w * self.dt))
        b0, b1, b2, a1, a2 = self._coeffs
        c = self.kp + (b0 + b1 * zi + b2 * zi * zi) / (1 + a1 * zi + a2 * zi * zi)
        plant = (self.dt / l_filter) * zi / (1 - zi)
        loop = c * plant
        return loop / (1 + loop)


GATE_ZERO, GATE_POS, GATE_NEG = 0, 1, 2


def multilevel_modulate(v_cmd: float, v_mv_nominal: float, n_modules: int,
                        rotation: int = 0, carrier: float = 0.5):
    """Nearest-level decomposition of one phase command across ``n_modules`` bridges.

    ``k`` modules are fully on, the next one (in the rotated order) carries the
    fractional remainder as a duty, the rest are off. Returns
    ``(m_cmd, gate_words, saturated)``; gate words are 0 (zero), 1 (+v_mv) or
    2 (-v_mv), the fractional module emitting its PWM state against ``carrier``.
    """
    x = abs(v_cmd) / v_mv_nominal if v_mv_nominal > 0 else 0.0
    saturated = x > n_modules
    x = min(x, float(n_modules))
    sign = 1.0 if v_cmd >= 0 else -1.0
    on_word = GATE_POS if sign > 0 else GATE_NEG
    k = int(math.floor(x))
    frac = x - k
    m = np.zeros(n_modules)
    words = np.zeros(n_modules, dtype=np.int64)
    for j in range(n_modules):
        idx = (rotation + j) % n_modules
        if j < k:
            m[idx] = sign
            words[idx] = on_word
        elif j == k:
            m[idx] = sign * frac
            words[idx] = on_word if frac > carrier else GATE_ZERO
    return m, words, saturated


class StartupPhase(IntEnum):
    IDLE = 0
    PRECHARGE = 1
    DUTY_RAMP = 2
    MVDC_REGULATE = 3
    BREAKER_CLOSE = 4
    NOMINAL = 5


@dataclass
class Enables:
    precharge: bool = False
    dab_duty: float = 0.0  # LV-side bridge duty during the ramp, 0..0.5
    dab_charge: bool = False
    dab_regulate: bool = False
    breaker_closed: bool = False
    afe_enabled: bool = False
    lvdc_regulate: bool = False


class ReadyChannel:
    """Low-bandwidth monitoring link carrying per-module 'ready' tokens with latency."""

    def __init__(self, latency: float):
        if latency < 0:
            raise ValueError("latency must be ≥ 0")
        self.latency = latency
        self._q: queue.Queue = queue.Queue()

    def send(self, t: float, module: int) -> None:
        self._q.put((t + self.latency, module))

    def poll(self, t: float) -> set[int]:
        """Modules whose tokens have arrived by ``t``; later ones stay queued."""
        arrived, pending = set(), []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                break
            (arrived.add(item[1]) if item[0] <= t + 1e-12 else pending.append(item))
        for item in pending:
            self._q.put(item)
        return arrived


class StartupSequencer:
    """Soft start-up state machine: pre-charge, duty ramp, MVDC regulation, breaker, nominal."""

    def __init__(self, sys: SystemParams, start_nominal: bool = False):
        self.sys = sys
        self.n_modules = sys.n_modules
        self.phase = StartupPhase.NOMINAL if start_nominal else StartupPhase.IDLE
        self.entry_time = 0.0
        self.ready_modules: set[int] = set()
        self.aborted = False
        self.abort_reason = ""
        self.history: list[tuple[float, StartupPhase]] = [(0.0, self.phase)]

    def _enter(self, phase: StartupPhase, t: float) -> None:
        self.phase = phase
        self.entry_time = t
        self.history.append((t, phase))

    def _abort(self, t: float, reason: str) -> None:
        self.aborted = True
        self.abort_reason = reason
        self._enter(StartupPhase.IDLE, t)

    def step(self, t: float, v_lv: float, ready: set[int] = frozenset()) -> Enables:
        s = self.sys
        ph = self.phase
        elapsed = t - self.entry_time
        self.ready_modules |= set(ready)
        if ph is StartupPhase.IDLE and not self.aborted:
            self._enter(StartupPhase.PRECHARGE, t)
        elif ph is StartupPhase.PRECHARGE:
            if v_lv >= 0.95 * s.v_lv_ref:
                self._enter(StartupPhase.DUTY_RAMP, t)
        elif ph is StartupPhase.DUTY_RAMP:
            if elapsed >= s.duty_ramp_time + s.ramp_settle_time - 1e-12:
                self._enter(StartupPhase.MVDC_REGULATE, t)
        elif ph is StartupPhase.MVDC_REGULATE:
            if len(self.ready_modules) >= self.n_modules:
                self._enter(StartupPhase.BREAKER_CLOSE, t)
        elif ph is StartupPhase.BREAKER_CLOSE:
            if elapsed >= s.breaker_to_nominal - 1e-12:
                self._enter(StartupPhase.NOMINAL, t)

        ph = self.phase
        if ph not in (StartupPhase.IDLE, StartupPhase.NOMINAL) and \
                t - self.entry_time > s.guard_timeout:
            self._abort(t, f"guard timeout in {ph.name}")
            ph = self.phase
        return self.enables(t)

    def enables(self, t: float) -> Enables:
        ph = self.phase
        s = self.sys
        if ph is StartupPhase.IDLE:
            return Enables()
        if ph is StartupPhase.PRECHARGE:
            return Enables(precharge=True)
        if ph is StartupPhase.DUTY_RAMP:
            d = 0.5 * min(1.0, (t - self.entry_time) / s.duty_ramp_time)
            return Enables(precharge=True, dab_duty=d, dab_charge=True)
        if ph is StartupPhase.MVDC_REGULATE:
            return Enables(precharge=True, dab_regulate=True)
        if ph is StartupPhase.BREAKER_CLOSE:
            return Enables(dab_regulate=True, breaker_closed=True)
        return Enables(dab_regulate=True, breaker_closed=True, afe_enabled=True,
                       lvdc_regulate=True)


@dataclass
class CentralMeasurements:
    v_lv: float
    i_lv: float
    v_abc: np.ndarray
    i_abc: np.ndarray


@dataclass
class CentralOutput:
    m_cmd: np.ndarray  # per-module averaged duty, phase-major
    gate_words: np.ndarray
    enables: Enables
    p_g_ref: float = 0.0
    v_cmd_abc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    saturated: bool = False


class CentralController:
    def __init__(self, sys: SystemParams, c_mv_nominal: float, k_v: float, f_s2: float,
                 q_ref: float = 0.0, start_nominal: bool = False,
                 omega_ref: float = 2 * math.pi * 130):
        self.sys = sys
        self.k_v = k_v
        wt = omega_ref / sys.f_c
        self._est_a = (2.0 - wt) / (2.0 + wt)
        self._est_b = wt / (2.0 + wt)
        self._est_x = sys.v_lv_ref if start_nominal else 0.0
        self.v_mv_est = k_v * self._est_x
        self.dt = 1.0 / sys.f_c
        self.q_ref = q_ref
        self.pll = Pll(sys.omega_0, sys.pll_bw, self.dt, sys.v_phase_peak)
        self.lvdc = LvdcRegulator(sys, c_mv_nominal, k_v)
        self.cc = PrCurrentController(sys.l_filter, sys.cc_bw, sys.omega_0, self.dt)
        self.sequencer = StartupSequencer(sys, start_nominal)
        self.ticks_per_carrier = max(1, round(sys.f_c / f_s2))
        self.tick_count = 0
        self.rotation = 0
        self.p_g_ref = 0.0

    def tick(self, t: float, meas: CentralMeasurements, ready: set[int] = frozenset()
             ) -> CentralOutput:
        sys = self.sys
        nb = sys.n_blocks
        theta = self.pll.step(meas.v_abc)
        en = self.sequencer.step(t, meas.v_lv, ready)
        self.v_mv_est = (self._est_a * self.v_mv_est
                         + self._est_b * self.k_v * (meas.v_lv + self._est_x))
        self._est_x = meas.v_lv
        if self.tick_count % self.ticks_per_carrier == 0:
            self.rotation = (self.tick_count // self.ticks_per_carrier) % nb
        self.tick_count += 1

        m_cmd = np.zeros(sys.n_modules)
        words = np.zeros(sys.n_modules, dtype=np.int64)
        if not (en.afe_enabled and en.lvdc_regulate):
            self.p_g_ref = 0.0
            self.cc.reset()
            return CentralOutput(m_cmd, words, en)

        self.p_g_ref = self.lvdc.step(meas.v_lv, meas.i_lv)
        i_ref = current_refs(theta, self.p_g_ref, self.q_ref, self.pll.v_amp,
                             sys.v_phase_peak)
        i_ab = clarke(meas.i_abc)
        # feedforward centred on the hold interval
        va, vb = clarke(meas.v_abc)
        rot = self.pll.omega_hat * self.dt / 2.0
        c, s = math.cos(rot), math.sin(rot)
        v_ff = (va * c - vb * s, va * s + vb * c)
        u_a, u_b = self.cc.step(i_ref, i_ab, v_ff)
        v_cmd = inverse_clarke(u_a, u_b)

        v_mv_est = max(self.v_mv_est, 1.0)
        saturated = False
        for p in range(3):
            m, w, sat = multilevel_modulate(v_cmd[p], v_mv_est, nb, self.rotation)
            saturated |= sat
            words[p * nb:(p + 1) * nb] = w
            # carrier-cycle average of the rotating pattern: an equal share per module
            m_cmd[p * nb:(p + 1) * nb] = m.sum() / nb
        return CentralOutput(m_cmd, words, en, self.p_g_ref, v_cmd, saturated)
