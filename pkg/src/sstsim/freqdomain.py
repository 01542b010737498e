"""Open-loop response of the MVDC voltage loop with exact transport delays."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import DabGains, SpmParams


def plant_factor(s, p: SpmParams, v_lv: float | None = None, phi_op: float | None = None):
    """Phase-to-MVDC-voltage integrator with the loop sign folded in.

    ``phi_op`` applies the loaded-operating-point slope of the power law; the
    default evaluates the light-load linearization.
    """
    v_lv = p.v_lv_nom if v_lv is None else v_lv
    k = p.n_turns * v_lv / (2 * math.pi * p.f_s1 * p.l_leak * p.c_mv)
    if phi_op is not None:
        scale = math.pi if p.dab_law == "sps" else 1.0
        k *= 1.0 - 2.0 * abs(phi_op) / scale
    return k / s


def pir_factor(s, g: DabGains, resonant: bool = True):
    out = g.k_pmv * (1.0 + 1.0 / (s * g.t_imv))
    if resonant:
        w2 = 2.0 * g.omega_line
        out = out + g.k_pmv / g.t_rmv * g.omega_bmv * s / (s * s + g.omega_bmv * s + w2 * w2)
    return out


def sensor_factor(s, g: DabGains):
    return g.omega_vs / (s + g.omega_vs) * np.exp(-s * g.t_vs)


def delay_factor(s, g: DabGains):
    """One-sample computation delay."""
    return np.exp(-s * g.t_s1)


def gmvdc_eval(f_hz, p: SpmParams, g: DabGains, resonant: bool = True,
               phi_op: float | None = None):
    """Compensated open-loop gain at ``f_hz`` (scalar or array)."""
    s = 2j * np.pi * np.asarray(f_hz, dtype=float)
    return (plant_factor(s, p, phi_op=phi_op) * pir_factor(s, g, resonant)
            * sensor_factor(s, g) * delay_factor(s, g))


@dataclass
class FreqResponse:
    freqs: np.ndarray
    values: np.ndarray
    crossover_hz: float | None = None
    phase_margin_deg: float | None = None
    gain_margin_db: float | None = None
    annotations: dict = field(default_factory=dict)
    fn: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def mag_db(self) -> np.ndarray:
        return 20 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.values)))

    def rows(self):
        return zip(self.freqs, self.mag_db, self.phase_deg)


def log_grid(f_lo: float = 1.0, f_hi: float = 10e3, per_decade: int = 200) -> np.ndarray:
    n = int(round(math.log10(f_hi / f_lo) * per_decade)) + 1
    return np.logspace(math.log10(f_lo), math.log10(f_hi), n)


def sweep(p: SpmParams, g: DabGains, freqs=None, resonant: bool = True,
          phi_op: float | None = None) -> FreqResponse:
    freqs = log_grid() if freqs is None else np.asarray(freqs, float)
    fn = lambda f: gmvdc_eval(f, p, g, resonant, phi_op)  # noqa: E731
    resp = FreqResponse(freqs, fn(freqs), fn=fn)
    cross, pm, gm = margins(resp)
    resp.crossover_hz, resp.phase_margin_deg, resp.gain_margin_db = cross, pm, gm
    return resp


def _bisect(h, lo: float, hi: float, iters: int = 60) -> float:
    """Root of h on [lo, hi] in log-frequency; h(lo) and h(hi) differ in sign."""
    hlo = h(lo)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        hm = h(mid)
        if (hm > 0) == (hlo > 0):
            lo, hlo = mid, hm
        else:
            hi = mid
    return math.sqrt(lo * hi)


def margins(resp: FreqResponse) -> tuple[float | None, float | None, float | None]:
    """(crossover Hz, phase margin deg, gain margin dB); None where no crossing exists.

    The gain margin is read at the first -180 deg crossing above the gain
    crossover, since the double integrator puts the low-frequency phase near
    -180 deg as well.
    """
    f = resp.freqs
    mag = np.abs(resp.values)
    phase = resp.phase_deg
    # offset the unwrapped phase so the high-frequency end is on the principal branch
    fn = resp.fn or (lambda x: np.interp(x, f, mag) * np.exp(1j * np.radians(
        np.interp(x, f, phase))))

    def unwrapped(x: float, near: float) -> float:
        a = math.degrees(np.angle(fn(x)))
        return a + 360.0 * round((near - a) / 360.0)

    below = np.nonzero((mag[:-1] >= 1.0) & (mag[1:] < 1.0))[0]
    if len(below) == 0:
        return None, None, None
    i = below[0]
    fc = _bisect(lambda x: abs(fn(x)) - 1.0, f[i], f[i + 1])
    pm = 180.0 + unwrapped(fc, phase[i])

    gm = None
    cross = np.nonzero((f[:-1] >= fc) & (phase[:-1] > -180.0) & (phase[1:] <= -180.0))[0]
    if len(cross):
        j = cross[0]
        ref = phase[j]
        f180 = _bisect(lambda x: unwrapped(x, ref) + 180.0, f[j], f[j + 1])
        gm = -20.0 * math.log10(abs(fn(f180)))
        resp.annotations["phase_crossover_hz"] = f180
    resp.annotations["crossover_hz"] = fc
    return fc, pm, gm


@dataclass
class TimescaleReport:
    mvdc_crossover_hz: float
    lvdc_bw_hz: float
    ratio: float
    ref_filter_hz: float
    ref_target_hz: float
    violations: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations


def timescale_audit(g: DabGains, lvdc_bw: float, mvdc_crossover_hz: float | None = None,
                    p: SpmParams | None = None, ref_tol: float = 0.05) -> TimescaleReport:
    """Check the MVDC loop is at least ten times faster than the LVDC loop and
    that the reference filter sits near a fifth of the MVDC crossover."""
    if mvdc_crossover_hz is None:
        mvdc_crossover_hz = sweep(p or SpmParams(), g).crossover_hz
    ratio = mvdc_crossover_hz / lvdc_bw
    f_ref = g.omega_ref / (2 * math.pi)
    target = mvdc_crossover_hz / 5.0
    bad = []
    if ratio < 10.0:
        bad.append(f"MVDC crossover {mvdc_crossover_hz:.1f} Hz is only {ratio:.1f}x "
                   f"the LVDC bandwidth {lvdc_bw:.1f} Hz (need >= 10x)")
    if abs(f_ref / target - 1.0) > ref_tol:
        bad.append(f"reference filter {f_ref:.1f} Hz is not within {ref_tol:.0%} of "
                   f"crossover/5 = {target:.1f} Hz")
    return TimescaleReport(mvdc_crossover_hz, lvdc_bw, ratio, f_ref, target, bad)
