"""Per-module MVDC bus regulator for the DAB stage.

Each :class:`DabController` sees only its own module's MVDC voltage (through
the isolated sensor model) and the LVDC voltage at its own terminals. There
is deliberately no reference to any other module.
"""

from __future__ import annotations

import math
from collections import deque

from .discrete import biquad_response, resonator_coeffs
from .params import DabGains


def sensor_delay_samples(g: DabGains) -> int:
    return max(0, round(g.t_vs / g.t_s1))


class DabController:
    """Discrete MVDC voltage regulator, ticked once per DAB switching period.

    The phase shift is computed from ``err = v_mv_sensed - v_mv_ref``: a
    positive phase exports energy from the MVDC bus, so a bus sitting above
    its reference must raise the phase.
    """

    def __init__(self, gains: DabGains, phi_max: float, resonant_enabled: bool = True,
                 ready_tol: float = 0.01, ready_hold: float = 0.05):
        self.g = gains
        self.dt = gains.t_s1
        self.phi_max = phi_max
        self.resonant_enabled = resonant_enabled

        wt = gains.omega_ref * self.dt
        self._ref_a = (2.0 - wt) / (2.0 + wt)
        self._ref_b = wt / (2.0 + wt)
        # step-invariant: the sensor pole sits far above the sampling rate
        self._vs_a = math.exp(-gains.omega_vs * self.dt)
        self._ki_half = gains.k_pmv * self.dt / (2.0 * gains.t_imv)
        self._res = resonator_coeffs(gains.k_pmv / gains.t_rmv * gains.omega_bmv, gains.omega_bmv,
                                     2.0 * gains.omega_line, self.dt)
        self.n_delay = sensor_delay_samples(gains)
        self.ready_tol = ready_tol
        self._ready_ticks = max(1, round(ready_hold / self.dt))
        self.reset()

    def reset(self, v_lv: float = 0.0, v_mv: float = 0.0) -> None:
        """Clear all state; filters start at the equilibrium for the given inputs."""
        v_ref = self.g.k_v * v_lv
        self.ref_x = v_lv
        self.ref_y = v_ref
        self.sensor_filter = v_mv
        self.sensor_pipe = deque([v_mv] * self.n_delay)
        self.integ = 0.0
        self.err_prev = 0.0
        self.res_z1 = 0.0
        self.res_z2 = 0.0
        self.phi_out = 0.0
        self.last_phi = 0.0
        self.settled_ticks = 0
        self.v_ref = v_ref
        self.v_sensed = v_mv

    # -- signal path --------------------------------------------------------

    def mv_reference(self, v_lv_meas: float) -> float:
        """Low-pass of k_v*v_lv at omega_ref (bilinear)."""
        y = self._ref_a * self.ref_y + self._ref_b * self.g.k_v * (v_lv_meas + self.ref_x)
        self.ref_x = v_lv_meas
        self.ref_y = y
        return y

    def sense_mv(self, v_mv_true: float) -> float:
        """Sensor bandwidth followed by the transmission delay."""
        a = self._vs_a
        self.sensor_filter = a * self.sensor_filter + (1.0 - a) * v_mv_true
        if not self.n_delay:
            return self.sensor_filter
        out = self.sensor_pipe.popleft()
        self.sensor_pipe.append(self.sensor_filter)
        return out

    def pir_step(self, err: float) -> float:
        """Proportional + integral + double-line-frequency resonant compensation.

        Integrator and resonator hold their state whenever the output is
        saturated in the direction the error is pushing.
        """
        g = self.g
        integ = self.integ + self._ki_half * (err + self.err_prev)
        if self.resonant_enabled:
            b0, b1, b2, a1, a2 = self._res
            r = b0 * err + self.res_z1
            z1 = b1 * err - a1 * r + self.res_z2
            z2 = b2 * err - a2 * r
        else:
            r, z1, z2 = 0.0, self.res_z1, self.res_z2
        u = g.k_pmv * err + integ + r
        if u > self.phi_max:
            out = self.phi_max
            windup = err > 0.0
        elif u < -self.phi_max:
            out = -self.phi_max
            windup = err < 0.0
        else:
            out = u
            windup = False
        if not windup:
            self.integ = integ
            self.res_z1, self.res_z2 = z1, z2
        self.err_prev = err
        self.phi_out = out
        return out

    def step(self, v_mv_true: float, v_lv_meas: float) -> float:
        """One DAB tick. Returns the phase computed on the previous tick."""
        self.v_ref = self.mv_reference(v_lv_meas)
        self.v_sensed = self.sense_mv(v_mv_true)
        err = self.v_sensed - self.v_ref
        new = self.pir_step(err)
        out = self.last_phi
        self.last_phi = new
        if abs(err) < self.ready_tol * max(self.v_ref, 1.0):
            self.settled_ticks += 1
        else:
            self.settled_ticks = 0
        return out

    @property
    def ready(self) -> bool:
        """Local regulation has held within tolerance long enough to report ready."""
        return self.settled_ticks >= self._ready_ticks

    def response(self, f_hz: float) -> complex:
        """Frequency response of the discrete PIR law at ``f_hz`` (linear, unsaturated)."""
        w = 2 * math.pi * f_hz
        zi = complex(math.cos(w * self.dt), -math.sin(w * self.dt))
        h = self.g.k_pmv + self._ki_half * (1 + zi) / (1 - zi)
        if self.resonant_enabled:
            h += biquad_response(self._res, w, self.dt)
        return h
