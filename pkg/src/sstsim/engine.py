"""Fixed-step multirate simulation of the full converter.

The plant is integrated with RK4 at ``dt_plant``. The DAB controllers tick
every ``1/f_s1``, the central controller every ``1/f_c`` and a trace frame is
taken every ``decimate`` x 10 us. Commands are held between ticks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plant as pk
from .central import CentralController, CentralMeasurements, ReadyChannel, StartupPhase
from .dab_control import DabController
from .params import (DabGains, SpmParams, SystemParams, ToleranceSpec, apply_tolerances,
                     default_config)
from .scenario import ScenarioSpec

FRAME_BASE = 1e-5  # s, trace clock before decimation
RIPPLE_WINDOW = 0.25  # s, trailing window for the 120 Hz metric
BALANCE_WINDOW = 0.1  # s, trailing steady-state window


class SimulationError(RuntimeError):
    """Numerical blow-up; carries the index of the offending frame."""

    def __init__(self, msg: str, frame_index: int):
        super().__init__(msg)
        self.frame_index = frame_index


@dataclass
class SimConfig:
    system: SystemParams
    spm: SpmParams
    gains: DabGains
    tolerances: ToleranceSpec

    @classmethod
    def default(cls) -> "SimConfig":
        s, p, g, t, _ = default_config()
        return cls(s, p, g, t)


def trace_columns(n_modules: int) -> list[str]:
    cols = ["t", "v_lv", "i_lv", "va", "vb", "vc", "ia", "ib", "ic"]
    for prefix in ("vmv", "phi", "pdab", "pafe"):
        cols += [f"{prefix}_{k:02d}" for k in range(n_modules)]
    return cols + ["phase", "pgref"]


@dataclass
class Trace:
    """Decimated signal log; ``data`` has one row per frame in ``columns`` order."""

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    gate_rows: list[list[int]] = field(default_factory=list)

    @property
    def data(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(self.columns)))
        return np.asarray(self.rows, dtype=float)

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def group(self, prefix: str) -> np.ndarray:
        idx = [i for i, c in enumerate(self.columns) if c.startswith(prefix + "_")]
        return self.data[:, idx]

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            phase_col = self.columns.index("phase")
            for r in self.rows:
                w.writerow([int(v) if i == phase_col else repr(float(v))
                            for i, v in enumerate(r)])

    def write_gates(self, path: Path) -> None:
        n = len(self.gate_rows[0]) - 1 if self.gate_rows else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"gate_{k:02d}" for k in range(n)])
            for r in self.gate_rows:
                w.writerow([repr(float(r[0]))] + [int(v) for v in r[1:]])


def read_trace(path: str | Path) -> Trace:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        cols = next(rd)
        rows = [[float(v) for v in r] for r in rd]
    return Trace(cols, rows)


# -- metrics -----------------------------------------------------------------

def ripple_metric(t: np.ndarray, x: np.ndarray, f_target: float, window: float) -> float:
    """Peak-to-peak amplitude of the ``f_target`` component over the trailing window.

    The window is trimmed to a whole number of periods so a pure tone lands
    exactly on the DFT bin.
    """
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    if len(t) < 2:
        raise ValueError("trace too short")
    dt = t[1] - t[0]
    if window < 5.0 / f_target - 1e-12:
        raise ValueError("window must span at least 5 periods")
    if window > t[-1] - t[0] + dt * (1 + 1e-9):
        raise ValueError(f"window {window} s exceeds the trace length")
    periods = math.floor(window * f_target + 1e-9)
    n = int(round(periods / f_target / dt))
    seg_t = t[-n:]
    seg = x[-n:]
    ph = np.exp(-2j * np.pi * f_target * seg_t)
    amp = 2.0 * abs(np.dot(seg - seg.mean(), ph)) / n
    return 2.0 * amp


def balance_metric(trace: Trace, n_blocks: int, t_from: float = -math.inf,
                   t_to: float = math.inf) -> list[dict]:
    """Per phase group: largest spread (max - min over its modules) of v_mv and p_dab."""
    t = trace.col("t")
    sel = (t >= t_from) & (t <= t_to)
    vmv = trace.group("vmv")[sel]
    pd = trace.group("pdab")[sel]
    out = []
    for p in range(3):
        s = slice(p * n_blocks, (p + 1) * n_blocks)
        if not sel.any():
            out.append({"max_vmv_spread": 0.0, "max_power_spread": 0.0})
            continue
        out.append({
            "max_vmv_spread": float(np.max(vmv[:, s].max(1) - vmv[:, s].min(1))),
            "max_power_spread": float(np.max(pd[:, s].max(1) - pd[:, s].min(1))),
        })
    return out


def settle_metrics(t: np.ndarray, v: np.ndarray, v_ref: float, t_step: float,
                   t_end: float, band: float = 0.01) -> dict:
    sel = (t >= t_step) & (t < t_end)
    tt, vv = t[sel], v[sel]
    dev = np.abs(vv - v_ref)
    out_of_band = np.nonzero(dev > band * v_ref)[0]
    if len(out_of_band) == 0:
        settle = 0.0
    elif out_of_band[-1] == len(tt) - 1:
        settle = None  # never settled inside the window
    else:
        settle = float(tt[out_of_band[-1] + 1] - t_step)
    return {"t_step": t_step, "settle_time_s": settle,
            "max_deviation_v": float(dev.max()) if len(dev) else 0.0}


# -- simulation --------------------------------------------------------------

def _steps(period: float, dt: float, what: str) -> int:
    n = period / dt
    if abs(n - round(n)) > 1e-6 * n:
        raise ValueError(f"dt_plant must divide the {what} period {period} s")
    return int(round(n))


class Simulation:
    """One deterministic scenario run."""

    def __init__(self, spec: ScenarioSpec, cfg: SimConfig | None = None,
                 module_order=None):
        cfg = cfg or SimConfig.default()
        self.spec = spec
        self.cfg = cfg
        sys, spm, gains = cfg.system, cfg.spm, cfg.gains
        spec.validate(spm.f_s1)
        self.nb = sys.n_blocks
        self.m = sys.n_modules
        self.dt = spec.dt_plant
        self.n_dab = _steps(1.0 / spm.f_s1, self.dt, "DAB")
        self.n_central = _steps(1.0 / sys.f_c, self.dt, "central")
        self.n_frame = _steps(FRAME_BASE * spec.decimate, self.dt, "frame")
        self.n_total = int(round(spec.duration / self.dt))

        mods = [apply_tolerances(spm, cfg.tolerances, k) for k in range(self.m)]
        self.c_mv = np.array([p.c_mv for p in mods])
        self.l_leak = np.array([p.l_leak for p in mods])

        self.dabs = [DabController(gains, spm.phi_max, spec.resonant_enabled,
                                   sys.ready_tol, sys.ready_hold)
                     for _ in range(self.m)]
        start_nominal = not spec.startup_enabled
        self.central = CentralController(sys, spm.c_mv, gains.k_v, spm.f_s2,
                                         spec.q_ref, start_nominal, gains.omega_ref)
        self.ready = ReadyChannel(sys.ready_latency)
        self.ready_sent = np.zeros(self.m, dtype=bool)
        # the order DAB controllers are evaluated within a tick; results must not depend on it
        self.order = list(range(self.m)) if module_order is None else list(module_order)
        if sorted(self.order) != list(range(self.m)):
            raise ValueError("module_order must be a permutation of the module indices")
        self.ready_time = np.full(self.m, np.nan)

        self.y = np.zeros(pk.state_size(self.nb))
        self.prm = np.zeros(pk.N_PRM)
        self.phi = np.zeros(self.m)
        self.m_afe = np.zeros(self.m)
        self.mode = np.zeros(self.m, dtype=np.int64)
        self.words = np.zeros(self.m, dtype=np.int64)
        self.illegal_gates = 0
        self.load_override: float | None = None
        self.breaker_forced_open = False
        self.trace = Trace(trace_columns(self.m))
        self.energy_residual_max = 0.0
        self._init_params()
        self._init_state()

    # -- setup --------------------------------------------------------------

    def _init_params(self) -> None:
        s, p = self.cfg.system, self.cfg.spm
        prm = self.prm
        prm[pk.P_N] = p.n_turns
        prm[pk.P_FS] = p.f_s1
        prm[pk.P_LAW] = 0.0 if p.dab_law == "sps" else 1.0
        prm[pk.P_LF] = s.l_filter
        prm[pk.P_CLV] = s.c_lv
        prm[pk.P_VAMP] = s.v_phase_peak
        prm[pk.P_OMEGA] = s.omega_0
        prm[pk.P_PCLIM] = s.precharge_i_limit
        prm[pk.P_PCV] = s.precharge_v_target
        prm[pk.P_PCR] = s.precharge_r
        prm[pk.P_TAU] = s.charge_tau

    def _init_state(self) -> None:
        s = self.cfg.system
        m = self.m
        if self.spec.startup_enabled:
            return  # everything discharged, breaker open
        v_lv = s.v_lv_ref
        v_mv = self.cfg.gains.k_v * v_lv
        self.y[:m] = v_mv
        self.y[m + 3] = v_lv
        for d in self.dabs:
            d.reset(v_lv, v_mv)
        self.central.pll.lock_to(self.y[m + 4])
        self.mode[:] = pk.MODE_PHASE

    # -- per-tick logic -----------------------------------------------------

    def _load(self, t: float) -> tuple[float, float]:
        if self.load_override is not None:
            return self.load_override, 0.0
        return self.spec.load_profile.at(t)

    def _apply_events(self, t: float, step: int) -> bool:
        """Fire events due at this step; True if the state was changed discontinuously."""
        jump = False
        for ev in self.spec.events:
            if int(round(ev.time / self.dt)) != step:
                continue
            if ev.action == "set_load":
                self.load_override = float(ev.value or 0.0)
            elif ev.action == "set_qref":
                self.central.q_ref = float(ev.value or 0.0)
            elif ev.action == "toggle_resonant":
                for d in self.dabs:
                    d.resonant_enabled = not d.resonant_enabled
            elif ev.action == "open_breaker":
                self.breaker_forced_open = True
                self.y[self.m:self.m + 3] = 0.0
                jump = True
        return jump

    def _central_tick(self, t: float) -> None:
        m = self.m
        y = self.y
        i_lv, p_lv = self._load(t)
        v_lv = y[m + 3]
        i_meas = i_lv + p_lv / max(v_lv, 1.0)
        v_abc = pk.source_voltages(y[m + 4], self.cfg.system.v_phase_peak)
        meas = CentralMeasurements(v_lv, i_meas, v_abc, y[m:m + 3].copy())
        out = self.central.tick(t, meas, self.ready.poll(t))
        en = out.enables
        self.enables = en
        self.p_g_ref = out.p_g_ref
        self.m_afe[:] = out.m_cmd
        self.words[:] = out.gate_words
        self.illegal_gates += int(np.count_nonzero((out.gate_words < 0) | (out.gate_words > 2)))

        prm = self.prm
        breaker = en.breaker_closed and not self.breaker_forced_open
        prm[pk.P_BREAKER] = 1.0 if breaker else 0.0
        prm[pk.P_AFE] = 1.0 if en.afe_enabled else 0.0
        prm[pk.P_PC] = 1.0 if en.precharge else 0.0
        prm[pk.P_DUTY] = en.dab_duty
        bleed_r = self.spec.load_profile.mvdc_bleed_r
        prm[pk.P_GBLEED] = 1.0 / bleed_r if bleed_r and not breaker else 0.0
        prm[pk.P_ILOAD] = i_lv
        prm[pk.P_PLOAD] = p_lv

        if en.dab_regulate:
            new_mode = pk.MODE_PHASE
        elif en.dab_charge:
            new_mode = pk.MODE_CHARGE
        else:
            new_mode = pk.MODE_OFF
        for k in range(m):
            if new_mode == pk.MODE_PHASE and self.mode[k] != pk.MODE_PHASE:
                # the module's own controller starts from its own local readings
                self.dabs[k].reset(y[m + 3], y[k])
                self.phi[k] = 0.0
            self.mode[k] = new_mode
        if new_mode != pk.MODE_PHASE:
            self.phi[:] = 0.0
            self.ready_sent[:] = False

    def _dab_tick(self, t: float) -> None:
        m = self.m
        v_lv = self.y[m + 3]
        regulating = self.central.sequencer.phase is StartupPhase.MVDC_REGULATE
        for k in self.order:
            if self.mode[k] != pk.MODE_PHASE:
                continue
            d = self.dabs[k]
            self.phi[k] = d.step(self.y[k], v_lv)
            if regulating and d.ready and not self.ready_sent[k]:
                self.ready.send(t, k)
                self.ready_sent[k] = True
                self.ready_time[k] = t

    def _module_powers(self) -> tuple[np.ndarray, np.ndarray]:
        y, m, nb = self.y, self.m, self.nb
        p = self.cfg.spm
        v_lv = y[m + 3]
        v = y[:m]
        law = "sps" if self.prm[pk.P_LAW] == 0.0 else "printed"
        kd = p.n_turns / (2 * math.pi * p.f_s1)
        p_dab = np.zeros(m)
        for k in range(m):
            if self.mode[k] == pk.MODE_PHASE:
                p_dab[k] = kd * v_lv * v[k] * pk.dab_shape(self.phi[k], law) / self.l_leak[k]
            elif self.mode[k] == pk.MODE_CHARGE:
                v_t = 2.0 * self.prm[pk.P_DUTY] * p.n_turns * v_lv
                p_dab[k] = -self.c_mv[k] * v[k] * max(v_t - v[k], 0.0) / self.prm[pk.P_TAU]
        i_line = np.repeat(y[m:m + 3], nb)
        if self.prm[pk.P_BREAKER] > 0.5 and self.prm[pk.P_AFE] > 0.5:
            p_afe = self.m_afe * v * i_line
        elif self.prm[pk.P_BREAKER] > 0.5:
            cond = np.sign(np.repeat(y[m:m + 3], nb))
            p_afe = cond * v * i_line
        else:
            p_afe = np.zeros(m)
        return p_dab, p_afe

    def _record(self, t: float) -> None:
        y, m = self.y, self.m
        i_lv, p_lv = self._load(t)
        v_lv = y[m + 3]
        p_dab, p_afe = self._module_powers()
        row = [t, v_lv, i_lv + p_lv / max(v_lv, 1.0)]
        row += list(pk.source_voltages(y[m + 4], self.cfg.system.v_phase_peak))
        row += list(y[m:m + 3])
        row += list(y[:m]) + list(self.phi) + list(p_dab) + list(p_afe)
        row += [float(int(self.central.sequencer.phase)), self.p_g_ref]
        self.trace.rows.append(row)
        self.trace.gate_rows.append([t] + [int(w) for w in self.words])

    def _energy(self) -> tuple[float, float]:
        s = self.cfg.system
        e = pk.stored_energy(self.y, self.c_mv, s.c_lv, s.l_filter, self.nb)
        a = self.y[self.m + 5:]
        return e, a[pk.ACC_GRID] + a[pk.ACC_PC] - a[pk.ACC_LOAD] - a[pk.ACC_BLEED]

    def _check_blowup(self, frame: int) -> None:
        s, p = self.cfg.system, self.cfg.spm
        m = self.m
        y = self.y
        limits = ((y[:m], 10 * p.v_mv_nom, "v_mv"), (y[m:m + 3], 10 * s.i_rated_peak, "i_line"),
                  (y[m + 3:m + 4], 10 * s.v_lv_ref, "v_lv"))
        for vals, lim, name in limits:
            if not np.all(np.isfinite(vals)) or np.max(np.abs(vals)) > lim:
                raise SimulationError(f"{name} exceeded 10x rating at frame {frame}", frame)

    # -- main loop ----------------------------------------------------------

    def run(self) -> Trace:
        n_total = self.n_total
        event_steps = sorted({int(round(ev.time / self.dt)) for ev in self.spec.events})
        self.enables = None
        self.p_g_ref = 0.0
        step = 0
        frame = 0
        e_prev, a_prev = self._energy()
        t_frame_prev = 0.0
        while True:
            t = step * self.dt
            if step in event_steps and self._apply_events(t, step):
                e_prev, a_prev = self._energy()
            if step % self.n_central == 0:
                self._central_tick(t)
            if step % self.n_dab == 0:
                self._dab_tick(t)
            if step % self.n_frame == 0:
                if step > 0:
                    e, a = self._energy()
                    span = t - t_frame_prev
                    res = abs((e - e_prev) - (a - a_prev)) / span
                    self.energy_residual_max = max(self.energy_residual_max, res)
                    e_prev, a_prev, t_frame_prev = e, a, t
                self._check_blowup(frame)
                self._record(t)
                frame += 1
            if step >= n_total:
                break
            nxt = min(n_total,
                      (step // self.n_central + 1) * self.n_central,
                      (step // self.n_dab + 1) * self.n_dab,
                      (step // self.n_frame + 1) * self.n_frame)
            for es in event_steps:
                if step < es < nxt:
                    nxt = es
                    break
            pk.rk4_integrate(self.y, nxt - step, self.dt, self.phi, self.m_afe, self.mode,
                             self.c_mv, self.l_leak, self.prm, self.nb)
            step = nxt
        if n_total == 0:
            self.trace.rows = []
            self.trace.gate_rows = []
        return self.trace

    # -- summary ------------------------------------------------------------

    def summary(self) -> dict:
        s = self.cfg.system
        m = self.m
        y = self.y
        tr = self.trace
        out: dict = {
            "scenario": self.spec.name,
            "duration_s": self.spec.duration,
            "dt_plant_s": self.dt,
            "final": {
                "t": self.n_total * self.dt,
                "v_lv": float(y[m + 3]),
                "i_abc": [float(v) for v in y[m:m + 3]],
                "v_mv": [float(v) for v in y[:m]],
                "phi": [float(v) for v in self.phi],
                "phase": self.central.sequencer.phase.name,
            },
            "energy_residual_max_w": self.energy_residual_max,
            "energy_residual_max_pu": self.energy_residual_max / s.p_rated,
            "illegal_gate_count": self.illegal_gates,
            "phase_times": {ph.name: t for t, ph in self.central.sequencer.history},
            "startup_aborted": self.central.sequencer.aborted,
            "all_ready_s": (float(np.max(self.ready_time))
                            if np.all(np.isfinite(self.ready_time)) else None),
        }
        if not tr.rows:
            return out
        t = tr.col("t")
        span = t[-1] - t[0]
        if span >= RIPPLE_WINDOW:
            vmv = tr.group("vmv")
            rip = [ripple_metric(t, vmv[:, k], 2 * s.omega_0 / (2 * math.pi), RIPPLE_WINDOW)
                   for k in range(m)]
            out["ripple_120hz_vpp"] = rip
            out["ripple_120hz_vpp_max"] = max(rip)
        if span >= BALANCE_WINDOW:
            bal = balance_metric(tr, self.nb, t[-1] - BALANCE_WINDOW)
            out["balance_steady"] = bal
            out["balance_whole_run"] = balance_metric(tr, self.nb, self._balance_start())
        steps = self._load_step_times()
        v_lv = tr.col("v_lv")
        out["load_steps"] = [
            settle_metrics(t, v_lv, s.v_lv_ref, ts, te)
            for ts, te in zip(steps, steps[1:] + [t[-1] + 1e-12])
        ]
        return out

    def _balance_start(self) -> float:
        for t, ph in self.central.sequencer.history:
            if ph is StartupPhase.NOMINAL:
                return t + 0.05
        return 0.05

    def _load_step_times(self) -> list[float]:
        times = [st.time for st in self.spec.load_profile.steps if st.time > 0]
        times += [ev.time for ev in self.spec.events if ev.action == "set_load"]
        return sorted(times)


def run(spec: ScenarioSpec, cfg: SimConfig | None = None,
        out_dir: str | Path | None = None) -> tuple[Trace, dict]:
    """Run a scenario; with ``out_dir``, write trace.csv, gates.csv and summary.json."""
    sim = Simulation(spec, cfg)
    try:
        trace = sim.run()
        summary = sim.summary()
    except SimulationError as exc:
        trace = sim.trace
        summary = sim.summary()
        summary["aborted"] = True
        summary["abort_reason"] = str(exc)
        summary["abort_frame"] = exc.frame_index
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out / "trace.csv")
        trace.write_gates(out / "gates.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    return trace, summary


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))
