"""Named scenarios and their pass/fail checks."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .dab_control import DabController
from .engine import SimConfig, Trace, run
from .freqdomain import log_grid, pir_factor, sweep, timescale_audit
from .params import ToleranceSpec, blocking_resonance
from .scenario import LoadProfile, LoadStep, ScenarioSpec

SCENARIOS = ("startup", "load_step", "balance", "ripple", "margins")

BLEED_TOTAL_W = 700.0


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion}. {self.name}: {self.detail}"


def full_load_current(cfg: SimConfig) -> float:
    return cfg.system.p_rated / cfg.system.v_lv_ref


def bleed_resistance(cfg: SimConfig, total_w: float = BLEED_TOTAL_W) -> float:
    """Per-module MVDC resistor so all modules together dissipate ``total_w`` at nominal."""
    return cfg.system.n_modules * cfg.spm.v_mv_nom ** 2 / total_w


def startup_spec(cfg: SimConfig, duration: float = 1.4, **kw) -> ScenarioSpec:
    return ScenarioSpec("startup", duration=duration, startup_enabled=True,
                        load_profile=LoadProfile((), bleed_resistance(cfg)), **kw)


def load_step_spec(cfg: SimConfig, duration: float = 0.8, **kw) -> ScenarioSpec:
    i_full = full_load_current(cfg)
    steps = (LoadStep(0.1, i_lv=i_full), LoadStep(0.45, i_lv=0.0))
    return ScenarioSpec("load_step", duration=duration, load_profile=LoadProfile(steps), **kw)


def balance_spec(cfg: SimConfig, duration: float = 0.8, **kw) -> ScenarioSpec:
    i_full = full_load_current(cfg)
    steps = (LoadStep(0.05, i_lv=i_full), LoadStep(0.4, i_lv=0.5 * i_full),
             LoadStep(0.5, i_lv=i_full))
    return ScenarioSpec("balance", duration=duration, load_profile=LoadProfile(steps), **kw)


def ripple_spec(cfg: SimConfig, resonant: bool, duration: float = 1.0, **kw) -> ScenarioSpec:
    steps = (LoadStep(0.05, i_lv=full_load_current(cfg)),)
    return ScenarioSpec("ripple_" + ("on" if resonant else "off"), duration=duration,
                        load_profile=LoadProfile(steps), resonant_enabled=resonant, **kw)


def with_ladder(cfg: SimConfig, seed: int | None) -> SimConfig:
    return dataclasses.replace(cfg, tolerances=ToleranceSpec.ladder(cfg.system.n_modules, seed))


# -- checks ------------------------------------------------------------------

def check_margins(cfg: SimConfig) -> tuple[list[Check], dict]:
    resp = sweep(cfg.spm, cfg.gains)
    fc, pm, gm = resp.crossover_hz, resp.phase_margin_deg, resp.gain_margin_db
    ok = (fc is not None and pm is not None and gm is not None and abs(fc - 643) <= 20
          and abs(pm - 55) <= 5 and abs(gm - 10) <= 1)
    checks = [Check(1, "loop margins", ok,
                    f"crossover {fc:.1f} Hz, PM {pm:.1f} deg, GM {gm:.2f} dB"
                    if ok or None not in (fc, pm, gm) else "margins absent")]
    f_r = blocking_resonance(cfg.spm)
    lo, hi = cfg.spm.f_s1 / 10, cfg.spm.f_s1 / 2
    ok_r = abs(f_r / 6.19e3 - 1) <= 0.01 and lo < f_r < hi
    checks.append(Check(2, "blocking resonance", ok_r,
                        f"f_r = {f_r:.1f} Hz, window ({lo:.0f}, {hi:.0f}) Hz"))
    worst_db, worst_deg = pir_discrepancy(cfg)
    checks.append(Check(8, "discrete vs continuous PIR", worst_db <= 0.2 and worst_deg <= 1.0,
                        f"max |error| {worst_db:.4f} dB / {worst_deg:.4f} deg up to 2 kHz"))
    audit = timescale_audit(cfg.gains, cfg.system.lvdc_bw, fc)
    summary = {"crossover_hz": fc, "phase_margin_deg": pm, "gain_margin_db": gm,
               "phase_crossover_hz": resp.annotations.get("phase_crossover_hz"),
               "blocking_resonance_hz": f_r, "pir_max_err_db": worst_db,
               "pir_max_err_deg": worst_deg, "timescale_ratio": audit.ratio,
               "timescale_violations": audit.violations}
    return checks, summary | {"_response": resp}


def pir_discrepancy(cfg: SimConfig, f_max: float = 2e3) -> tuple[float, float]:
    ctrl = DabController(cfg.gains, cfg.spm.phi_max, True)
    freqs = log_grid(1.0, f_max)
    worst_db = worst_deg = 0.0
    for f in freqs:
        hd = ctrl.response(f)
        hc = pir_factor(2j * math.pi * f, cfg.gains)
        worst_db = max(worst_db, abs(20 * math.log10(abs(hd) / abs(hc))))
        worst_deg = max(worst_deg, abs(math.degrees(np.angle(hd / hc))))
    return worst_db, worst_deg


def ripple_ratio_checks(on: dict, off: dict) -> list[Check]:
    r_on, r_off = on["ripple_120hz_vpp_max"], off["ripple_120hz_vpp_max"]
    ratio = r_off / r_on if r_on > 0 else math.inf
    in_band = 40.0 <= r_off <= 130.0
    return [Check(3, "ripple suppression", r_on < 5.0 and ratio >= 8.0,
                  f"on {r_on:.3f} V pp, off {r_off:.2f} V pp, ratio {ratio:.1f}, "
                  f"advisory 40-130 V band {'met' if in_band else 'missed'}")]


def phase_spreads(trace: Trace, n_blocks: int, t_from: float, t_to: float = math.inf):
    t = trace.col("t")
    sel = (t >= t_from) & (t <= t_to)
    vmv = trace.group("vmv")[sel]
    pd = trace.group("pdab")[sel]
    v_sp = max(float(np.max(np.ptp(vmv[:, p * n_blocks:(p + 1) * n_blocks], axis=1)))
               for p in range(3))
    p_sp = max(float(np.max(np.ptp(pd[:, p * n_blocks:(p + 1) * n_blocks], axis=1)))
               for p in range(3))
    return v_sp, p_sp


def balance_checks(trace: Trace, cfg: SimConfig, steady_from: float,
                   transient_from: float) -> tuple[list[Check], dict]:
    nb = cfg.system.n_blocks
    v_lim = 0.01 * cfg.spm.v_mv_nom
    p_lim = 0.02 * cfg.spm.p_rated
    v_ss, p_ss = phase_spreads(trace, nb, steady_from)
    v_tr, p_tr = phase_spreads(trace, nb, transient_from)
    ok = v_ss < v_lim and p_ss < p_lim and v_tr < v_lim and p_tr < p_lim
    detail = (f"steady v_mv {v_ss:.2f} V / p_dab {p_ss:.0f} W; through transients "
              f"v_mv {v_tr:.2f} V / p_dab {p_tr:.0f} W (limits {v_lim:.1f} V, {p_lim:.0f} W)")
    return [Check(4, "inherent balancing", ok, detail)], {
        "steady_vmv_spread_v": v_ss, "steady_pdab_spread_w": p_ss,
        "transient_vmv_spread_v": v_tr, "transient_pdab_spread_w": p_tr}


def load_step_checks(summary: dict, cfg: SimConfig) -> list[Check]:
    steps = summary.get("load_steps", [])
    limit_dev = 0.08 * cfg.system.v_lv_ref
    ok = len(steps) >= 2
    parts = []
    for st in steps:
        ts = st["settle_time_s"]
        good = ts is not None and ts <= 0.2 and st["max_deviation_v"] < limit_dev
        ok &= good
        parts.append(f"t={st['t_step']:.2f}s settle "
                     f"{'never' if ts is None else f'{ts * 1e3:.1f} ms'}, "
                     f"dev {st['max_deviation_v']:.1f} V")
    return [Check(5, "load steps", ok, "; ".join(parts) or "no steps")]


def startup_checks(trace: Trace, summary: dict, cfg: SimConfig) -> list[Check]:
    pt = summary["phase_times"]
    t = trace.col("t")
    i_abc = trace.data[:, 6:9]
    v_lv = trace.col("v_lv")
    done = "NOMINAL" in pt and not summary["startup_aborted"]
    if not done:
        return [Check(6, "soft start-up", False, f"sequence stopped: {list(pt)}")]
    t_bc = pt["BREAKER_CLOSE"]
    before = np.abs(i_abc[t < t_bc]).max() if np.any(t < t_bc) else 0.0
    win = (t >= t_bc) & (t <= t_bc + 0.1)
    i_peak = float(np.abs(i_abc[win]).max()) if win.any() else math.inf
    i_lim = 1.5 * cfg.system.i_rated_peak
    t_ready = summary.get("all_ready_s")
    hold = (t >= t_ready) & (t <= t_bc) if t_ready is not None else np.zeros_like(t, bool)
    dv = np.diff(v_lv[hold])
    droop = len(dv) > 0 and bool(np.all(dv <= 0.0)) and v_lv[hold][0] > v_lv[hold][-1]
    ok = before == 0.0 and i_peak <= i_lim and droop
    detail = (f"nominal at {pt['NOMINAL']:.3f} s; |i| before closure {before:.3g} A; "
              f"peak after closure {i_peak:.2f} A (limit {i_lim:.1f}); "
              f"hold droop {'monotone' if droop else 'not monotone'} "
              f"{(v_lv[hold][0] - v_lv[hold][-1]) if hold.any() else float('nan'):.3f} V")
    return [Check(6, "soft start-up", ok, detail)]


def conservation_check(summaries: list[dict], cfg: SimConfig) -> Check:
    worst = max(s["energy_residual_max_pu"] for s in summaries) if summaries else 0.0
    return Check(7, "energy conservation", worst < 1e-3 and bool(summaries),
                 f"worst frame residual {worst:.3g} pu over {len(summaries)} runs")


def steady_metrics(summary: dict) -> dict:
    f = summary["final"]
    return {"v_lv": f["v_lv"], "v_mv_mean": float(np.mean(f["v_mv"])),
            "ripple_120hz_vpp_max": summary.get("ripple_120hz_vpp_max")}


def determinism_check(cfg: SimConfig, duration: float = 0.6) -> tuple[Check, dict]:
    """Byte-identical reruns, and the steady state moved < 0.01% by halving dt."""
    import tempfile
    from pathlib import Path

    spec = ripple_spec(cfg, resonant=False, duration=duration)
    with tempfile.TemporaryDirectory() as d:
        run(spec, cfg, Path(d) / "a")
        run(spec, cfg, Path(d) / "b")
        same = all((Path(d) / "a" / n).read_bytes() == (Path(d) / "b" / n).read_bytes()
                   for n in ("trace.csv", "gates.csv", "summary.json"))
    _, s1 = run(spec, cfg)
    _, s2 = run(dataclasses.replace(spec, dt_plant=spec.dt_plant / 2), cfg)
    m1, m2 = steady_metrics(s1), steady_metrics(s2)
    drift = {k: abs(m2[k] / m1[k] - 1) for k in m1 if m1[k]}
    worst = max(drift.values())
    ok = same and worst < 1e-4
    return (Check(9, "determinism and convergence", ok,
                  f"reruns {'identical' if same else 'differ'}; worst dt/2 drift "
                  f"{worst:.2e} ({max(drift, key=drift.get)})"),
            {"identical": same, "drift": drift})
