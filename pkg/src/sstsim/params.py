"""Converter constants, component tolerances and JSON configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .scenario import ScenarioSpec

DAB_LAWS = ("sps", "printed")


class ConfigError(ValueError):
    """Raised when a configuration cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class SpmParams:
    """Single-phase module constants (one AFE + one DAB)."""

    v_mv_nom: float = 2150.0  # V, MVDC bus
    v_ac_nom: float = 1270.0  # V rms, module AC terminal
    v_lv_nom: float = 750.0  # V
    p_rated: float = 55.6e3  # W
    q_rated: float = 25e3  # VAR
    f_s1: float = 20e3  # Hz, DAB switching and sampling
    f_s2: float = 5e3  # Hz, AFE device switching
    c_mv: float = 268e-6  # F
    l_leak: float = 137e-6  # H, referred to the MV side
    n_turns: float = 3.0
    c_b1: float = 6.8e-6  # F
    c_b2: float = 150e-6  # F
    # "sps": textbook single-phase-shift law, phase in radians, |phi| <= pi/2.
    # "printed": phi*(1 - phi) with per-unit phase, |phi| <= 0.5.
    dab_law: str = "sps"

    @property
    def phi_max(self) -> float:
        return math.pi / 2 if self.dab_law == "sps" else 0.5


@dataclass(frozen=True)
class SystemParams:
    """Three-phase system constants plus the invented plant/controller defaults."""

    s_rated: float = 1.1e6  # VA
    p_rated: float = 1e6  # W
    q_rated: float = 450e3  # VAR
    v_grid_ll: float = 13.2e3  # V rms line-line
    omega_0: float = 2 * math.pi * 60
    v_lv_ref: float = 750.0  # V
    n_blocks: int = 6
    f_c: float = 10e3  # Hz, central controller rate
    l_filter: float = 12e-3  # H per phase
    c_lv: float = 20e-3  # F
    # central loop bandwidths (Hz)
    lvdc_bw: float = 30.0
    pll_bw: float = 25.0
    cc_bw: float = 400.0
    # pre-charge source
    precharge_i_limit: float = 50.0  # A
    precharge_v_target: float = 750.0  # V
    precharge_r: float = 1.0  # ohm
    # start-up sequence
    charge_tau: float = 5e-3  # s, averaged DAB diode-rectifier charging
    duty_ramp_time: float = 0.5  # s
    ramp_settle_time: float = 0.1  # s
    ready_latency: float = 0.02  # s
    ready_tol: float = 0.01  # per unit MVDC error a module tolerates before reporting ready
    ready_hold: float = 0.05  # s the error must stay inside ready_tol
    breaker_to_nominal: float = 0.02  # s
    guard_timeout: float = 5.0  # s

    @property
    def n_modules(self) -> int:
        return 3 * self.n_blocks

    @property
    def v_phase_peak(self) -> float:
        return math.sqrt(2.0) * self.v_grid_ll / math.sqrt(3.0)

    @property
    def i_rated_peak(self) -> float:
        return 2.0 * self.p_rated / (3.0 * self.v_phase_peak)


@dataclass(frozen=True)
class DabGains:
    """Gains of the decentralized MVDC voltage regulator."""

    k_v: float = 2150.0 / 750.0
    omega_ref: float = 2 * math.pi * 130
    k_pmv: float = 0.0082
    t_imv: float = 0.01
    t_rmv: float = 0.01
    omega_bmv: float = math.pi
    omega_vs: float = 2 * math.pi * 1e5
    t_vs: float = 77e-6
    t_s1: float = 1.0 / 20e3
    omega_line: float = 2 * math.pi * 60  # resonator sits at twice this

    @classmethod
    def for_module(cls, spm: SpmParams, **overrides) -> "DabGains":
        base = dict(k_v=spm.v_mv_nom / spm.v_lv_nom, t_s1=1.0 / spm.f_s1)
        base.update(overrides)
        return cls(**base)


def default_ladder(n_modules: int) -> list[float]:
    """0.91 .. 1.08 spread evenly over the modules (step 0.01 for 18 modules)."""
    if n_modules == 1:
        return [1.0]
    return [round(0.91 + 0.17 * k / (n_modules - 1), 12) for k in range(n_modules)]


@dataclass(frozen=True)
class ToleranceSpec:
    l_multipliers: tuple[float, ...]
    c_mv_multipliers: tuple[float, ...]

    @classmethod
    def nominal(cls, n_modules: int = 18) -> "ToleranceSpec":
        return cls((1.0,) * n_modules, (1.0,) * n_modules)

    @classmethod
    def ladder(cls, n_modules: int = 18, seed: int | None = None) -> "ToleranceSpec":
        lm = default_ladder(n_modules)
        cm = default_ladder(n_modules)
        if seed is not None:
            rng = np.random.default_rng(seed)
            lm = [lm[i] for i in rng.permutation(n_modules)]
            cm = [cm[i] for i in rng.permutation(n_modules)]
        return cls(tuple(lm), tuple(cm))

    @property
    def max_spread(self) -> float:
        return max(max(self.l_multipliers) - min(self.l_multipliers),
                   max(self.c_mv_multipliers) - min(self.c_mv_multipliers))


def blocking_resonance(p: SpmParams) -> float:
    """Series LC resonance of the leakage inductance with both blocking capacitors, Hz."""
    n2 = p.n_turns ** 2
    return math.sqrt((n2 * p.c_b1 + p.c_b2) / (p.l_leak * p.c_b1 * p.c_b2)) / (2 * math.pi)


def apply_tolerances(p: SpmParams, t: ToleranceSpec, module_index: int) -> SpmParams:
    if not 0 <= module_index < len(t.l_multipliers):
        raise IndexError(f"module index {module_index} out of range "
                         f"0..{len(t.l_multipliers) - 1}")
    return dataclasses.replace(
        p,
        l_leak=p.l_leak * t.l_multipliers[module_index],
        c_mv=p.c_mv * t.c_mv_multipliers[module_index],
    )


def validate(system: SystemParams, spm: SpmParams, gains: DabGains,
             tol: ToleranceSpec) -> None:
    """Check every cross-parameter invariant; raise ConfigError naming the first failure."""
    if system.n_blocks < 1:
        raise ConfigError("n_blocks must be ≥ 1")
    for group, obj in (("spm", spm), ("system", system), ("dab_gains", gains)):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and not v > 0:
                raise ConfigError(f"{group}.{f.name} must be > 0 (got {v})")
    if spm.dab_law not in DAB_LAWS:
        raise ConfigError(f"spm.dab_law must be one of {DAB_LAWS} (got {spm.dab_law!r})")

    f_r = blocking_resonance(spm)
    if not spm.f_s1 / 10 < f_r < spm.f_s1 / 2:
        raise ConfigError(f"blocking resonance {f_r:.1f} Hz outside "
                          f"({spm.f_s1 / 10:.0f}, {spm.f_s1 / 2:.0f}) Hz window")

    v_ac = system.v_grid_ll / (math.sqrt(3) * system.n_blocks)
    if abs(v_ac / spm.v_ac_nom - 1) > 0.01:
        raise ConfigError(f"per-module AC voltage {v_ac:.1f} V differs from "
                          f"spm.v_ac_nom {spm.v_ac_nom:.1f} V by more than 1%")
    p_mod = system.p_rated / system.n_modules
    if abs(p_mod / spm.p_rated - 1) > 0.01:
        raise ConfigError(f"per-module power {p_mod:.0f} W differs from "
                          f"spm.p_rated {spm.p_rated:.0f} W by more than 1%")

    m = system.n_modules
    for name in ("l_multipliers", "c_mv_multipliers"):
        seq = getattr(tol, name)
        if len(seq) != m:
            raise ConfigError(f"tolerances.{name} has {len(seq)} entries, expected {m}")
        for i, v in enumerate(seq):
            if not v > 0:
                raise ConfigError(f"tolerances.{name}[{i}] (module {i}) must be > 0")


def _build(cls, data: dict, group: str, **defaults):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{group}': {sorted(unknown)}")
    kw = dict(defaults)
    kw.update(data)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad '{group}' section: {exc}") from exc


def parse_config(raw: dict):
    """Build validated parameter objects from a decoded JSON document."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - {"system", "spm", "dab_gains", "tolerances", "scenario"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    system = _build(SystemParams, raw.get("system", {}), "system")
    spm = _build(SpmParams, raw.get("spm", {}), "spm")
    gains = _build(DabGains, raw.get("dab_gains", {}), "dab_gains",
                   k_v=spm.v_mv_nom / spm.v_lv_nom, t_s1=1.0 / spm.f_s1,
                   omega_line=system.omega_0)

    if system.n_blocks < 1:
        raise ConfigError("n_blocks must be ≥ 1")
    traw = raw.get("tolerances", {})
    if traw.get("ladder"):
        tol = ToleranceSpec.ladder(system.n_modules, traw.get("seed"))
    else:
        nominal = ToleranceSpec.nominal(system.n_modules)
        tol = ToleranceSpec(
            tuple(traw.get("l_multipliers", nominal.l_multipliers)),
            tuple(traw.get("c_mv_multipliers", nominal.c_mv_multipliers)),
        )
    scenario = ScenarioSpec.from_dict(raw.get("scenario", {}))
    validate(system, spm, gains, tol)
    scenario.validate(spm.f_s1)
    return system, spm, gains, tol, scenario


def load_config(path: str | Path):
    """Load a JSON config; absent keys take the built-in defaults.

    Returns ``(system, spm, dab_gains, tolerances, scenario)``.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)


def config_to_dict(system: SystemParams, spm: SpmParams, gains: DabGains,
                   tol: ToleranceSpec, scenario: ScenarioSpec) -> dict:
    return {
        "system": dataclasses.asdict(system),
        "spm": dataclasses.asdict(spm),
        "dab_gains": dataclasses.asdict(gains),
        "tolerances": {"l_multipliers": list(tol.l_multipliers),
                       "c_mv_multipliers": list(tol.c_mv_multipliers)},
        "scenario": scenario.to_dict(),
    }


def save_config(path: str | Path, system: SystemParams, spm: SpmParams,
                gains: DabGains, tol: ToleranceSpec, scenario: ScenarioSpec) -> None:
    Path(path).write_text(json.dumps(config_to_dict(system, spm, gains, tol, scenario),
                                     indent=2))


def default_config():
    """All defaults, as ``load_config`` would return for an empty file."""
    return parse_config({})
