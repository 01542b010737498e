"""Scenario description shared by the config loader and the simulation engine."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

EVENT_ACTIONS = ("set_load", "set_qref", "toggle_resonant", "open_breaker")


@dataclass(frozen=True)
class LoadStep:
    """From ``time`` on, the LVDC bus draws ``i_lv`` amps plus ``p_lv`` watts."""

    time: float
    i_lv: float = 0.0
    p_lv: float = 0.0


@dataclass(frozen=True)
class LoadProfile:
    steps: tuple[LoadStep, ...] = ()
    mvdc_bleed_r: float | None = None  # ohm across every MVDC bus, start-up loss emulation

    def __post_init__(self):
        times = [s.time for s in self.steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("load step times must be strictly increasing")

    def at(self, t: float) -> tuple[float, float]:
        """(i_lv, p_lv) in force at time ``t``."""
        i_lv = p_lv = 0.0
        for s in self.steps:
            if s.time <= t:
                i_lv, p_lv = s.i_lv, s.p_lv
            else:
                break
        return i_lv, p_lv


@dataclass(frozen=True)
class Event:
    time: float
    action: str
    value: float | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "custom"
    duration: float = 0.5
    dt_plant: float = 1e-6
    load_profile: LoadProfile = field(default_factory=LoadProfile)
    resonant_enabled: bool = True
    startup_enabled: bool = False
    events: tuple[Event, ...] = ()
    q_ref: float = 0.0
    decimate: int = 10  # one frame per `decimate` x 10 us

    def validate(self, f_s1: float) -> None:
        from .params import ConfigError

        if self.duration < 0:
            raise ConfigError("scenario.duration must be ≥ 0")
        if not 0 < self.dt_plant <= 1.0 / (10.0 * f_s1) * (1 + 1e-9):
            raise ConfigError(f"scenario.dt_plant must be in (0, {1 / (10 * f_s1):g}] s")
        if self.decimate < 1:
            raise ConfigError("scenario.decimate must be ≥ 1")
        for ev in self.events:
            if ev.action not in EVENT_ACTIONS:
                raise ConfigError(f"unknown event action {ev.action!r}")
            if not 0 <= ev.time <= self.duration:
                raise ConfigError(f"event {ev.action!r} at {ev.time} s outside the scenario")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["load_profile"]["steps"] = [asdict(s) for s in self.load_profile.steps]
        d["events"] = [asdict(e) for e in self.events]
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioSpec":
        from .params import ConfigError

        raw = dict(raw)
        try:
            lp = raw.pop("load_profile", {}) or {}
            steps = tuple(LoadStep(**s) for s in lp.get("steps", ()))
            profile = LoadProfile(steps, lp.get("mvdc_bleed_r"))
            events = tuple(Event(**e) for e in raw.pop("events", ()))
            return cls(load_profile=profile, events=events, **raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'scenario' section: {exc}") from exc
