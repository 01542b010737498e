import dataclasses
import json
import math

import numpy as np
import pytest

from sstsim.engine import (SimConfig, Simulation, SimulationError, Trace, balance_metric,
                           read_trace, ripple_metric, run, settle_metrics, trace_columns)
from sstsim.scenario import Event, LoadProfile, LoadStep, ScenarioSpec

CFG = SimConfig.default()
I_FULL = CFG.system.p_rated / CFG.system.v_lv_ref


def _spec(duration, **kw):
    return ScenarioSpec("t", duration=duration, **kw)


def test_zero_duration_gives_header_only_trace(tmp_path):
    trace, summary = run(_spec(0.0), CFG, tmp_path)
    assert trace.rows == []
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines == [",".join(trace_columns(18))]
    assert summary["final"]["v_lv"] == CFG.system.v_lv_ref
    assert summary["final"]["v_mv"] == [pytest.approx(2150.0)] * 18


def test_ripple_metric_pure_tone():
    t = np.arange(0, 0.5, 1e-4)
    x = 3.0 * np.sin(2 * math.pi * 120 * t + 0.3) + 7.0
    assert ripple_metric(t, x, 120.0, 0.25) == pytest.approx(6.0, rel=0.01)
    assert ripple_metric(t, np.full_like(t, 5.0), 120.0, 0.25) == pytest.approx(0.0, abs=1e-9)


def test_ripple_metric_rejects_bad_windows():
    t = np.arange(0, 0.2, 1e-4)
    with pytest.raises(ValueError):
        ripple_metric(t, np.sin(t), 120.0, 0.03)
    with pytest.raises(ValueError):
        ripple_metric(t, np.sin(t), 120.0, 0.5)


def test_settle_metrics():
    t = np.arange(0, 0.3, 1e-3)
    v = 750.0 - 30.0 * np.exp(-(t - 0.1) / 0.01) * (t >= 0.1)
    m = settle_metrics(t, v, 750.0, 0.1, 0.3)
    # 30 exp(-x/0.01) < 7.5  =>  x > 0.01 ln 4 = 13.9 ms
    assert m["settle_time_s"] == pytest.approx(0.01 * math.log(4), abs=1.5e-3)
    assert m["max_deviation_v"] == pytest.approx(30.0)
    never = settle_metrics(t, np.full_like(t, 700.0), 750.0, 0.1, 0.3)
    assert never["settle_time_s"] is None


def test_identical_modules_stay_balanced():
    spec = _spec(0.06, load_profile=LoadProfile((LoadStep(0.01, i_lv=I_FULL),)))
    trace, _ = run(spec, CFG)
    for group in balance_metric(trace, 6):
        assert group["max_vmv_spread"] < 1e-6
        assert group["max_power_spread"] < 1e-3


def test_tick_alignment():
    sim = Simulation(_spec(0.01), CFG)
    assert (sim.n_dab, sim.n_central, sim.n_frame) == (50, 100, 100)
    with pytest.raises(ValueError, match="divide"):
        Simulation(_spec(0.01, dt_plant=3e-6), CFG)


def test_rerun_and_module_order_are_bit_identical():
    spec = _spec(0.04, load_profile=LoadProfile((LoadStep(0.01, i_lv=I_FULL),)))
    cfg = dataclasses.replace(CFG, tolerances=type(CFG.tolerances).ladder(18, 3))
    a = Simulation(spec, cfg)
    b = Simulation(spec, cfg)
    c = Simulation(spec, cfg, module_order=list(reversed(range(18))))
    ra, rb, rc = a.run().rows, b.run().rows, c.run().rows
    assert ra == rb
    assert ra == rc
    with pytest.raises(ValueError):
        Simulation(spec, cfg, module_order=[0] * 18)


def test_blow_up_raises_with_frame_index():
    bad = dataclasses.replace(CFG, gains=dataclasses.replace(CFG.gains, k_pmv=-0.05))
    spec = _spec(0.2, load_profile=LoadProfile((LoadStep(0.01, i_lv=I_FULL),)))
    sim = Simulation(spec, bad)
    with pytest.raises(SimulationError) as info:
        sim.run()
    assert info.value.frame_index > 0
    assert str(info.value.frame_index) in str(info.value)
    _, summary = run(spec, bad)
    assert summary["aborted"] and summary["abort_frame"] == info.value.frame_index


def test_csv_round_trip(tmp_path):
    trace, _ = run(_spec(0.005), CFG, tmp_path)
    back = read_trace(tmp_path / "trace.csv")
    assert back.columns == trace.columns
    assert np.allclose(back.data, trace.data, rtol=1e-12, atol=0)
    gates = (tmp_path / "gates.csv").read_text().splitlines()
    assert len(gates) == len(trace.rows) + 1
    vals = {int(v) for line in gates[1:] for v in line.split(",")[1:]}
    assert vals <= {0, 1, 2}


def test_summary_reports_energy_residual(tmp_path):
    _, summary = run(_spec(0.02), CFG, tmp_path)
    assert summary["energy_residual_max_pu"] < 1e-6
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["illegal_gate_count"] == 0


def test_open_breaker_event_stops_grid_current():
    spec = _spec(0.03, events=(Event(0.01, "open_breaker"),))
    trace, _ = run(spec, CFG)
    t = trace.col("t")
    assert np.all(trace.data[t >= 0.01, 6:9] == 0.0)


def test_trace_group_and_columns():
    tr = Trace(trace_columns(2), [[float(i) for i in range(len(trace_columns(2)))]])
    assert tr.group("vmv").tolist() == [[9.0, 10.0]]
    assert tr.col("phase")[0] == len(trace_columns(2)) - 2
