import json
import subprocess
import sys

import pytest

from sstsim.cli import build_parser, main


def _summary(path):
    return json.loads(path.read_text())


def test_margins_check_exits_zero(tmp_path, capsys):
    assert main(["run", "margins", "--check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] 1." in out and "[PASS] 2." in out and "[PASS] 8." in out
    assert (tmp_path / "margins" / "plot_margins.csv").exists()
    m = json.loads((tmp_path / "margins" / "margins.json").read_text())
    assert abs(m["crossover_hz"] - 643) <= 20


def test_load_step_summary_has_both_steps(tmp_path):
    main(["run", "load_step", "--out", str(tmp_path), "--decimate", "5"])
    s = _summary(tmp_path / "load_step" / "summary.json")
    assert len(s["load_steps"]) == 2
    for st in s["load_steps"]:
        assert {"settle_time_s", "max_deviation_v"} <= set(st)
    assert (tmp_path / "load_step" / "plot_load_steps.csv").exists()
    assert (tmp_path / "load_step" / "trace.csv").exists()


def test_balance_seed_is_reproducible(tmp_path):
    args = ["run", "balance", "--seed", "7", "--duration", "0.12"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "balance" / "trace.csv").read_bytes()
    b = (tmp_path / "b" / "balance" / "trace.csv").read_bytes()
    assert a == b
    s = _summary(tmp_path / "a" / "balance" / "summary.json")
    assert sorted(s["tolerances"]["l_multipliers"]) != s["tolerances"]["l_multipliers"]
    other = tmp_path / "c"
    main(["run", "balance", "--seed", "8", "--duration", "0.12", "--out", str(other)])
    s8 = _summary(other / "balance" / "summary.json")
    assert s8["tolerances"] != s["tolerances"]


def test_existing_output_needs_force(tmp_path):
    assert main(["run", "margins", "--out", str(tmp_path)]) == 0
    assert main(["run", "margins", "--out", str(tmp_path)]) == 2
    assert main(["run", "margins", "--out", str(tmp_path), "--force"]) == 0
    manifest = json.loads((tmp_path / "margins" / "manifest.json").read_text())
    assert len(manifest["run_id"]) == 12


def test_unknown_flag_and_scenario_rejected():
    with pytest.raises(SystemExit) as e:
        main(["run", "margins", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        main(["run", "nonsense"])


def test_help_lists_every_flag():
    text = build_parser()._subparsers._group_actions[0].choices["run"].format_help()
    for flag in ("--config", "--out", "--seed", "--check", "--strict", "--decimate",
                 "--resonant", "--duration", "--force"):
        assert flag in text


def test_report_on_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 0
    assert main(["report", str(tmp_path), "--json"]) == 0
    out = capsys.readouterr().out
    payload = json.loads(out[out.index("{"):])
    assert payload["checks"] == []


def test_report_strict_on_mixed_results(tmp_path):
    for name, passed in (("a", True), ("b", False)):
        d = tmp_path / name
        d.mkdir()
        (d / "summary.json").write_text(json.dumps({"checks": [
            {"criterion": 1 if passed else 4, "name": name, "passed": passed, "detail": ""}]}))
    assert main(["report", str(tmp_path)]) == 0
    assert main(["report", str(tmp_path), "--strict"]) == 1


def test_report_lists_missing_criteria(tmp_path, capsys):
    main(["run", "margins", "--out", str(tmp_path)])
    capsys.readouterr()
    main(["report", str(tmp_path), "--json"])
    payload = json.loads(capsys.readouterr().out)
    assert [c["criterion"] for c in payload["checks"]] == [1, 2, 8]
    assert any("criterion 4" in m for m in payload["missing"])


def test_config_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": {"lvdc_bw": 25.0}}))
    monkeypatch.setenv("SSTSIM_CONFIG", str(cfg))
    assert main(["run", "margins", "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "margins" / "manifest.json").read_text())
    assert manifest["config"] == str(cfg)
    assert manifest["config_resolved"]["system"]["lvdc_bw"] == 25.0


def test_bad_config_exits_two(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"system": {"n_blocks": 0}}))
    assert main(["run", "margins", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sstsim", "run", "margins", "--check",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert r.stdout.count("[PASS]") == 3
