"""Command-line entry point: ``sstsim run <scenario>`` and ``sstsim report <dir>``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .engine import SimConfig, Trace, run
from .params import ConfigError, ToleranceSpec, config_to_dict, default_config, load_config

CONFIG_ENV = "SSTSIM_CONFIG"
ALL = sc.SCENARIOS + ("all",)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sstsim", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario and write traces, summaries and plot data")
    r.add_argument("scenario", choices=ALL)
    r.add_argument("--config", metavar="PATH",
                   help=f"JSON config (default: ${CONFIG_ENV} if set, else built-in values)")
    r.add_argument("--out", metavar="DIR", default="runs", help="output directory (default: runs)")
    r.add_argument("--seed", type=int, default=0,
                   help="seed for the tolerance-ladder permutation in 'balance' (default 0)")
    r.add_argument("--check", action="store_true",
                   help="exit 1 if any acceptance check of this run fails")
    r.add_argument("--strict", action="store_true", help="same as --check")
    r.add_argument("--decimate", type=int, metavar="N",
                   help="log one frame every N x 10 us (default 10)")
    r.add_argument("--resonant", choices=("on", "off"),
                   help="force the double-line-frequency resonator on or off")
    r.add_argument("--duration", type=float, metavar="S", help="override scenario duration")
    r.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    r.add_argument("--jobs", type=int, default=1, help="parallel scenarios for 'all' (default 1)")

    p = sub.add_parser("report", help="tabulate acceptance checks found under a run directory")
    p.add_argument("run_dir")
    p.add_argument("--strict", action="store_true", help="exit 1 if any check failed")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    return ap


# -- helpers -----------------------------------------------------------------

def _load(path: str | None):
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        return load_config(path), path
    return default_config(), None


def _run_id(cfg: SimConfig, name: str, args: dict) -> str:
    blob = json.dumps({"cfg": dataclasses.asdict(cfg), "scenario": name, "args": args},
                      sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def _json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))
    path.write_text(json.dumps(obj, indent=2, default=default))


def _checks_json(checks: list[sc.Check]) -> list[dict]:
    return [dataclasses.asdict(c) for c in checks]


def _phase_means(trace: Trace, nb: int) -> list[np.ndarray]:
    v = trace.group("vmv")
    return [v[:, p * nb:(p + 1) * nb].mean(1) for p in range(3)]


# -- scenario runners --------------------------------------------------------

def _spec_kw(opts: dict, base) -> dict:
    kw = {"dt_plant": base.dt_plant, "decimate": opts.get("decimate") or base.decimate}
    if opts.get("resonant"):
        kw["resonant_enabled"] = opts["resonant"] == "on"
    return kw


def _with_duration(spec, opts):
    if opts.get("duration") is not None:
        return dataclasses.replace(spec, duration=opts["duration"])
    return spec


def run_scenario(name: str, cfg: SimConfig, base_spec, out: Path, opts: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    nb = cfg.system.n_blocks
    kw = _spec_kw(opts, base_spec)
    checks: list[sc.Check] = []
    summary: dict = {"scenario": name}

    if name == "margins":
        checks, summary = sc.check_margins(cfg)
        resp = summary.pop("_response")
        _write_csv(out / "plot_margins.csv", ["freq_hz", "mag_db", "phase_deg"],
                   [resp.freqs, resp.mag_db, resp.phase_deg])
        _json(out / "margins.json", {k: summary[k] for k in
                                      ("crossover_hz", "phase_margin_deg", "gain_margin_db",
                                       "phase_crossover_hz")})
    elif name == "startup":
        spec = _with_duration(sc.startup_spec(cfg, **kw), opts)
        trace, summary = run(spec, cfg, out)
        checks = sc.startup_checks(trace, summary, cfg)
        v = trace.group("vmv")
        _write_csv(out / "plot_startup.csv",
                   ["t", "v_lv", "vmv_mean", "vmv_min", "vmv_max", "ia", "ib", "ic", "phase"],
                   [trace.col("t"), trace.col("v_lv"), v.mean(1), v.min(1), v.max(1),
                    trace.col("ia"), trace.col("ib"), trace.col("ic"), trace.col("phase")])
    elif name == "load_step":
        spec = _with_duration(sc.load_step_spec(cfg, **kw), opts)
        trace, summary = run(spec, cfg, out)
        checks = sc.load_step_checks(summary, cfg)
        _write_csv(out / "plot_load_steps.csv",
                   ["t", "v_lv", "i_lv", "pgref", "vmv_a", "vmv_b", "vmv_c"],
                   [trace.col("t"), trace.col("v_lv"), trace.col("i_lv"), trace.col("pgref"),
                    *_phase_means(trace, nb)])
    elif name == "balance":
        if cfg.tolerances == ToleranceSpec.nominal(cfg.system.n_modules):
            cfg = sc.with_ladder(cfg, opts.get("seed"))
        spec = _with_duration(sc.balance_spec(cfg, **kw), opts)
        trace, summary = run(spec, cfg, out)
        steady_from = spec.duration - 0.1
        checks, extra = sc.balance_checks(trace, cfg, steady_from, spec.load_profile.steps[0].time)
        summary.update(extra)
        summary["tolerances"] = dataclasses.asdict(cfg.tolerances)
        cols = [c for c in trace.columns if c.startswith(("vmv_", "pdab_"))]
        _write_csv(out / "plot_balance.csv", ["t"] + cols,
                   [trace.col("t")] + [trace.col(c) for c in cols])
    elif name == "ripple":
        modes = [opts["resonant"] == "on"] if opts.get("resonant") else [True, False]
        runs = {}
        for res in modes:
            kw_r = {k: v for k, v in kw.items() if k != "resonant_enabled"}
            spec = _with_duration(sc.ripple_spec(cfg, res, **kw_r), opts)
            tag = "on" if res else "off"
            trace, s = run(spec, cfg, out / tag)
            runs[tag] = (trace, s)
        summary = {"scenario": "ripple",
                   "ripple_120hz_vpp_max": {k: v[1].get("ripple_120hz_vpp_max")
                                            for k, v in runs.items()},
                   "energy_residual_max_pu": max(v[1]["energy_residual_max_pu"]
                                                 for v in runs.values())}
        if set(runs) == {"on", "off"}:
            checks = sc.ripple_ratio_checks(runs["on"][1], runs["off"][1])
        t = next(iter(runs.values()))[0].col("t")
        _write_csv(out / "plot_ripple.csv", ["t"] + [f"vmv_00_{k}" for k in runs],
                   [t] + [v[0].col("vmv_00") for v in runs.values()])
    else:
        raise ValueError(f"unknown scenario {name!r}")

    summary["checks"] = _checks_json(checks)
    _json(out / "summary.json", summary)
    return summary


def _run_one(args_tuple):
    name, cfg, base_spec, out, opts = args_tuple
    return name, run_scenario(name, cfg, base_spec, Path(out), opts)


def cmd_run(ns: argparse.Namespace) -> int:
    try:
        (system, spm, gains, tol, base_spec), cfg_path = _load(ns.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg = SimConfig(system, spm, gains, tol)
    opts = {"seed": ns.seed, "decimate": ns.decimate, "resonant": ns.resonant,
            "duration": ns.duration}
    if ns.decimate is not None and ns.decimate < 1:
        print("--decimate must be >= 1", file=sys.stderr)
        return 2

    root = Path(ns.out)
    target = root / ns.scenario if ns.scenario != "all" else root
    if target.exists() and any(target.iterdir()):
        if not ns.force:
            print(f"{target} exists; pass --force to overwrite", file=sys.stderr)
            return 2
        shutil.rmtree(target)
    target.mkdir(parents=True, exist_ok=True)

    names = list(sc.SCENARIOS) if ns.scenario == "all" else [ns.scenario]
    jobs = [(n, cfg, base_spec, root / n, opts) for n in names]
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(ns.jobs) as ex:
            results = dict(ex.map(_run_one, jobs))
    else:
        results = dict(map(_run_one, jobs))

    checks = [sc.Check(**c) for s in results.values() for c in s["checks"]]
    if ns.scenario == "all":
        det, extra = sc.determinism_check(cfg)
        (root / "determinism").mkdir(exist_ok=True)
        _json(root / "determinism" / "summary.json",
              {"scenario": "determinism", **extra, "checks": _checks_json([det])})
        checks.append(det)
        residuals = _collect_summaries(root)
        checks.append(sc.conservation_check(residuals, cfg))

    manifest = {
        "scenario": ns.scenario, "config": cfg_path, "out": str(root), "seed": ns.seed,
        "run_id": _run_id(cfg, ns.scenario, opts), "options": opts,
        "config_resolved": config_to_dict(system, spm, gains, tol, base_spec),
        "summary": {n: {k: v for k, v in s.items() if k != "checks"}
                    for n, s in results.items()},
    }
    _json(target / "manifest.json", manifest)
    for c in checks:
        print(c.line())
    if (ns.check or ns.strict) and not all(c.passed for c in checks):
        return 1
    return 0


# -- report ------------------------------------------------------------------

def _collect_summaries(root: Path) -> list[dict]:
    out = []
    for p in sorted(root.rglob("summary.json")):
        try:
            s = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if "energy_residual_max_pu" in s and "final" in s:
            out.append(s)
    return out


def build_report(run_dir: Path) -> tuple[list[sc.Check], list[str]]:
    checks: dict[int, sc.Check] = {}
    missing = []
    if not run_dir.exists():
        return [], [f"{run_dir} does not exist"]
    for p in sorted(run_dir.rglob("summary.json")):
        try:
            s = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            missing.append(f"{p}: unreadable ({exc})")
            continue
        for c in s.get("checks", []):
            chk = sc.Check(**c)
            prev = checks.get(chk.criterion)
            if prev is None or (prev.passed and not chk.passed):
                checks[chk.criterion] = chk
    sims = _collect_summaries(run_dir)
    if sims:
        checks[7] = sc.conservation_check(sims, SimConfig.default())
    if checks:
        missing += [f"criterion {k}: no summary found" for k in range(1, 10) if k not in checks]
    return [checks[k] for k in sorted(checks)], missing


def cmd_report(ns: argparse.Namespace) -> int:
    rows, missing = build_report(Path(ns.run_dir))
    if ns.json:
        print(json.dumps({"checks": _checks_json(rows), "missing": missing}, indent=2))
    else:
        print(f"{'#':>2}  {'criterion':<28} {'result':<6} detail")
        for c in rows:
            print(f"{c.criterion:>2}  {c.name:<28} {'PASS' if c.passed else 'FAIL':<6} {c.detail}")
        for m in missing:
            print(f"    missing: {m}")
    if ns.strict and not all(c.passed for c in rows):
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    return cmd_run(ns) if ns.cmd == "run" else cmd_report(ns)


if __name__ == "__main__":
    sys.exit(main())
