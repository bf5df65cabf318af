"""
Command-line entry point.

    ogradar simulate   [--config FILE] [--set key=value ...] [--out DIR]
    ogradar process    ...
    ogradar iod        ...
    ogradar snr-report ...
    ogradar tle check FILE
    ogradar caf-bench  [--samples N --delays D --dopplers K --repeat R]

The pipeline configuration is one JSON document with ``scenario``,
``processing``, ``iod`` and ``snr_report`` sections; ``--set`` overrides
any dotted key (``--set scenario.duration=60``), parsing the value as
JSON where possible.  Without ``--out`` the run directory is
``$OGRADAR_OUTPUT_ROOT`` (default ``./ogradar-runs``) joined with
``output_dir`` from the config.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime or
data error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .caf import CafConfig, caf_direct, caf_power
from .geo import GeodeticPos
from .iod import UnderdeterminedError
from .orbit import TleError, read_tle_file
from .pipeline import (IodConfig, ProcessingConfig, Capture, PipelineError, process_capture,
                       run_iod, snr_rows, write_capture, write_snr_report)
from .scenario import ScenarioError, default_scenario_dict, scenario_from_dict

log = logging.getLogger("ogradar")

OUTPUT_ROOT_ENV = "OGRADAR_OUTPUT_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
DEFAULT_SENSOR = {"latitude": -16.8, "longitude": 116.670815, "height": 10.0}


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "output_dir": "default",
        "scenario": default_scenario_dict(),
        "processing": {"bandwidth": 100e3, "pfa": 1e-8, "max_range": 1.5e6,
                       "doppler_span": 8000.0, "min_delay_bins": 3, "source": None,
                       "cpi": None, "save_maps": False},
        "iod": {"steps": 30000, "burn_in": 10000, "thin": 2, "chains": 2, "seed": 0,
                "range_bins": 1.0, "doppler_bins": 15.0, "sigma_az": 0.1, "sigma_el": 0.2,
                "horizon": 10800.0, "step": 60.0, "target": None,
                "sensor": DEFAULT_SENSOR, "pass_time": 6000.0},
        "snr_report": {"cpis": [0.25, 1.0], "bandwidth": 50e3},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "scenario":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = _parse_value(value)


def load_config(path: str | None, overrides: list[str]) -> tuple[dict, Path]:
    cfg = default_config()
    base = Path.cwd()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        base = p.parent
        if isinstance(user.get("scenario"), str):
            scen_path = base / user["scenario"]
            if not scen_path.exists():
                raise ConfigError(f"scenario file {scen_path} does not exist")
            user["scenario"] = json.loads(scen_path.read_text())
        cfg = _merge(cfg, user)
    for o in overrides:
        apply_override(cfg, o)
    return cfg, base


def run_dir(cfg: dict, out: str | None) -> Path:
    if out:
        return Path(out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "ogradar-runs"))
    return root / str(cfg.get("output_dir", "default"))


def processing_config(cfg: dict) -> ProcessingConfig:
    try:
        return ProcessingConfig(**cfg["processing"])
    except TypeError as exc:
        raise ConfigError(f"processing section: {exc}") from None


def iod_config(cfg: dict) -> IodConfig:
    d = dict(cfg["iod"])
    sensor = d.pop("sensor", None)
    try:
        return IodConfig(sensor=GeodeticPos(**sensor) if sensor else None, **d)
    except TypeError as exc:
        raise ConfigError(f"iod section: {exc}") from None


# --- subcommands ---------------------------------------------------------------------

def cmd_simulate(args, cfg, base) -> int:
    scenario = scenario_from_dict(cfg["scenario"], base)
    out = run_dir(cfg, args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError(f"cannot create output directory {out}: {exc}") from None
    cap = write_capture(scenario, cfg["scenario"], out)
    print(f"capture written to {cap}")
    return EXIT_OK


def cmd_process(args, cfg, base) -> int:
    out = run_dir(cfg, args.out)
    dets = process_capture(out, processing_config(cfg))
    for name, d in dets.items():
        print(f"{name}: {len(d)} detections")
    return EXIT_OK


def cmd_iod(args, cfg, base) -> int:
    out = run_dir(cfg, args.out)
    res = run_iod(out, iod_config(cfg))
    m = res.posterior.mean
    print(f"posterior mean at t={m.epoch:.1f} s: r = {np.round(m.position, 3)} km, "
          f"v = {np.round(m.velocity, 6)} km/s; R-hat max {np.nanmax(res.rhat):.4f}")
    return EXIT_OK


def cmd_snr_report(args, cfg, base) -> int:
    out = run_dir(cfg, args.out)
    cap = Capture.open(out)
    sec = cfg["snr_report"]
    rows, fractions = [], {}
    for cpi in sec["cpis"]:
        if cpi > cap.cpi + 1e-12:
            log.warning("skipping %.3g s CPI: capture CPI is %.3g s", cpi, cap.cpi)
            continue
        pc = processing_config(cfg)
        pc = ProcessingConfig(**{**pc.__dict__, "bandwidth": float(sec["bandwidth"]), "cpi": cpi})
        pc.validate(cap.cpi)
        rows.extend(snr_rows(cap, cpi, pc, fraction_cache=fractions))
    (out / "snr").mkdir(parents=True, exist_ok=True)
    write_snr_report(out / "snr" / "snr_report.csv", rows)
    for cpi in sorted({r.cpi for r in rows}):
        g = [r.realized_gain for r in rows if r.cpi == cpi]
        print(f"cpi {cpi:g} s: mean realized gain {np.mean(g):.2f} dB over {len(g)} CPIs")
    return EXIT_OK


def cmd_tle_check(args, cfg, base) -> int:
    path = Path(args.file)
    if not path.exists():
        raise PipelineError(f"{path} does not exist")
    tles = read_tle_file(path)
    for t in tles:
        el = t.parsed
        print(f"OK {t.catalog_number:05d} {t.name or '-'}: epoch {el.epoch.isoformat()} "
              f"i={el.inclination:.4f} e={el.eccentricity:.7f} n={el.mean_motion:.8f}")
    return EXIT_OK


def cmd_caf_bench(args, cfg, base) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.samples
    fs = float(n)  # one-second CPI
    ref = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    surv = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    cc = CafConfig(cpi=1.0, max_delay=args.delays / fs, doppler_span=float(args.dopplers),
                   bandwidth=fs)
    timings = {}
    results = {}
    for name, fn in (("fast", caf_power), ("direct", caf_direct)):
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            results[name] = fn(ref, surv, cc)
            best = min(best, time.perf_counter() - t0)
        timings[name] = best
    rel = float(np.max(np.abs(results["fast"] - results["direct"])) / np.max(results["direct"]))
    w = csv.writer(sys.stdout)
    w.writerow(["samples", "delays", "dopplers", "fast_s", "direct_s", "speedup", "max_rel_diff"])
    w.writerow([n, cc.n_delay, cc.n_doppler, f"{timings['fast']:.6f}", f"{timings['direct']:.6f}",
                f"{timings['direct'] / timings['fast']:.2f}", f"{rel:.3e}"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ogradar", description="Passive FM radar pipeline")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def staged(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="pipeline JSON config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (dotted key)")
        sp.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/<output_dir>)")
        sp.set_defaults(func=func)
        return sp

    staged("simulate", cmd_simulate, "synthesize element captures and a truth log")
    staged("process", cmd_process, "channelize, beamform, CAF and detect every CPI")
    staged("iod", cmd_iod, "orbit determination from detections, with prediction errors")
    staged("snr-report", cmd_snr_report, "beam-domain versus map-domain SNR per CPI")

    tle = sub.add_parser("tle", help="TLE utilities")
    tle_sub = tle.add_subparsers(dest="tle_command", required=True)
    chk = tle_sub.add_parser("check", help="validate a TLE file")
    chk.add_argument("file")
    chk.set_defaults(func=cmd_tle_check, config=None, set=[])

    bench = sub.add_parser("caf-bench", help="time the fast CAF against the direct sum")
    bench.add_argument("--samples", type=int, default=10_000)
    bench.add_argument("--delays", type=int, default=256)
    bench.add_argument("--dopplers", type=int, default=64)
    bench.add_argument("--repeat", type=int, default=1)
    bench.add_argument("--seed", type=int, default=0)
    bench.set_defaults(func=cmd_caf_bench, config=None, set=[])
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, base = load_config(args.config, args.set)
        return args.func(args, cfg, base)
    except (ConfigError, ScenarioError, TleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PipelineError, UnderdeterminedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - stable exit code for any runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
