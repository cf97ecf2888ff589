"""Batch command-line front end.

Commands: ``run`` (one scenario), ``table3`` (noise x sensor sweep),
``flightsweep`` (success rate per flight-time budget) and ``vhf-profile``
(pulse detection plus AOA profile on a recorded or synthetic IQ capture).

Exit codes: 0 success, 1 runtime failure, 2 invalid config or arguments.
The output directory defaults to ``$WHALE_RDV_OUT`` when ``--out`` is not
given, else ``./out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import vhf
from .config import ConfigError, config_hash, load_config
from .rng import substream
from .sim_engine import Scenario, run, sweep, write_metrics_csv, write_trace

OUT_ENV = "WHALE_RDV_OUT"
TABLE3_SIGMAS = (0.1, 5.0, 10.0, 15.0)
FLIGHT_BUDGETS_MIN = (5, 10, 15)
FLIGHTSWEEP_RUNS = 40


def _out_dir(arg) -> Path:
    out = Path(arg if arg is not None else os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


class Manifest:
    """``manifest.json``: written when a command starts and finalized when it ends."""

    def __init__(self, out: Path, command: str, seed, chash, outputs):
        self.path = out / "manifest.json"
        self.t0 = time.perf_counter()
        self.data = {"command": command, "config_hash": chash, "seed": seed,
                     "version": __version__, "python": platform.python_version(),
                     "outputs": {k: str(v) for k, v in outputs.items()},
                     "status": "running", "wall_time_s": None}
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finalize(self, status: str, error: str | None = None):
        self.data["status"] = status
        self.data["wall_time_s"] = round(time.perf_counter() - self.t0, 3)
        if error is not None:
            self.data["error"] = error
        self._write()


def _load(path):
    """``(scenario, hash)``; the default scenario when ``path`` is None."""
    if path is None:
        return Scenario(), config_hash({})
    sc, raw = load_config(path)
    return sc, config_hash(raw)


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        sc, chash = _load(args.config)
    except ConfigError as e:
        return _fail(f"invalid config: {e}", 2)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    out = _out_dir(args.out)
    paths = {"trace": out / "trace.jsonl", "metrics": out / "metrics.csv"}
    man = Manifest(out, "run", sc.seed, chash, paths)
    try:
        metrics, events = run(sc)
        write_trace(paths["trace"], events)
        write_metrics_csv(paths["metrics"], metrics)
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 1
        man.finalize("failed", str(e))
        return _fail(str(e), 1)
    man.finalize("ok")
    print(f"rendezvous_success={int(metrics.rendezvous_success)} "
          f"surfacings={len(metrics.surfacings)} out={out}")
    return 0


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return v


def write_rows(path, rows, columns):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


TABLE3_COLUMNS = ("sigma_deg", "mode", "trials", "n_surfacings", "mean_error_m", "std_error_m",
                  "ci99_m", "rel_mean", "rel_std", "rel_ci99", "median_t_min_s", "reinit_count")


def table3_markdown(rows) -> str:
    """Relative error table, one row per noise level, ``mean +/- 99% CI``."""
    lines = ["| Sensor noise std. dev. | Acoustic only | Acoustic + VHF |",
             "|---|---|---|"]
    for s in sorted({r["sigma_deg"] for r in rows}):
        cell = {r["mode"]: f"{r['rel_mean']:.2f} ± {r['rel_ci99']:.2f}"
                for r in rows if r["sigma_deg"] == s}
        lines.append(f"| {s:g}° | {cell.get('acoustic', '')} | {cell.get('acoustic+vhf', '')} |")
    return "\n".join(lines) + "\n"


def run_table3(sc: Scenario, trials: int, workers: int = 1):
    # localization only: the UAV stays on deck
    template = replace(sc, uav=replace(sc.uav, flight_budget=0.0))
    rows = sweep(template, sigmas=TABLE3_SIGMAS, flight_budgets=(0.0,), vhf_modes=(False, True),
                 trials=trials, seed_base=sc.seed, workers=workers)
    for r in rows:
        r["mode"] = "acoustic+vhf" if r["vhf"] else "acoustic"
    return sorted(rows, key=lambda r: (r["vhf"], r["sigma_deg"]))


def _workers():
    return max(1, min(os.cpu_count() or 1, 8))


def cmd_table3(args) -> int:
    try:
        sc, chash = _load(args.config)
    except ConfigError as e:
        return _fail(f"invalid config: {e}", 2)
    if args.trials < 1:
        return _fail("--trials must be >= 1", 2)
    out = _out_dir(args.out)
    paths = {"table": out / "table3.csv", "markdown": out / "table3.md"}
    man = Manifest(out, "table3", sc.seed, chash, paths)
    try:
        rows = run_table3(sc, args.trials, _workers())
        write_rows(paths["table"], rows, TABLE3_COLUMNS)
        paths["markdown"].write_text(table3_markdown(rows))
    except Exception as e:  # noqa: BLE001
        man.finalize("failed", str(e))
        return _fail(str(e), 1)
    man.finalize("ok")
    print(paths["markdown"].read_text(), end="")
    return 0


FLIGHT_COLUMNS = ("flight_budget_min", "flight_budget_s", "trials", "successes", "success_rate")


def run_flightsweep(sc: Scenario, trials: int = FLIGHTSWEEP_RUNS, workers: int = 1):
    rows = sweep(sc, sigmas=(sc.acoustic.sigma_deg,), vhf_modes=(sc.vhf.enabled,),
                 flight_budgets=[60.0 * m for m in FLIGHT_BUDGETS_MIN], trials=trials,
                 seed_base=sc.seed, workers=workers)
    for r in rows:
        r["flight_budget_min"] = r["flight_budget_s"] / 60.0
    return sorted(rows, key=lambda r: r["flight_budget_s"])


def cmd_flightsweep(args) -> int:
    try:
        sc, chash = _load(args.config)
    except ConfigError as e:
        return _fail(f"invalid config: {e}", 2)
    out = _out_dir(args.out)
    paths = {"table": out / "flightsweep.csv"}
    man = Manifest(out, "flightsweep", sc.seed, chash, paths)
    try:
        rows = run_flightsweep(sc, FLIGHTSWEEP_RUNS, _workers())
        write_rows(paths["table"], rows, FLIGHT_COLUMNS)
    except Exception as e:  # noqa: BLE001
        man.finalize("failed", str(e))
        return _fail(str(e), 1)
    man.finalize("ok")
    for r in rows:
        print(f"{r['flight_budget_min']:g} min: {r['successes']}/{r['trials']} "
              f"({100 * r['success_rate']:.1f}%)")
    return 0


def load_iq(path) -> vhf.IQRecord:
    """IQ capture from ``.npz`` with ``samples`` (2, N), ``sample_rate``,
    ``center_freq``, ``orientation_t`` and ``orientation`` (radians)."""
    with np.load(path) as z:
        return vhf.IQRecord(z["samples"], float(z["sample_rate"]), float(z["center_freq"]),
                            z["orientation_t"], z["orientation"])


def vhf_profile(record: vhf.IQRecord, params: vhf.VHFParams):
    """Detect pulses and build the AOA profile.

    Raises:
        ValueError: "no pulses detected" or "aperture incomplete ...".
    """
    pulses = vhf.detect_pulses(record, params)
    if not pulses:
        raise ValueError("no pulses detected")
    return pulses, vhf.compute_aoa_profile(pulses, params)


def cmd_vhf_profile(args) -> int:
    snr_db, phase_noise = args.snr_db, args.phase_noise
    try:
        params = vhf.VHFParams(antenna_separation=args.separation, grid_step=args.grid_step)
        if args.tag is not None:
            pre = vhf.TAG_PRESETS[args.tag]
            if args.separation not in pre["snr_db"]:
                raise ValueError(f"tag preset {args.tag} has no SNR for separation {args.separation:g} m "
                                 f"(have {', '.join(f'{k:g}' for k in sorted(pre['snr_db']))})")
            params = replace(params, frequency=pre["frequency"])
            snr_db, phase_noise = pre["snr_db"][args.separation], pre["phase_noise_std"]
    except ValueError as e:
        return _fail(str(e), 2)
    out = _out_dir(args.out)
    paths = {"profile": out / "profile.csv", "peaks": out / "peaks.json"}
    man = Manifest(out, "vhf-profile", args.seed, None, paths)
    try:
        if args.iq is not None:
            record = load_iq(args.iq)
            params = replace(params, frequency=record.center_freq, sample_rate=record.sample_rate)
        else:
            rng = substream(args.seed, "vhf-profile")
            rot = vhf.uniform_rotation(0.0, 360.0, args.rotation_s)
            # a tag 300 dB under the noise floor is indistinguishable from no tag
            snr_db = -300.0 if args.noise_only else snr_db
            record = vhf.synthesize_iq(args.bearing, rot, params, snr_db, rng,
                                       duration=args.duration, phase_noise_std=phase_noise,
                                       noise_free=args.zero_noise)
        pulses, prof = vhf_profile(record, params)
    except (ValueError, OSError, KeyError) as e:
        man.finalize("failed", str(e))
        return _fail(str(e), 1)
    write_rows(paths["profile"], [{"angle_deg": a, "value": v}
                                  for a, v in zip(prof.angles.tolist(), prof.values.tolist())],
               ("angle_deg", "value"))
    peaks = {"n_pulses": len(pulses),
             "top_peaks": [{"angle_deg": a, "value": round(v, 6)} for a, v in prof.top_peaks]}
    paths["peaks"].write_text(json.dumps(peaks, indent=2) + "\n")
    man.finalize("ok")
    print(f"{len(pulses)} pulses; top peaks (deg): "
          + ", ".join(f"{a:g}" for a, _ in prof.top_peaks))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="whale-rdv", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one scenario")
    r.add_argument("config", help="JSON scenario config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("table3", help="noise x sensor localization sweep")
    t.add_argument("config", nargs="?", default=None, help="JSON scenario config (default scenario if omitted)")
    t.add_argument("--trials", type=int, default=25)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_table3)

    f = sub.add_parser("flightsweep", help="rendezvous success per flight-time budget")
    f.add_argument("config", nargs="?", default=None)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_flightsweep)

    v = sub.add_parser("vhf-profile", help="pulse detection and AOA profile")
    v.add_argument("--iq", default=None, help=".npz IQ capture; synthesizes one when omitted")
    v.add_argument("--bearing", type=float, default=0.0, help="synthetic tag bearing, degrees")
    v.add_argument("--snr-db", type=float, default=25.0)
    v.add_argument("--phase-noise", type=float, default=0.0, help="per-pulse phase error std, rad")
    v.add_argument("--tag", choices=sorted(vhf.TAG_PRESETS), default=None,
                   help="field-trial tag preset; sets frequency, SNR and phase error")
    v.add_argument("--separation", type=float, default=2.0, help="antenna separation, m")
    v.add_argument("--grid-step", type=float, default=1.0, help="degrees")
    v.add_argument("--rotation-s", type=float, default=40.0, help="time for one full UAV turn, s")
    v.add_argument("--duration", type=float, default=None,
                   help="record length, s (default one full turn; shorter leaves the aperture incomplete)")
    v.add_argument("--zero-noise", action="store_true")
    v.add_argument("--noise-only", action="store_true", help="no tag signal at all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_vhf_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
