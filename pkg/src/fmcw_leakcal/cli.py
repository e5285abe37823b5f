"""Command line front end: ``fmcw-leakcal run|calibrate|sweep|oracle-check``.

Exit codes: 0 success, 2 bad input (schema, flags, missing files),
3 simulation error, 4 calibration error, 5 oracle tolerance breach.
Output files go to ``--out-dir``, else ``$FMCW_LEAKCAL_OUT_DIR``, else the
current directory.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import calibration as cal
from .dsp import Spectrum, WINDOWS, fit_tone_amplitudes
from .errors import CalibrationError, LeakcalError, ScenarioError, SimulationError
from .frontend import ReplicaProgram, TxOffsetSetting
from .scenario import ReplicaImpairment, Scenario, load_scenario
from .signal_model import PathKind, oracle_equivalence, random_oracle_cases
from .simulator import Simulator, power_dbm

EXIT_OK, EXIT_INPUT, EXIT_SIM, EXIT_CAL, EXIT_ORACLE = 0, 2, 3, 4, 5
OUT_DIR_ENV = "FMCW_LEAKCAL_OUT_DIR"
SWEEP_PARAMS = ("leakage_delay", "leakage_coupling", "phase_error", "target_range")
SENTINEL_FLOOR_DBM = -200.0


class UsageError(LeakcalError):
    """Bad flag combination or missing input file (exit 2)."""


# --- output helpers ----------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


def _db_field(x: float):
    """Finite dBm value, or the explicit sentinel for an exact null."""
    x = float(x)
    return x if x > SENTINEL_FLOOR_DBM else f"below {SENTINEL_FLOOR_DBM:g} dBm"


def spectrum_csv(s: Spectrum) -> str:
    p = s.power_dbm
    ph = np.angle(s.bins)
    f = s.freqs
    rows = ["bin,freq_hz,mag_dbm,phase_rad"]
    rows += [f"{k},{_num(f[k])},{_num(p[k])},{_num(ph[k])}" for k in range(s.n)]
    return "\n".join(rows) + "\n"


def trace_csv(trace, header=("value", "metric")) -> str:
    rows = [",".join(header)] + [",".join(_num(v) for v in row) for row in trace]
    return "\n".join(rows) + "\n"


def _write(path: Path, text: str) -> Path:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _dump(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def _out_dir(arg: str | None) -> Path:
    d = Path(arg or os.environ.get(OUT_DIR_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _tones(program: ReplicaProgram) -> list[dict]:
    return [{"freq_hz": float(t.freq), "amp": float(t.amp), "phase_rad": float(t.phase)}
            for t in program.tones]


# --- run ---------------------------------------------------------------------

def _calibrate(sim: Simulator, multipath: bool, cfg: cal.CalibrationConfig):
    return (cal.calibrate_multipath if multipath else cal.calibrate)(sim, cfg)


def _write_calibration(out: Path, result: cal.CalibrationResult, scn: Scenario) -> Path:
    return _write(out / "calibration.yaml", cal.dump_calibration(result, scn.name))


def cmd_run(args) -> int:
    scn = _scenario(args)
    out = _out_dir(args.out_dir)
    sim = Simulator(scn, drift_index=args.chirp_index)
    t0 = time.perf_counter()
    cfg = cal.CalibrationConfig()
    if args.cancel:
        cal_path = Path(args.calibration) if args.calibration else out / "calibration.yaml"
        if args.recalibrate:
            result = _calibrate(sim, len(scn.leakage) > 1, cfg)
            _write_calibration(out, result, scn)
        if not cal_path.exists():
            raise UsageError(f"calibration file '{cal_path}' not found; "
                             "run 'calibrate' first or pass --recalibrate")
        tx, program, doc = cal.load_calibration(cal_path.read_text())
        try:
            program.validate(scn.dds)
        except ValueError as exc:
            raise UsageError(f"calibration file '{cal_path}': {exc}") from None
        leak_freqs = [float(t["freq_hz"]) for t in doc.get("leakage", [])]
        supp, off, on = cal.measure_suppression(sim, tx, program, leak_freqs, cfg,
                                                chirp_index=args.chirp_index)
        acq = sim.acquire(tx, program, window=args.window, chirp_index=args.chirp_index)
        mode = "cancel"
    else:
        tx, program = TxOffsetSetting.zero(), ReplicaProgram()
        acq = sim.acquire(tx, window=args.window, chirp_index=args.chirp_index)
        supp, off, on = [], acq, acq
        mode = "no_cancel"

    _write(out / f"spectrum_{mode}.csv", spectrum_csv(acq.spectrum))
    k = cfg.align_bin
    summary = {
        "scenario": scn.name,
        "mode": mode,
        "window": args.window,
        "chirp_index": args.chirp_index,
        "seed": scn.seed,
        "noise_enabled": scn.noise.enabled,
        "tx_offset_hz": float(tx.f_off),
        "tx_offset_step": tx.step_index,
        "tones": _tones(program),
        "suppression_db": [float(x) for x in supp],
        "residual_bin_dbm": _db_field(on.spectrum.power_dbm[k]),
        "uncancelled_bin_dbm": _db_field(off.spectrum.power_dbm[k]),
        "rf_residual_dbm": _db_field(acq.rf_residual_dbm),
        "noise_floor_dbm": float(sim.noise_floor_dbm),
        "adc_clipped": bool(acq.clipped),
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    _write(out / f"summary_{mode}.yaml", _dump(summary))
    if args.plot:
        from .plotting import plot_spectra
        plot_spectra(out / f"spectrum_{mode}.png", {mode.replace("_", " "): acq.spectrum},
                     sim.noise_floor_dbm, title=scn.name)
    print(f"{scn.name}: wrote spectrum_{mode}.csv and summary_{mode}.yaml to {out}")
    if supp:
        print("suppression_db: " + ", ".join(f"{x:.2f}" for x in supp))
    return EXIT_OK


# --- calibrate ---------------------------------------------------------------

def cmd_calibrate(args) -> int:
    scn = _scenario(args)
    out = _out_dir(args.out_dir)
    if args.max_paths < 1:
        raise UsageError("--max-paths must be at least 1")
    cfg = cal.CalibrationConfig(max_paths=args.max_paths, replica_synthesis=args.replica,
                                chirps_averaged=args.chirps_averaged)
    sim = Simulator(scn, drift_index=args.chirp_index)
    t0 = time.perf_counter()
    result = _calibrate(sim, args.multipath, cfg)
    wall = time.perf_counter() - t0

    _write_calibration(out, result, scn)
    for label, trace in result.step_diagnostics.items():
        _write(out / f"diag_{label}.csv", trace_csv(trace))
    summary = {
        "scenario": scn.name,
        "multipath": bool(args.multipath),
        "replica_synthesis": cfg.replica_synthesis,
        "seed": scn.seed,
        "noise_enabled": scn.noise.enabled,
        "tx_offset_hz": result.tx_offset.f_off,
        "tx_offset_step": result.tx_offset.step_index,
        "leakage_tones": len(result.leakage),
        "leakage_freqs_hz": [float(f) for f in result.leakage_freqs_hz],
        "tones": _tones(result.program),
        "suppression_db": [float(x) for x in result.suppression_db],
        "residual_bin_dbm": _db_field(result.residual_bin_dbm),
        "uncancelled_bin_dbm": _db_field(result.uncancelled_bin_dbm),
        "rf_residual_dbm": _db_field(result.rf_residual_dbm),
        "rf_uncancelled_dbm": _db_field(result.rf_uncancelled_dbm),
        "noise_floor_dbm": float(sim.noise_floor_dbm),
        "wall_time_s": round(wall, 3),
    }
    _write(out / "calibration_summary.yaml", _dump(summary))
    if args.plot:
        _plot_calibration(out, sim, result)
    print(f"{scn.name}: {len(result.leakage)} leakage tone(s), TX offset "
          f"{result.tx_offset.f_off:.3f} Hz, suppression "
          + ", ".join(f"{x:.2f}" for x in result.suppression_db) + " dB")
    return EXIT_OK


def _plot_calibration(out: Path, sim: Simulator, result: cal.CalibrationResult) -> None:
    from .plotting import plot_spectra, plot_trace
    idx = sim.next_chirp_index()
    before = sim.acquire(result.tx_offset, chirp_index=idx).spectrum
    after = sim.acquire(result.tx_offset, result.program, chirp_index=idx).spectrum
    plot_spectra(out / "calibration_spectra.png", {"before": before, "after": after},
                 sim.noise_floor_dbm, title=sim.scenario.name)
    for label, trace in result.step_diagnostics.items():
        if label.startswith("step1"):
            plot_trace(out / f"diag_{label}.png", trace, "TX offset [Hz]",
                       "adjacent-bin ratio", title=label)
        elif label.startswith("step3"):
            plot_trace(out / f"diag_{label}.png", trace, "replica parameter",
                       "residual magnitude", title=label)


# --- sweep -------------------------------------------------------------------

def _with_param(scn: Scenario, param: str, value: float) -> Scenario:
    try:
        return _replace_param(scn, param, value)
    except ValueError as exc:
        if isinstance(exc, (ScenarioError, SimulationError)):
            raise
        raise UsageError(f"{param} = {value!r}: {exc}") from None


def _replace_param(scn: Scenario, param: str, value: float) -> Scenario:
    if param in ("leakage_delay", "leakage_coupling"):
        if not scn.leakage:
            raise UsageError(f"--param {param} needs a scenario with a leakage path")
        first = scn.leakage[0]
        new = (replace(first, delay_s=value) if param == "leakage_delay"
               else replace(first, coupling_db=value))
        return replace(scn, leakage=(new,) + scn.leakage[1:]).validate()
    if param == "target_range":
        if not scn.targets:
            raise UsageError("--param target_range needs a scenario with a target")
        return replace(scn, targets=(replace(scn.targets[0], range_m=value),)
                       + scn.targets[1:]).validate()
    return replace(scn, impairment=replace(scn.impairment, phase_rad=value))


def _target_dbm(sim: Simulator, tx: TxOffsetSetting) -> float:
    """Power of the first target at the RX input, fitted on the received envelope.

    Measured ahead of the ADC: at long range the echo drops below one LSB,
    where undithered quantization would distort a noiseless reading.
    """
    tones = sim.tones(tx, PathKind.TARGET)
    if not tones:
        return float("nan")
    env = sim.rx_envelope(tx, PathKind.TARGET)
    return power_dbm(fit_tone_amplitudes(env, sim.fs, [t.freq for t in tones])[0])


def cmd_sweep(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    scn = _scenario(args)
    out = _out_dir(args.out_dir)
    values = np.linspace(args.start, args.stop, args.steps)
    cfg = cal.CalibrationConfig()
    multipath = len(scn.leakage) > 1
    base = None
    if args.param in ("phase_error", "target_range"):
        # the leakage does not change along these sweeps: calibrate once,
        # with no replica impairment (the calibrator cannot see it)
        base = _calibrate(Simulator(replace(scn, impairment=ReplicaImpairment())),
                          multipath, cfg)
    rows = []
    for v in values:
        s = _with_param(scn, args.param, float(v))
        sim = Simulator(s)
        result = base or _calibrate(sim, multipath, cfg)
        freqs = result.leakage_freqs_hz
        supp, off, on = cal.measure_suppression(sim, result.tx_offset, result.program, freqs,
                                                cfg, chirp_index=0)
        cols = list(freqs) + [t.freq for t in sim.tones(result.tx_offset, PathKind.TARGET)]
        b = fit_tone_amplitudes(off.samples, sim.fs_out, cols)[0]
        a = fit_tone_amplitudes(on.samples, sim.fs_out, cols)[0]
        rows.append((float(v), min(supp), on.spectrum.power_dbm[cfg.align_bin],
                     on.rf_residual_dbm, abs(a) / abs(b), _target_dbm(sim, result.tx_offset)))
    header = ("value", "suppression_db", "residual_bin_dbm", "rf_residual_dbm",
              "relative_residual", "target_rx_dbm")
    name = f"sweep_{args.param}"
    _write(out / f"{name}.csv", trace_csv(rows, header))
    if args.plot:
        from .plotting import plot_sweep
        cols = {h: [r[i] for r in rows] for i, h in enumerate(header) if i}
        plot_sweep(out / f"{name}.png", [r[0] for r in rows], cols, args.param, scn.name)
    print(f"{scn.name}: {len(rows)} sweep points written to {out / (name + '.csv')}")
    return EXIT_OK


# --- oracle-check ------------------------------------------------------------

def cmd_oracle_check(args) -> int:
    if args.cases < 0:
        raise UsageError("--cases must be non-negative")
    if args.cases == 0:
        print("warning: no cases; nothing to check", file=sys.stderr)
        return EXIT_OK
    t0 = time.perf_counter()
    report = oracle_equivalence(random_oracle_cases(args.cases, args.seed))
    status = "PASS" if report.passed else "FAIL"
    print(f"oracle-check: {report.cases} cases, max freq error "
          f"{report.max_freq_err_rbw:.3e} RBW (limit {report.freq_tol_rbw:g}), max phase error "
          f"{report.max_phase_err_rad:.3e} rad (limit {report.phase_tol_rad:g}), "
          f"{time.perf_counter() - t0:.1f} s: {status}")
    return EXIT_OK if report.passed else EXIT_ORACLE


# --- entry point -------------------------------------------------------------

def _scenario(args) -> Scenario:
    scn = load_scenario(args.scenario)
    return scn.with_noise(False) if getattr(args, "noiseless", False) else scn


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmcw-leakcal",
                                description="FMCW leakage-cancellation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, plot=True):
        sp.add_argument("scenario", help="preset name or path to a scenario YAML file")
        sp.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
        sp.add_argument("--noiseless", action="store_true", help="disable receiver noise")
        if plot:
            sp.add_argument("--plot", action="store_true", help="also write PNG figures")

    r = sub.add_parser("run", help="simulate one chirp and write its spectrum")
    common(r)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--cancel", action="store_true", help="apply a stored calibration")
    g.add_argument("--no-cancel", dest="cancel", action="store_false",
                   help="no TX offset, replica off (default)")
    r.add_argument("--window", choices=WINDOWS, default="rectangular")
    r.add_argument("--calibration", help="calibration file (default OUT_DIR/calibration.yaml)")
    r.add_argument("--chirp-index", type=int, default=0,
                   help="chirp number: selects the noise draw and the drift state")
    r.add_argument("--recalibrate", action="store_true",
                   help="with --cancel, calibrate at this chirp index first")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="run the leakage calibration")
    common(c)
    c.add_argument("--multipath", action="store_true", help="greedy multi-tone calibration")
    c.add_argument("--max-paths", type=int, default=3)
    c.add_argument("--replica", choices=cal.SYNTHESIS_MODES, default="pair",
                   help="how off-grid leakage tones are synthesized on the DDS")
    c.add_argument("--chirps-averaged", type=int, default=1)
    c.add_argument("--chirp-index", type=int, default=0, help="drift state to calibrate at")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", help="sweep one scenario parameter")
    common(s)
    s.add_argument("--param", required=True, help="one of " + ", ".join(SWEEP_PARAMS))
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="stop", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", help="compare the envelope model with the passband oracle")
    o.add_argument("--cases", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "sweep" and args.param not in SWEEP_PARAMS:
        print(f"error: unknown sweep parameter '{args.param}' "
              f"(choose from {', '.join(SWEEP_PARAMS)})", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CAL


if __name__ == "__main__":
    sys.exit(main())
