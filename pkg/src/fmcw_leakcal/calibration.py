"""Four-step leakage calibration and its greedy multi-path extension.

1. Tune the TX offset so the dominant leakage beat lands on ``align_bin``
   (minimum adjacent-bin spill).
2. Read the leakage amplitude and phase from that bin.
3. Drive the replica with the inverted estimate and sweep its phase for the
   smallest residual.
4. Apply both settings and report the suppression.

Leakage is tracked as RX-referred tone estimates at their measured beat
frequencies.  The DAC program is derived from those estimates: the DDS can
only play multiples of its frequency step, so an off-grid leakage tone is
either approximated by the nearest grid tone (``"nearest"``) or synthesized
over the acquisition window from the two grid tones that bracket it
(``"pair"``, least-squares weights).  The nearest-tone replica drifts in
phase against the leakage across the chirp, which leaves a residual whose
spectral skirt falls off only as 1/bin.

Only one tone can be bin-aligned at a time, so additional leakage paths are
estimated off-grid by a joint least-squares tone fit on the residual record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import yaml

from .dsp import (Spectrum, dirichlet_bins, fit_tone_amplitudes, fit_tones, interpolate_peak,
                  local_peaks, spectral_leakage_metric, tone_matrix, bin_reading)
from .errors import (EstimateBelowNoise, NoLeakageFound, PathsTooClose, SchemaError,
                     SweepFailed)
from .frontend import ReplicaProgram, TxOffsetSetting, quantize_frequency
from .signal_model import ToneParams
from .simulator import Simulator, power_dbm

MAX_NUISANCE_TONES = 8
SYNTHESIS_MODES = ("nearest", "pair")


@dataclass(frozen=True)
class CalibrationConfig:
    offset_search_halfwidth: int = 80
    phase_sweep_halfwidth: float = 0.1
    phase_sweep_step: float = 0.005
    max_paths: int = 3
    chirps_averaged: int = 1
    align_bin: int = 1
    # leakage is a short-delay path; peaks above this beat are treated as targets
    leakage_search_max_hz: float = 50e3
    min_separation_rbw: float = 1.0
    coarse_method: str = "dirichlet"
    replica_synthesis: str = "pair"
    amplitude_sweep: bool = False
    amplitude_sweep_halfwidth: float = 0.1
    amplitude_sweep_step: float = 0.005
    refine_passes: int = 2

    def __post_init__(self):
        if self.offset_search_halfwidth < 1 or self.max_paths < 1 or self.chirps_averaged < 1:
            raise ValueError("sweep widths and counts must be positive")
        if not 0 < self.phase_sweep_step < self.phase_sweep_halfwidth:
            raise ValueError("phase_sweep_step must be positive and below the half-width")
        if self.align_bin < 1:
            raise ValueError("align_bin must exclude the DC bin")
        if self.replica_synthesis not in SYNTHESIS_MODES:
            raise ValueError(f"replica_synthesis must be one of {SYNTHESIS_MODES}")
        if self.refine_passes < 0:
            raise ValueError("refine_passes must be non-negative")


@dataclass
class CalibrationResult:
    tx_offset: TxOffsetSetting
    program: ReplicaProgram
    leakage: list[ToneParams]  # RX-referred estimates, phase at the first sample
    suppression_db: list[float]
    residual_bin_dbm: float
    uncancelled_bin_dbm: float
    rf_residual_dbm: float
    rf_uncancelled_dbm: float
    step_diagnostics: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    @property
    def leakage_freqs_hz(self) -> list[float]:
        return [t.freq for t in self.leakage]

    def to_dict(self) -> dict:
        return {
            "tx_offset": {"step_index": self.tx_offset.step_index,
                          "f_off_hz": self.tx_offset.f_off},
            "replica": {"inverted": self.program.inverted,
                        "tones": [_tone_dict(t) for t in self.program.tones]},
            "leakage": [_tone_dict(t) for t in self.leakage],
            "suppression_db": [float(x) for x in self.suppression_db],
            "residual_bin_dbm": float(self.residual_bin_dbm),
            "uncancelled_bin_dbm": float(self.uncancelled_bin_dbm),
            "rf_residual_dbm": float(self.rf_residual_dbm),
            "rf_uncancelled_dbm": float(self.rf_uncancelled_dbm),
        }


def _tone_dict(t: ToneParams) -> dict:
    return {"freq_hz": float(t.freq), "amp": float(t.amp), "phase_rad": float(t.phase)}


def dump_calibration(result: CalibrationResult, scenario_name: str = "") -> str:
    doc = {"scenario": scenario_name, **result.to_dict()}
    return yaml.safe_dump(doc, sort_keys=False)


def load_calibration(text: str) -> tuple[TxOffsetSetting, ReplicaProgram, dict]:
    try:
        doc = yaml.safe_load(text)
        off = doc["tx_offset"]
        rep = doc["replica"]
        tones = tuple(ToneParams(float(t["freq_hz"]), float(t["amp"]), float(t["phase_rad"]))
                      for t in rep["tones"])
        return (TxOffsetSetting(int(off["step_index"]), float(off["f_off_hz"])),
                ReplicaProgram(tones, bool(rep["inverted"])), doc)
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed calibration file: {exc}") from None


# --- replica synthesis -------------------------------------------------------

def replica_tone_for(sim: Simulator, est: ToneParams) -> ToneParams:
    """Nearest-grid DAC tone that reproduces an RX-referred leakage estimate.

    The phase is re-referenced so the replica matches the estimate at the
    centre of the record, which is where a frequency mismatch costs least.
    """
    f_r = quantize_frequency(est.freq, sim.scenario.dds).f_off
    amp = est.amp * abs(sim.signal_chain_gain(est.freq)) / abs(sim.replica_chain_gain(f_r))
    phase = est.phase + 2.0 * math.pi * (est.freq - f_r) * sim.t_mid
    return ToneParams(f_r, amp, phase)


def replica_pair_for(sim: Simulator, est: ToneParams) -> tuple[ToneParams, ...]:
    """Two bracketing grid tones whose sum best matches ``est`` over one record."""
    step = sim.scenario.dds.freq_step
    q = est.freq / step
    if abs(q - round(q)) < 1e-9:
        return (replica_tone_for(sim, est),)
    f1 = math.floor(q) * step
    freqs = [f1, f1 + step]
    want = sim.signal_chain_gain(est.freq) * est.phasor * np.exp(
        2j * np.pi * est.freq / sim.fs_out * np.arange(sim.n_fft))
    e = tone_matrix(freqs, sim.fs_out, sim.n_fft)
    e = e * np.array([sim.replica_chain_gain(f) for f in freqs])[None, :]
    c, *_ = np.linalg.lstsq(e, want, rcond=None)
    return tuple(ToneParams(f, abs(v), float(np.angle(v))) for f, v in zip(freqs, c))


def synthesize_replica(sim: Simulator, estimates: Sequence[ToneParams],
                       cfg: CalibrationConfig) -> ReplicaProgram:
    """DAC program that cancels every tone in ``estimates``."""
    tones: list[ToneParams] = []
    for est in estimates:
        if cfg.replica_synthesis == "nearest":
            tones.append(replica_tone_for(sim, est))
        else:
            tones.extend(replica_pair_for(sim, est))
    return ReplicaProgram(tuple(tones))


# --- helpers -----------------------------------------------------------------

def _leak_band_hi(sim: Simulator, cfg: CalibrationConfig) -> int:
    return min(int(cfg.leakage_search_max_hz / sim.rbw) + 1, sim.n_fft // 2)


def _sweep(values, evaluate: Callable[[float], float]) -> list[tuple[float, float]]:
    return [(float(v), float(evaluate(v))) for v in values]


def _argmin(trace: list[tuple[float, float]], tiebreak=abs) -> float:
    return min(trace, key=lambda vm: (vm[1], tiebreak(vm[0])))[0]


def _rereference(est: ToneParams, freq: float, sim: Simulator) -> ToneParams:
    """Move ``est`` to ``freq`` keeping its phasor at the record centre."""
    phase = est.phase + 2.0 * math.pi * (est.freq - freq) * sim.t_mid
    return ToneParams(freq, est.amp, phase)


def detect_tones(sim: Simulator, x: np.ndarray, fixed: Sequence[float], cfg: CalibrationConfig,
                 max_tones: int = MAX_NUISANCE_TONES) -> tuple[list[float], np.ndarray]:
    """Find tones one at a time on the fit residual, refitting jointly after each.

    Inside the leakage band a peak must clear the noise floor by 6 dB,
    elsewhere by 12 dB.  A candidate whose fit lands within half a bin of
    another tone (found or in ``fixed``) is rejected.
    Returns the fitted frequencies and their complex amplitudes.
    """
    n = len(x)
    fixed = list(fixed)
    floor = sim.noise_floor_dbm
    min_gap = sim.rbw / 2
    freqs: list[float] = []
    rejected: list[float] = []
    amps = np.zeros(0, dtype=complex)
    for _ in range(max_tones):
        c = fit_tone_amplitudes(x, sim.fs_out, freqs + fixed)
        r = x - tone_matrix(freqs + fixed, sim.fs_out, n) @ c if len(c) else x
        spec = Spectrum(np.fft.fft(r) / n, sim.rbw, n)
        p = spec.power_dbm
        best = None
        # peaks next to known tones are still tried: the joint fit below
        # decides whether they are separate tones
        for k in local_peaks(spec, floor + 6.0, lo=1, hi=n,
                             exclude_hz=rejected, exclude_width_hz=min_gap):
            in_band = 0 < spec.freqs[k] <= cfg.leakage_search_max_hz
            if p[k] >= floor + (6.0 if in_band else 12.0):
                best = k
                break
        if best is None:
            break
        f, _ = fit_tones(x, sim.fs_out, freqs + [interpolate_peak(spec, best) * sim.rbw],
                         min_gap, fixed=fixed)
        trial = sorted(float(v) for v in f)
        every = sorted(trial + fixed)
        if any(b - a < min_gap for a, b in zip(every, every[1:])):
            # two tones collapsed onto one; keep the previous fit
            rejected.append(float(spec.freqs[best]))
            continue
        freqs = trial
    if freqs:
        amps = fit_tone_amplitudes(x, sim.fs_out, freqs + fixed)[:len(freqs)]
    return freqs, amps


# --- the four steps ----------------------------------------------------------

def coarse_leakage_frequency(sim: Simulator, cfg: CalibrationConfig | None = None) -> float:
    """Beat frequency of the strongest low-frequency peak with no offset applied."""
    cfg = cfg or CalibrationConfig()
    acq = sim.acquire(TxOffsetSetting.zero())
    peaks = local_peaks(acq.spectrum, sim.noise_floor_dbm + 10.0, lo=1,
                        hi=_leak_band_hi(sim, cfg))
    if not peaks:
        raise NoLeakageFound("no leakage found: no spectral peak 10 dB above the noise floor "
                             f"below {cfg.leakage_search_max_hz:g} Hz")
    return interpolate_peak(acq.spectrum, peaks[0], cfg.coarse_method) * sim.rbw


def step1_tune_tx_offset(sim: Simulator, cfg: CalibrationConfig, coarse_hz: float | None = None,
                         diagnostics: dict | None = None) -> TxOffsetSetting:
    if coarse_hz is None:
        coarse_hz = coarse_leakage_frequency(sim, cfg)
    dds = sim.scenario.dds
    centre = quantize_frequency(coarse_hz - cfg.align_bin * sim.rbw, dds).step_index
    h = cfg.offset_search_halfwidth
    trace = []
    for idx in range(centre - h, centre + h + 1):
        setting = TxOffsetSetting.from_index(idx, dds)
        acq = sim.acquire(setting)
        trace.append((setting.f_off, spectral_leakage_metric(acq.spectrum, cfg.align_bin)))
    metrics = np.array([m for _, m in trace])
    finite = metrics[np.isfinite(metrics)]
    if finite.size == 0 or finite.max() <= finite.min() * (1.0 + 1e-9):
        raise SweepFailed("TX offset sweep is flat; no leakage tone to align")
    if diagnostics is not None:
        diagnostics["step1_tx_offset"] = trace
    return quantize_frequency(_argmin(trace), dds)


def step2_estimate_leakage(sim: Simulator, tx_offset: TxOffsetSetting, cfg: CalibrationConfig,
                           program: ReplicaProgram | None = None) -> ToneParams:
    """RX-referred leakage tone read from the aligned bin.

    The beat frequency comes from a tone fit on the record (the grid-limited
    alignment leaves it slightly off the bin centre); amplitude and phase
    are the bin reading corrected for that offset, the combiner and the
    decimation filter.
    """
    k = cfg.align_bin
    acqs = [sim.acquire(tx_offset, program) for _ in range(cfg.chirps_averaged)]
    c = complex(np.mean([a.spectrum.bins[k] for a in acqs]))
    if power_dbm(c) < sim.noise_floor_dbm + 6.0:
        raise EstimateBelowNoise(f"bin {k} reads {power_dbm(c):.1f} dBm, "
                                 f"within 6 dB of the {sim.noise_floor_dbm:.1f} dBm floor")
    samples = np.mean([a.samples for a in acqs], axis=0)
    found, _ = detect_tones(sim, samples, [], cfg)
    near = [f for f in found if abs(f - k * sim.rbw) <= sim.rbw / 2]
    f = min(near, key=lambda v: abs(v - k * sim.rbw)) if near else k * sim.rbw
    kernel = dirichlet_bins(f / sim.rbw, sim.n_fft)[k]
    g = sim.signal_chain_gain(f) * kernel
    return ToneParams(f, abs(c) / abs(g), float(np.angle(c / g)))


def step3_fine_tune_phase(sim: Simulator, tx_offset: TxOffsetSetting, init: ToneParams,
                          cfg: CalibrationConfig, base: tuple[ToneParams, ...] = (),
                          measure: Callable | None = None,
                          diagnostics: dict | None = None, label: str = "step3_phase"
                          ) -> ToneParams:
    """Sweep the phase of the leakage estimate driving the replica; return the best.

    ``base`` holds estimates already being cancelled.  ``measure(acquisition)
    -> magnitude`` defaults to the aligned bin's magnitude.
    """
    if measure is None:
        measure = lambda acq: abs(acq.spectrum.bins[cfg.align_bin])  # noqa: E731

    def run(est):
        return measure(sim.acquire(tx_offset, synthesize_replica(sim, base + (est,), cfg)))

    uncancelled = measure(sim.acquire(tx_offset, synthesize_replica(sim, base, cfg)))
    n_half = int(round(cfg.phase_sweep_halfwidth / cfg.phase_sweep_step))
    offsets = np.arange(-n_half, n_half + 1) * cfg.phase_sweep_step
    trace = _sweep(offsets, lambda d: run(replace(init, phase=init.phase + d)))
    if all(m > uncancelled for _, m in trace):
        raise SweepFailed("every replica phase increased the leakage; replica misconfigured")
    best = replace(init, phase=init.phase + _argmin(trace))
    if diagnostics is not None:
        diagnostics[label] = [(init.phase + d, m) for d, m in trace]
    if cfg.amplitude_sweep:
        n_a = int(round(cfg.amplitude_sweep_halfwidth / cfg.amplitude_sweep_step))
        scales = 1.0 + np.arange(-n_a, n_a + 1) * cfg.amplitude_sweep_step
        atrace = _sweep(scales, lambda s: run(replace(best, amp=best.amp * s)))
        best = replace(best, amp=best.amp * _argmin(atrace, tiebreak=lambda s: abs(s - 1.0)))
        if diagnostics is not None:
            diagnostics[label.replace("phase", "amplitude")] = atrace
    return best


def measure_suppression(sim: Simulator, tx_offset: TxOffsetSetting, program: ReplicaProgram,
                        leakage_freqs: Sequence[float], cfg: CalibrationConfig,
                        chirp_index: int | None = None):
    """Leakage level with and without the replica, per leakage tone.

    A single tone is read from ``align_bin``; several tones are measured by
    a joint fit that also models any other detected tones.  Returns
    ``(suppression_db, off, on)`` with the two acquisitions.
    """
    off = sim.acquire(tx_offset, chirp_index=chirp_index)
    on = sim.acquire(tx_offset, program, chirp_index=chirp_index)
    if len(leakage_freqs) <= 1:
        before, _ = bin_reading(off.spectrum, cfg.align_bin)
        after, _ = bin_reading(on.spectrum, cfg.align_bin)
        return [before - after], off, on
    freqs = list(leakage_freqs)
    nuis, _ = detect_tones(sim, off.samples, freqs, cfg)
    before = _fit_at(sim, off, freqs, nuis)
    after = _fit_at(sim, on, freqs, nuis)
    return [power_dbm(b) - power_dbm(a) for b, a in zip(before, after)], off, on


def step4_apply_and_report(sim: Simulator, tx_offset: TxOffsetSetting,
                           estimates: list[ToneParams], cfg: CalibrationConfig,
                           diagnostics: dict | None = None) -> CalibrationResult:
    program = synthesize_replica(sim, estimates, cfg)
    supp, off, on = measure_suppression(sim, tx_offset, program,
                                        [e.freq for e in estimates], cfg)
    return CalibrationResult(tx_offset=tx_offset, program=program, leakage=list(estimates),
                             suppression_db=supp,
                             residual_bin_dbm=bin_reading(on.spectrum, cfg.align_bin)[0],
                             uncancelled_bin_dbm=bin_reading(off.spectrum, cfg.align_bin)[0],
                             rf_residual_dbm=on.rf_residual_dbm,
                             rf_uncancelled_dbm=off.rf_residual_dbm,
                             step_diagnostics=diagnostics if diagnostics is not None else {})


def calibrate(sim: Simulator, cfg: CalibrationConfig | None = None) -> CalibrationResult:
    """Single dominant leakage path: steps 1 through 4."""
    cfg = cfg or CalibrationConfig()
    diag: dict = {}
    tx = step1_tune_tx_offset(sim, cfg, diagnostics=diag)
    est = step2_estimate_leakage(sim, tx, cfg)
    est = step3_fine_tune_phase(sim, tx, est, cfg, diagnostics=diag, label="step3_phase_tone0")
    return step4_apply_and_report(sim, tx, [est], cfg, diag)


# --- multi-path --------------------------------------------------------------

def _check_separation(freqs: list[float], sim: Simulator, cfg: CalibrationConfig) -> None:
    limit = cfg.min_separation_rbw * sim.rbw
    fs = sorted(freqs)
    for a, b in zip(fs, fs[1:]):
        if b - a < limit:
            raise PathsTooClose(f"leakage beats at {a:.1f} Hz and {b:.1f} Hz are closer "
                                f"than {limit:.0f} Hz")


def _fit_at(sim: Simulator, acq, freqs: list[float], nuisance: list[float]) -> np.ndarray:
    c = fit_tone_amplitudes(acq.samples, sim.fs_out, list(freqs) + list(nuisance))
    return c[:len(freqs)]


def calibrate_multipath(sim: Simulator, cfg: CalibrationConfig | None = None) -> CalibrationResult:
    """Greedy cancellation of up to ``cfg.max_paths`` leakage tones.

    The strongest tone goes through steps 1-4.  Each further tone is found
    on the residual record, estimated by a joint tone fit, phase-tuned with
    all earlier estimates cancelling, and appended.  With more than one
    tone, refinement passes correct every estimate by its fitted residual.
    """
    cfg = cfg or CalibrationConfig()
    diag: dict = {}
    tx = step1_tune_tx_offset(sim, cfg, diagnostics=diag)
    est = step2_estimate_leakage(sim, tx, cfg)
    ests = [step3_fine_tune_phase(sim, tx, est, cfg, diagnostics=diag,
                                  label="step3_phase_tone0")]

    while len(ests) < cfg.max_paths:
        acq = sim.acquire(tx, synthesize_replica(sim, ests, cfg))
        leak_freqs = [e.freq for e in ests]
        found, amps = detect_tones(sim, acq.samples, leak_freqs, cfg)
        cand = [i for i, f in enumerate(found) if 0 < f <= cfg.leakage_search_max_hz]
        if not cand:
            break
        _check_separation(leak_freqs + [found[i] for i in cand], sim, cfg)
        j = max(cand, key=lambda i: abs(amps[i]))
        f_new = found[j]
        g = sim.signal_chain_gain(f_new)
        init = ToneParams(f_new, abs(amps[j]) / abs(g), float(np.angle(amps[j] / g)))
        columns = leak_freqs + [f for i, f in enumerate(found) if i != j]

        def measure(a, f=f_new, cols=columns):
            return abs(fit_tone_amplitudes(a.samples, sim.fs_out, [f] + cols)[0])

        ests.append(step3_fine_tune_phase(sim, tx, init, cfg, base=tuple(ests), measure=measure,
                                          diagnostics=diag, label=f"step3_phase_tone{len(ests)}"))

    if len(ests) == 1:
        return step4_apply_and_report(sim, tx, ests, cfg, diag)

    # refine all leakage frequencies on an uncancelled record, then correct
    # each estimate by its fitted residual
    off = sim.acquire(tx)
    nuis, _ = detect_tones(sim, off.samples, [e.freq for e in ests], cfg)
    fitted, _ = fit_tones(off.samples, sim.fs_out, [e.freq for e in ests], sim.rbw / 2,
                          fixed=nuis)
    ests = [_rereference(e, float(f), sim) for e, f in zip(ests, fitted)]
    for p in range(cfg.refine_passes):
        freqs = [e.freq for e in ests]
        resid = _fit_at(sim, sim.acquire(tx, synthesize_replica(sim, ests, cfg)), freqs, nuis)
        diag[f"refine_pass{p}"] = [(f, power_dbm(r)) for f, r in zip(freqs, resid)]
        new = []
        for e, r in zip(ests, resid):
            ph = e.phasor + r / sim.signal_chain_gain(e.freq)
            new.append(ToneParams(e.freq, abs(ph), float(np.angle(ph))))
        ests = new

    return step4_apply_and_report(sim, tx, ests, cfg, diag)
