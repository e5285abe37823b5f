"""FMCW chirp, beat-frequency law and the de-chirped complex tone model.

Every signal in the cancellation loop (leakage, echo, replica) is a delayed
copy of the same linear chirp, so after de-chirping against the local chirp
each path collapses to one complex tone.  The simulator never samples the
RF carrier; it renders those tones directly.  :func:`passband_oracle` checks
that shortcut against a brute-force real passband simulation at toy scale.

Envelope convention
-------------------
The de-chirped envelope of a received path is ``local(t) * conj(rx(t))``.
With this choice a positive delay gives a positive beat frequency, and a TX
frequency offset ``f_off`` (applied to the transmitted chirp only) lowers it::

    freq  = k*tau - f_off
    phase = 2*pi*(f_start + f_off)*tau - pi*k*tau**2

Chirp phase
-----------
The transmitted phase is ``2*pi*(f_start*t + k*t**2/2) + phi0`` with
``k = (f_stop - f_start)/t_chirp``, i.e. the instantaneous frequency sweeps
``f_stop - f_start`` over one period.  Writing the quadratic term as
``k*t**2`` (no factor 1/2) would sweep twice the bandwidth; the conventional
reading is used throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .errors import AliasError, OracleResolutionError, ToneOutOfBand

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


def wrap_phase(phase: float) -> float:
    """Map an angle into (-pi, pi]."""
    return math.pi - ((math.pi - phase) % (2.0 * math.pi))


@dataclass(frozen=True)
class ChirpConfig:
    """Linear up-chirp parameters.

    ``amplitude`` is expressed in sqrt(mW) so that an envelope of unit
    magnitude carries 0 dBm.
    """

    f_start: float
    f_stop: float
    t_chirp: float
    amplitude: float = 1.0
    phi0: float = 0.0

    def __post_init__(self):
        if not self.f_stop > self.f_start:
            raise ValueError("f_stop must exceed f_start (up-chirp only)")
        if not self.t_chirp > 0:
            raise ValueError("t_chirp must be positive")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        k = (self.f_stop - self.f_start) / self.t_chirp
        if not (math.isfinite(k) and k > 0):
            raise ValueError("chirp slope must be finite and positive")

    @property
    def bandwidth(self) -> float:
        return self.f_stop - self.f_start


class PathKind(str, enum.Enum):
    LEAKAGE = "leakage"
    TARGET = "target"


@dataclass(frozen=True)
class PathResponse:
    """One propagation path: total TX-to-RX delay and amplitude ratio."""

    delay: float
    gain: float
    kind: PathKind = PathKind.LEAKAGE
    # extra carrier phase rotation (used by the drift model)
    phase: float = 0.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be non-negative")
        if not self.gain > 0:
            raise ValueError("path gain must be positive")


@dataclass(frozen=True)
class ToneParams:
    """Complex CW tone ``amp * exp(i*(2*pi*freq*t + phase))``."""

    freq: float
    amp: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amp < 0:
            raise ValueError("tone amplitude must be non-negative")
        object.__setattr__(self, "freq", float(self.freq))
        object.__setattr__(self, "amp", float(self.amp))
        object.__setattr__(self, "phase", wrap_phase(float(self.phase)))

    @property
    def phasor(self) -> complex:
        return self.amp * complex(math.cos(self.phase), math.sin(self.phase))


def chirp_slope(cfg: ChirpConfig) -> float:
    """Sweep rate ``B / T`` in Hz/s."""
    return (cfg.f_stop - cfg.f_start) / cfg.t_chirp


def beat_frequency(range_m: float, cfg: ChirpConfig) -> float:
    """Beat frequency of a point target at ``range_m`` (round trip)."""
    if range_m < 0:
        raise ValueError("range must be non-negative")
    return 2.0 * range_m * (cfg.f_stop - cfg.f_start) / (SPEED_OF_LIGHT * cfg.t_chirp)


def round_trip_delay(range_m: float) -> float:
    return 2.0 * range_m / SPEED_OF_LIGHT


def dechirped_tone(path: PathResponse, f_off: float, cfg: ChirpConfig,
                   bandwidth: float | None = None) -> ToneParams:
    """Complex tone produced by ``path`` after de-chirping.

    ``f_off`` is the TX IQ-mixer offset; the local chirp is never offset.
    If ``bandwidth`` is given, tones with ``|freq| > bandwidth`` raise
    :class:`ToneOutOfBand`.
    """
    k = chirp_slope(cfg)
    tau = path.delay
    freq = k * tau - f_off
    if bandwidth is not None and abs(freq) > bandwidth:
        raise ToneOutOfBand(
            f"beat tone at {freq:.6g} Hz exceeds receive bandwidth {bandwidth:.6g} Hz")
    phase = 2.0 * math.pi * (cfg.f_start + f_off) * tau - math.pi * k * tau * tau
    return ToneParams(freq=freq, amp=path.gain * cfg.amplitude, phase=phase + path.phase)


def synthesize_beat_signal(tones: Sequence[ToneParams], fs: float, n: int,
                           start: int = 0) -> np.ndarray:
    """Render a tone list to ``n`` complex samples at rate ``fs``.

    Sample ``j`` of the output is taken at time ``(start + j) / fs``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    m = np.arange(start, start + n)
    out = np.zeros(n, dtype=complex)
    for tone in tones:
        if abs(tone.freq) >= fs / 2:
            raise AliasError(f"tone at {tone.freq:.6g} Hz aliases at fs={fs:.6g} Hz")
        out += tone.amp * np.exp(1j * (2.0 * np.pi * tone.freq / fs * m + tone.phase))
    return out


def _fit_single_tone(y: np.ndarray, t: np.ndarray, fs: float) -> tuple[float, complex]:
    """Frequency and complex amplitude of the dominant tone in ``y``."""
    pad = 16 * len(y)
    spec = np.abs(np.fft.fft(y, pad))
    freqs = np.fft.fftfreq(pad, 1.0 / fs)
    f0 = freqs[int(np.argmax(spec))]
    df = fs / pad

    def neg_power(f):
        return -abs(np.dot(y, np.exp(-2j * np.pi * f * t)))

    res = optimize.minimize_scalar(neg_power, bounds=(f0 - df, f0 + df),
                                   method="bounded", options={"xatol": 1e-9 * fs})
    f_hat = float(res.x)
    proj = np.dot(y, np.exp(-2j * np.pi * f_hat * t)) / len(y)
    return f_hat, complex(proj)


def passband_oracle(cfg_toy: ChirpConfig, path: PathResponse, f_off: float,
                    fs_high: float) -> ToneParams:
    """Measure the de-chirped tone by brute-force real passband simulation.

    The transmitted chirp (single-sideband shifted by ``f_off``) is sampled
    as a real signal, delayed analytically, mixed with the in-phase and
    quadrature local chirp, low-pass filtered and fitted with one complex
    tone.  Intended for toy parameters (MHz carriers, ms chirps).
    """
    if fs_high < 20.0 * cfg_toy.f_stop:
        raise OracleResolutionError("fs_high must be at least 20 * f_stop")
    k = chirp_slope(cfg_toy)
    cutoff = cfg_toy.f_start / 2.0
    numtaps = 2 * int(4.0 * fs_high / cfg_toy.f_start) + 1
    taps = signal.firwin(numtaps, cutoff, fs=fs_high, window=("kaiser", 12.0))
    guard = (numtaps - 1) // 2
    n = int(round(cfg_toy.t_chirp * fs_high))
    t = np.arange(-guard, n + guard) / fs_high

    def tx_phase(tt):
        # SSB offset from the TX IQ-mixer rides on the chirp phase
        return (2.0 * np.pi * (cfg_toy.f_start * tt + 0.5 * k * tt * tt)
                + 2.0 * np.pi * f_off * tt + cfg_toy.phi0)

    lo_phase = 2.0 * np.pi * (cfg_toy.f_start * t + 0.5 * k * t * t) + cfg_toy.phi0
    rx = path.gain * cfg_toy.amplitude * np.cos(tx_phase(t - path.delay) - path.phase)
    i_mix = signal.fftconvolve(rx * np.cos(lo_phase), taps, mode="valid")
    q_mix = signal.fftconvolve(rx * np.sin(lo_phase), taps, mode="valid")
    env = 2.0 * (i_mix + 1j * q_mix)

    step = max(1, int(fs_high // (8.0 * cutoff)))
    y = env[::step]
    ty = np.arange(len(env))[::step] / fs_high
    f_hat, proj = _fit_single_tone(y, ty, fs_high / step)
    if abs(f_hat) >= cutoff / 2 or abs(proj) == 0.0:
        raise OracleResolutionError(
            f"measured tone at {f_hat:.6g} Hz is outside the oracle passband")
    return ToneParams(freq=f_hat, amp=abs(proj), phase=float(np.angle(proj)))


@dataclass(frozen=True)
class OracleCase:
    cfg: ChirpConfig
    path: PathResponse
    f_off: float


@dataclass(frozen=True)
class OracleReport:
    cases: int
    max_freq_err_rbw: float
    max_phase_err_rad: float
    freq_tol_rbw: float = 1e-2
    phase_tol_rad: float = 1e-2

    @property
    def passed(self) -> bool:
        return (self.max_freq_err_rbw < self.freq_tol_rbw
                and self.max_phase_err_rad < self.phase_tol_rad)


def random_oracle_cases(n: int, seed: int = 0) -> list[OracleCase]:
    """Toy-scale instances: ~1 MHz carrier, ~100 kHz sweep over 10 ms."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        f_start = float(rng.uniform(0.8e6, 1.2e6))
        cfg = ChirpConfig(f_start, f_start + float(rng.uniform(50e3, 150e3)), 10e-3,
                          phi0=float(rng.uniform(-math.pi, math.pi)))
        path = PathResponse(float(rng.uniform(1e-6, 3e-5)), float(rng.uniform(0.2, 1.0)))
        out.append(OracleCase(cfg, path, float(rng.uniform(-300.0, 300.0))))
    return out


def oracle_equivalence(cases: Sequence[OracleCase]) -> OracleReport:
    """Compare the envelope model with :func:`passband_oracle` case by case.

    Frequency error is expressed in units of the toy RBW (``1/t_chirp``).
    """
    # looked up at call time so a patched model is what gets checked
    model = globals()["dechirped_tone"]
    f_err, p_err = 0.0, 0.0
    for case in cases:
        fs_high = 20.0 * case.cfg.f_stop
        meas = passband_oracle(case.cfg, case.path, case.f_off, fs_high)
        want = model(case.path, case.f_off, case.cfg)
        f_err = max(f_err, abs(meas.freq - want.freq) * case.cfg.t_chirp)
        p_err = max(p_err, abs(wrap_phase(meas.phase - want.phase)))
    return OracleReport(len(cases), f_err, p_err)
