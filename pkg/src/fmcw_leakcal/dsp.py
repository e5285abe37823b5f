"""Receive chain: ADC, decimation, fixed-point rounding, range FFT, bin metrics."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .errors import LengthError
from .frontend import quantize_to_bits

WINDOWS = ("rectangular", "hann")


@dataclass(frozen=True)
class AdcConfig:
    fs: float = 100e6
    bits: int = 16
    full_scale: float = 0.2
    decimation: int = 10

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("ADC rate must be positive")
        if not 8 <= self.bits <= 24:
            raise ValueError("ADC resolution must be within 8..24 bits")
        if self.decimation < 1:
            raise ValueError("decimation factor must be >= 1")
        if not self.full_scale > 0:
            raise ValueError("ADC full scale must be positive")

    @property
    def fs_out(self) -> float:
        return self.fs / self.decimation


@dataclass(frozen=True)
class Spectrum:
    """Normalized complex DFT: a unit-amplitude coherent tone reads 1.0."""

    bins: np.ndarray
    rbw: float
    n: int
    window: str = "rectangular"
    ref_power_dbm: float = 0.0

    @property
    def fs(self) -> float:
        return self.rbw * self.n

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, 1.0 / self.fs)

    @property
    def power_dbm(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(np.abs(self.bins) ** 2) + self.ref_power_dbm


def adc_sample(env: np.ndarray, adc: AdcConfig) -> tuple[np.ndarray, bool]:
    """Quantize I and Q to ``adc.bits``; clipping is flagged, not fatal."""
    return quantize_to_bits(np.asarray(env, dtype=complex), adc.bits, adc.full_scale)


@functools.lru_cache(maxsize=16)
def decimator_taps(factor: int, numtaps: int = 451) -> np.ndarray:
    """Equiripple low-pass: passband 0.4, stopband 0.5 of the output rate.

    DC gain is normalized to exactly one.
    """
    if factor == 1:
        return np.ones(1)
    fs_out = 1.0 / factor
    h = signal.remez(numtaps, [0, 0.4 * fs_out, 0.5 * fs_out, 0.5], [1, 0],
                     weight=[1, 30], fs=1.0)
    h = h / h.sum()
    h.setflags(write=False)
    return h


def decimator_response(freq: float, fs: float, factor: int) -> complex:
    """Zero-phase response of the decimation filter at ``freq`` (input rate ``fs``)."""
    h = decimator_taps(factor)
    j = np.arange(len(h)) - (len(h) - 1) / 2
    return complex(np.dot(h, np.exp(-2j * np.pi * freq / fs * j)))


def decimate(x: np.ndarray, factor: int, guard: int = 0) -> np.ndarray:
    """Anti-alias filter and downsample by ``factor``.

    With ``guard > 0`` the input carries ``guard`` extra samples on each
    side of the record; the centered linear-phase FIR runs over them and
    only the record itself is kept, so there are no edge transients.  The
    guard must cover half the filter length.  Without a guard the record is
    filtered circularly (treated as one period, as the DFT does).  Either
    way tone phases are not delayed.
    """
    x = np.asarray(x)
    n = len(x) - 2 * guard
    if guard < 0 or n <= 0:
        raise LengthError(f"guard {guard} leaves no record in {len(x)} samples")
    if factor < 1 or n % factor:
        raise LengthError(f"decimation factor {factor} does not divide length {n}")
    if factor == 1:
        return x[guard:guard + n].copy()
    h = decimator_taps(factor)
    half = (len(h) - 1) // 2
    if guard:
        if guard < half:
            raise LengthError(f"guard {guard} is shorter than half the filter ({half})")
        y = signal.oaconvolve(x[guard - half:guard + n + half], h, mode="valid")
        return y[::factor]
    if n < len(h):
        raise LengthError("record shorter than the decimation filter")
    kernel = np.zeros(n)
    kernel[:len(h)] = h
    kernel = np.roll(kernel, -half)
    y = np.fft.ifft(np.fft.fft(x) * np.fft.fft(kernel))
    if not np.iscomplexobj(x):
        y = y.real
    return y[::factor]


def window_coefficients(window: str, n: int) -> np.ndarray:
    if window == "rectangular":
        return np.ones(n)
    if window == "hann":
        return signal.get_window("hann", n, fftbins=True)
    raise ValueError(f"unknown window {window!r}; expected one of {WINDOWS}")


def range_fft(x: np.ndarray, window: str = "rectangular", fs: float = 10e6,
              ref_power_dbm: float = 0.0,
              fixed_point: tuple[int, float] | None = None) -> Spectrum:
    """Windowed DFT normalized by the window's coherent gain.

    ``fixed_point=(bits, full_scale)`` rounds the windowed samples before
    the transform, as the hardware data path would.
    """
    x = np.asarray(x, dtype=complex)
    n = len(x)
    w = window_coefficients(window, n)
    xw = x * w
    if fixed_point is not None:
        xw, _ = quantize_to_bits(xw, *fixed_point)
    bins = np.fft.fft(xw) / w.sum()
    return Spectrum(bins=bins, rbw=fs / n, n=n, window=window, ref_power_dbm=ref_power_dbm)


def bin_reading(s: Spectrum, k: int) -> tuple[float, float]:
    """(power in dBm, phase in rad) of bin ``k``."""
    if not 0 <= k < s.n:
        raise IndexError(f"bin {k} outside 0..{s.n - 1}")
    v = s.bins[k]
    p = abs(v) ** 2
    mag = 10.0 * math.log10(p) + s.ref_power_dbm if p > 0 else float("-inf")
    return mag, float(np.angle(v))


def spectral_leakage_metric(s: Spectrum, k: int) -> float:
    """Adjacent-bin energy relative to bin ``k``."""
    if not 1 <= k < s.n - 1:
        raise ValueError("metric needs both neighbours of bin k")
    centre = abs(s.bins[k]) ** 2
    if centre == 0:
        return math.inf
    return float((abs(s.bins[k - 1]) ** 2 + abs(s.bins[k + 1]) ** 2) / centre)


def dirichlet_bins(nu: float, n: int) -> np.ndarray:
    """Normalized DFT of a unit complex tone at fractional bin ``nu``."""
    k = np.arange(n)
    d = nu - k
    out = np.empty(n, dtype=complex)
    den = 1.0 - np.exp(2j * np.pi * d / n)
    exact = np.isclose(np.mod(d, n), 0.0, atol=1e-12) | np.isclose(np.mod(d, n), n, atol=1e-12)
    num = 1.0 - np.exp(2j * np.pi * nu)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:] = num / (n * den)
    out[exact] = 1.0
    return out


def interpolate_peak(s: Spectrum, k: int, method: str = "dirichlet") -> float:
    """Fractional-bin location of the tone peaking at bin ``k``.

    ``"dirichlet"`` inverts the rectangular-window kernel from the complex
    ratio of bin ``k`` and its larger neighbour (exact for one noiseless
    tone).  ``"quadratic"`` fits a parabola to the log magnitudes of bins
    ``k-1, k, k+1``.
    """
    n = s.n
    xm, x0, xp = s.bins[(k - 1) % n], s.bins[k], s.bins[(k + 1) % n]
    if method == "quadratic":
        a, b, c = (math.log(max(abs(v), 1e-300)) for v in (xm, x0, xp))
        den = a - 2.0 * b + c
        return k + (0.5 * (a - c) / den if den != 0 else 0.0)
    if method != "dirichlet":
        raise ValueError(f"unknown interpolation method {method!r}")
    k2 = k + 1 if abs(xp) >= abs(xm) else k - 1
    x2 = xp if k2 == k + 1 else xm
    if x2 == 0 or x0 == 0:
        return float(k)
    r = x0 / x2
    wk = np.exp(-2j * np.pi * k / n)
    w2 = np.exp(-2j * np.pi * k2 / n)
    z = (1.0 - r) / (w2 - r * wk)
    nu = np.angle(z) * n / (2.0 * np.pi)
    # pick the alias nearest to k
    nu += n * round((k - nu) / n)
    return float(nu)


def local_peaks(s: Spectrum, threshold_dbm: float, lo: int = 1, hi: int | None = None,
                exclude_hz: Sequence[float] = (), exclude_width_hz: float = 0.0) -> list[int]:
    """Bins in ``[lo, hi)`` that are local maxima above ``threshold_dbm``, strongest first."""
    hi = s.n if hi is None else hi
    mag = np.abs(s.bins)
    p = s.power_dbm
    freqs = s.freqs
    out = []
    for k in range(max(lo, 0), min(hi, s.n)):
        if k == 0:
            continue
        if p[k] < threshold_dbm:
            continue
        if mag[k] < mag[(k - 1) % s.n] or mag[k] < mag[(k + 1) % s.n]:
            continue
        if any(abs(freqs[k] - f) <= exclude_width_hz for f in exclude_hz):
            continue
        out.append(k)
    out.sort(key=lambda k: -mag[k])
    return out


def tone_matrix(freqs: Sequence[float], fs: float, n: int) -> np.ndarray:
    m = np.arange(n)[:, None]
    return np.exp(2j * np.pi * np.asarray(freqs, dtype=float)[None, :] / fs * m)


def fit_tone_amplitudes(x: np.ndarray, fs: float, freqs: Sequence[float]) -> np.ndarray:
    """Least-squares complex amplitudes (phase referenced to sample 0)."""
    if len(freqs) == 0:
        return np.zeros(0, dtype=complex)
    e = tone_matrix(freqs, fs, len(x))
    c, *_ = np.linalg.lstsq(e, np.asarray(x, dtype=complex), rcond=None)
    return c


def fit_tones(x: np.ndarray, fs: float, freqs0: Sequence[float], span: float,
              fixed: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Joint nonlinear least-squares fit of tone frequencies and amplitudes.

    Frequencies in ``freqs0`` move at most ``span``; tones in ``fixed`` keep
    their frequency but still get an amplitude.  Amplitudes are eliminated
    by linear least squares at every step.  Returns the fitted free
    frequencies and the amplitudes of ``freqs + fixed`` in that order.
    """
    x = np.asarray(x, dtype=complex)
    f0 = np.asarray(freqs0, dtype=float)
    fixed = [float(f) for f in fixed]
    if len(f0) == 0:
        return f0, fit_tone_amplitudes(x, fs, fixed)
    scale = fs / len(x)

    def resid(u):
        e = tone_matrix(list(f0 + u * scale) + fixed, fs, len(x))
        c, *_ = np.linalg.lstsq(e, x, rcond=None)
        r = x - e @ c
        return np.concatenate([r.real, r.imag])

    b = span / scale
    sol = optimize.least_squares(resid, np.zeros(len(f0)), bounds=(-b, b),
                                 x_scale=0.1, xtol=1e-12, ftol=1e-14, gtol=1e-14)
    f = f0 + sol.x * scale
    return f, fit_tone_amplitudes(x, fs, list(f) + fixed)
