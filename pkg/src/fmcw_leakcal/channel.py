"""Link budget: physical scenario to path gains, plus the receiver noise process."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ScenarioError
from .signal_model import SPEED_OF_LIGHT, PathKind, PathResponse, round_trip_delay

if TYPE_CHECKING:
    from .scenario import Scenario

THERMAL_NOISE_DBM_HZ = -174.0


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 10.0
    tx_ant_gain_dbi: float = 0.0
    rx_ant_gain_dbi: float = 0.0
    nf_db: float = 15.0
    carrier_hz: float = 140e9

    def __post_init__(self):
        if self.nf_db < 0:
            raise ValueError("noise figure must be non-negative")
        if not self.carrier_hz > 0:
            raise ValueError("carrier frequency must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class TargetSpec:
    range_m: float
    rcs_dbsm: float

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError("target range must be positive")


@dataclass(frozen=True)
class LeakageSpec:
    delay_s: float
    coupling_db: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("leakage delay must be non-negative")
        if not self.coupling_db < 0:
            raise ValueError("leakage coupling must be negative (dB)")


@dataclass(frozen=True)
class DriftConfig:
    enabled: bool = False
    phase_drift_rad_per_chirp: float = 0.0
    gain_drift_db_per_chirp: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.phase_drift_rad_per_chirp)
                and math.isfinite(self.gain_drift_db_per_chirp)):
            raise ValueError("drift rates must be finite")


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = True
    # 1/f corner of optional baseband flicker noise; 0 disables it
    flicker_corner_hz: float = 0.0

    def __post_init__(self):
        if self.flicker_corner_hz < 0:
            raise ValueError("flicker corner must be non-negative")


def target_received_power(t: TargetSpec, lb: LinkBudget) -> float:
    """Monostatic radar equation, received power in dBm."""
    sigma = 10.0 ** (t.rcs_dbsm / 10.0)
    lam = lb.wavelength
    spread = lam * lam * sigma / ((4.0 * math.pi) ** 3 * t.range_m ** 4)
    return lb.tx_power_dbm + lb.tx_ant_gain_dbi + lb.rx_ant_gain_dbi + 10.0 * math.log10(spread)


def leakage_amplitude(l: LeakageSpec, lb: LinkBudget | None = None) -> float:
    """Amplitude ratio of a coupling path; its RX power is ``tx_power_dbm + coupling_db``."""
    return 10.0 ** (l.coupling_db / 20.0)


def noise_floor_dbm(nf_db: float, bandwidth_hz: float) -> float:
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + nf_db


def scenario_to_paths(s: "Scenario") -> list[PathResponse]:
    """Leakage paths (sorted by delay) followed by target paths (sorted by delay)."""
    leak = [PathResponse(delay=l.delay_s, gain=leakage_amplitude(l, s.link_budget),
                         kind=PathKind.LEAKAGE)
            for l in s.leakage]
    targ = []
    for t in s.targets:
        p_rx = target_received_power(t, s.link_budget)
        gain = 10.0 ** ((p_rx - s.link_budget.tx_power_dbm) / 20.0)
        targ.append(PathResponse(delay=round_trip_delay(t.range_m), gain=gain,
                                 kind=PathKind.TARGET))
    leak.sort(key=lambda p: p.delay)
    targ.sort(key=lambda p: p.delay)
    paths = leak + targ
    delays = [p.delay for p in paths]
    if len(set(delays)) != len(delays):
        raise ScenarioError("two paths share an identical delay; the scenario is ambiguous")
    return paths


def apply_drift(paths: Sequence[PathResponse], chirp_index: int,
                d: DriftConfig) -> list[PathResponse]:
    """Rotate and scale leakage paths linearly with the chirp index."""
    if not d.enabled:
        return list(paths)
    dphi = chirp_index * d.phase_drift_rad_per_chirp
    scale = 10.0 ** (chirp_index * d.gain_drift_db_per_chirp / 20.0)
    return [replace(p, gain=p.gain * scale, phase=p.phase + dphi)
            if p.kind == PathKind.LEAKAGE else p
            for p in paths]


def chirp_rng(seed: int, chirp_index: int) -> np.random.Generator:
    """Independent noise stream per chirp: ``seed XOR chirp_index``."""
    return np.random.default_rng(int(seed) ^ int(chirp_index))


def receiver_noise(rng: np.random.Generator, n: int, fs: float, nf_db: float,
                   flicker_corner_hz: float = 0.0) -> np.ndarray:
    """White complex Gaussian noise of ``kT*NF`` density over ``fs``, in sqrt(mW).

    With a positive ``flicker_corner_hz`` the density is shaped by
    ``1 + fc/|f|`` (|f| floored at one bin) around baseband DC.
    """
    density_mw_hz = 10.0 ** ((THERMAL_NOISE_DBM_HZ + nf_db) / 10.0)
    sigma = math.sqrt(density_mw_hz * fs / 2.0)
    w = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    if flicker_corner_hz > 0:
        f = np.abs(np.fft.fftfreq(n, 1.0 / fs))
        f = np.maximum(f, fs / n)
        w = np.fft.ifft(np.fft.fft(w) * np.sqrt(1.0 + flicker_corner_hz / f))
    return w
