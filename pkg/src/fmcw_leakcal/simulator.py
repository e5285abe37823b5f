"""One-chirp acquisition through the full front end and receive chain.

Signal flow per chirp::

    paths --de-chirp--> rx envelope --+
                                      combiner --(+ LNA-referred noise)--> ADC
    replica program --DDS/DAC-------+            --> decimate --> 16-bit --> FFT

Spectra are referenced to the LNA input, so the combiner's 3 dB loss is
visible and the thermal floor sits at kTB*NF per bin.

The analog side is rendered over a guard interval on both sides of the
acquisition window so the decimation filter is already settled when the
window opens (the beat tones exist before and after the samples kept).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import apply_drift, chirp_rng, noise_floor_dbm, receiver_noise, scenario_to_paths
from .dsp import (Spectrum, adc_sample, decimate, decimator_response, decimator_taps,
                  range_fft)
from .frontend import (ReplicaProgram, TxOffsetSetting, combine, quantize_to_bits,
                       replica_envelope, rf_residual_power_dbm)
from .scenario import Scenario
from .signal_model import PathKind, ToneParams, dechirped_tone, synthesize_beat_signal

DATAPATH_BITS = 16


@dataclass
class Acquisition:
    spectrum: Spectrum
    samples: np.ndarray  # decimated, fixed-point, before windowing
    clipped: bool
    rf_residual_dbm: float
    chirp_index: int


class Simulator:
    """Renders chirps for one scenario.

    Each call to :meth:`acquire` without an explicit ``chirp_index`` draws
    the next index, so repeated measurements see fresh noise while the whole
    sequence stays reproducible from the scenario seed.
    """

    def __init__(self, scenario: Scenario, drift_index: int = 0):
        self.scenario = scenario.validate()
        self.drift_index = drift_index
        self.paths = apply_drift(scenario_to_paths(scenario), drift_index, scenario.drift)
        self.n = scenario.n_samples
        self.fs = scenario.adc.fs
        self.fs_out = scenario.adc.fs_out
        self.n_fft = scenario.n_fft
        self.rbw = scenario.rbw
        # analog samples rendered on each side of the window for the decimator
        self.guard = (len(decimator_taps(scenario.adc.decimation)) - 1) // 2
        self._next_index = 0

    @property
    def noise_floor_dbm(self) -> float:
        """Thermal floor per FFT bin at the LNA input."""
        return noise_floor_dbm(self.scenario.link_budget.nf_db, self.rbw)

    @property
    def t_mid(self) -> float:
        """Time of the centre sample of the decimated record."""
        return (self.n_fft - 1) / (2.0 * self.fs_out)

    def tones(self, tx_offset: TxOffsetSetting, kind: PathKind | None = None) -> list[ToneParams]:
        return [dechirped_tone(p, tx_offset.f_off, self.scenario.chirp, bandwidth=self.fs_out / 2)
                for p in self.paths if kind is None or p.kind == kind]

    def rx_envelope(self, tx_offset: TxOffsetSetting, kind: PathKind | None = None,
                    guard: int = 0) -> np.ndarray:
        """Received envelope over the window, plus ``guard`` samples each side."""
        return synthesize_beat_signal(self.tones(tx_offset, kind), self.fs, self.n + 2 * guard,
                                      start=-guard)

    def replica_envelope(self, program: ReplicaProgram | None, guard: int = 0) -> np.ndarray:
        n = self.n + 2 * guard
        if program is None or not program.tones:
            return np.zeros(n, dtype=complex)
        program.validate(self.scenario.dds)
        env = replica_envelope(program, self.fs, n, self.scenario.dds, start=-guard)
        return env * self.scenario.impairment.factor

    def signal_chain_gain(self, freq: float) -> complex:
        """Known gain from the RX input to the spectrum for a tone at ``freq``."""
        return self.scenario.combiner.signal_gain * decimator_response(
            freq, self.fs, self.scenario.adc.decimation)

    def replica_chain_gain(self, freq: float) -> complex:
        """Known gain from the replica DAC to the spectrum (impairments excluded)."""
        return self.scenario.combiner.replica_gain * decimator_response(
            freq, self.fs, self.scenario.adc.decimation)

    def next_chirp_index(self) -> int:
        idx = self._next_index
        self._next_index += 1
        return idx

    def acquire(self, tx_offset: TxOffsetSetting, program: ReplicaProgram | None = None, *,
                window: str = "rectangular", chirp_index: int | None = None,
                kind: PathKind | None = None, noise: bool | None = None) -> Acquisition:
        s = self.scenario
        idx = self.next_chirp_index() if chirp_index is None else chirp_index
        g = self.guard
        rx = self.rx_envelope(tx_offset, kind, g)
        rep = self.replica_envelope(program, g)
        lna_in = combine(rx, rep, s.combiner)
        if s.noise.enabled if noise is None else noise:
            lna_in = lna_in + receiver_noise(chirp_rng(s.seed, idx), len(lna_in), self.fs,
                                             s.link_budget.nf_db, s.noise.flicker_corner_hz)
        sampled, clipped = adc_sample(lna_in, s.adc)
        dec = decimate(sampled, s.adc.decimation, guard=g)
        dec, _ = quantize_to_bits(dec, DATAPATH_BITS, s.adc.full_scale)
        spec = range_fft(dec, window, self.fs_out,
                         fixed_point=(DATAPATH_BITS, s.adc.full_scale))
        return Acquisition(spectrum=spec, samples=dec, clipped=clipped,
                           rf_residual_dbm=rf_residual_power_dbm(rx[g:g + self.n],
                                                                 rep[g:g + self.n], s.combiner),
                           chirp_index=idx)


def power_dbm(amplitude: complex | float) -> float:
    p = abs(amplitude) ** 2
    return 10.0 * math.log10(p) if p > 0 else float("-inf")
