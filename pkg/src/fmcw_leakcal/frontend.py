"""TX IQ-mixer offset grid, Replica IQ-mixer DAC program, Wilkinson combiner.

The replica mixer modulates the *local* chirp, so a DAC tone program maps
one-to-one onto a de-chirped envelope.  Programs are stored in envelope
terms; the physical DAC plays the conjugate waveform (I, -Q), which is a
fixed wiring choice and invisible here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .signal_model import ToneParams, synthesize_beat_signal

BELOW_FLOOR_DBM = float("-inf")


@dataclass(frozen=True)
class DdsConfig:
    """Phase-accumulator DDS feeding an IQ DAC.

    ``freq_step`` defaults to ``dac_rate / 2**16`` (152.587890625 Hz at
    10 MSps): a 16-bit accumulator whose top bits index ``table_len``
    samples.
    """

    dac_rate: float = 10e6
    table_len: int = 16384
    freq_step: float | None = None
    dac_bits: int = 16
    full_scale: float = 1.0

    def __post_init__(self):
        if self.freq_step is None:
            object.__setattr__(self, "freq_step", self.dac_rate / 2 ** 16)
        if not (self.dac_rate > 0 and self.freq_step > 0 and self.full_scale > 0):
            raise ValueError("dac_rate, freq_step and full_scale must be positive")
        if self.table_len < 2 or self.table_len & (self.table_len - 1):
            raise ValueError("table_len must be a power of two")
        ratio = self.dac_rate / self.freq_step
        bits = round(math.log2(ratio))
        if 2 ** bits != ratio:
            raise ValueError("dac_rate / freq_step must be a power of two")
        if 2 ** bits < self.table_len:
            raise ValueError("accumulator is narrower than the sample table")
        if not 2 <= self.dac_bits <= 32:
            raise ValueError("dac_bits out of range")

    @property
    def accumulator_bits(self) -> int:
        return round(math.log2(self.dac_rate / self.freq_step))


@dataclass(frozen=True)
class TxOffsetSetting:
    step_index: int
    f_off: float

    @classmethod
    def from_index(cls, step_index: int, dds: DdsConfig) -> "TxOffsetSetting":
        return cls(int(step_index), int(step_index) * dds.freq_step)

    @classmethod
    def zero(cls) -> "TxOffsetSetting":
        return cls(0, 0.0)


@dataclass(frozen=True)
class ReplicaProgram:
    tones: tuple[ToneParams, ...] = ()
    inverted: bool = True

    def validate(self, dds: DdsConfig) -> None:
        for tone in self.tones:
            q = tone.freq / dds.freq_step
            if abs(q - round(q)) > 1e-9:
                raise ValueError(f"replica tone {tone.freq!r} Hz is off the DDS grid")
        if sum(t.amp for t in self.tones) > dds.full_scale:
            raise ValueError("replica tone ensemble exceeds DAC full scale")

    def with_tones(self, tones: Sequence[ToneParams]) -> "ReplicaProgram":
        return ReplicaProgram(tuple(tones), self.inverted)


@dataclass(frozen=True)
class CombinerModel:
    """Memoryless, frequency-flat power combiner.

    ``replica_loss_db=None`` means an equal-split Wilkinson (both ports see
    ``insertion_loss_db``).  Setting it separately models an asymmetric
    directional coupler.
    """

    insertion_loss_db: float = 3.01
    isolation_db: float = 30.0
    replica_loss_db: float | None = None

    def __post_init__(self):
        if not self.isolation_db > 0:
            raise ValueError("isolation must be positive")
        if self.replica_loss_db is None:
            if self.insertion_loss_db < 3.0:
                raise ValueError("an equal-split combiner loses at least 3 dB per port")
        elif self.insertion_loss_db < 0 or self.replica_loss_db < 0:
            raise ValueError("port losses must be non-negative")

    @classmethod
    def directional_coupler(cls, coupling_db: float = 10.0,
                            isolation_db: float = 30.0) -> "CombinerModel":
        through = -10.0 * math.log10(1.0 - 10.0 ** (-coupling_db / 10.0))
        return cls(insertion_loss_db=through, isolation_db=isolation_db,
                   replica_loss_db=coupling_db)

    @property
    def signal_gain(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 20.0)

    @property
    def replica_gain(self) -> float:
        loss = self.insertion_loss_db if self.replica_loss_db is None else self.replica_loss_db
        return 10.0 ** (-loss / 20.0)


def quantize_frequency(f_desired: float, dds: DdsConfig) -> TxOffsetSetting:
    """Nearest DDS grid point; exact half-steps round toward zero."""
    if abs(f_desired) >= dds.dac_rate / 2:
        raise ValueError("requested frequency is beyond DAC Nyquist")
    q = f_desired / dds.freq_step
    idx = math.ceil(abs(q) - 0.5)
    return TxOffsetSetting.from_index(idx if q >= 0 else -idx, dds)


def quantize_to_bits(x: np.ndarray, bits: int, full_scale: float) -> tuple[np.ndarray, bool]:
    """Mid-tread quantization of I and Q; full scale maps to the top code.

    Returns the quantized samples and whether any component clipped.
    """
    top = 2 ** (bits - 1) - 1
    lsb = full_scale / top
    re = np.round(x.real / lsb)
    im = np.round(x.imag / lsb)
    clipped = bool(np.any(np.abs(x.real) > full_scale) or np.any(np.abs(x.imag) > full_scale))
    re = np.clip(re, -top - 1, top)
    im = np.clip(im, -top - 1, top)
    return (re + 1j * im) * lsb, clipped


def dds_render(tones: Sequence[ToneParams], dds: DdsConfig, fs: float, n: int,
               start: int = 0) -> np.ndarray:
    """Render tones through per-tone phase accumulators and a quantized DAC.

    The DAC stream at ``dds.dac_rate`` is reconstructed onto the ``fs``
    grid (samples at ``(start + j) / fs``) by linear interpolation.
    """
    acc_bits = dds.accumulator_bits
    modulus = 1 << acc_bits
    shift = acc_bits - int(math.log2(dds.table_len))
    table = np.exp(2j * np.pi * np.arange(dds.table_len) / dds.table_len)
    m0 = int(math.floor(start * dds.dac_rate / fs))
    m1 = int(math.ceil((start + n) * dds.dac_rate / fs)) + 1
    m = np.arange(m0, m1, dtype=np.int64)
    dac = np.zeros(len(m), dtype=complex)
    for tone in tones:
        ftw = int(round(tone.freq / dds.freq_step))
        p0 = int(round(tone.phase / (2.0 * math.pi) * modulus)) % modulus
        acc = (p0 + ftw * m) % modulus
        dac += tone.amp * table[acc >> shift]
    dac, _ = quantize_to_bits(dac, dds.dac_bits, dds.full_scale)
    t_dac = m / dds.dac_rate
    t_out = np.arange(start, start + n) / fs
    return np.interp(t_out, t_dac, dac.real) + 1j * np.interp(t_out, t_dac, dac.imag)


def replica_envelope(prog: ReplicaProgram, fs: float, n: int,
                     dds: DdsConfig | None = None, start: int = 0) -> np.ndarray:
    """Envelope of the replica relative to the local chirp.

    Without ``dds`` the tones are rendered ideally; with it, through the
    quantized DDS/DAC model.
    """
    if dds is None:
        env = synthesize_beat_signal(prog.tones, fs, n, start)
    else:
        env = dds_render(prog.tones, dds, fs, n, start)
    return -env if prog.inverted else env


def combine(rx_env: np.ndarray, replica_env: np.ndarray, c: CombinerModel) -> np.ndarray:
    rx_env = np.asarray(rx_env)
    replica_env = np.asarray(replica_env)
    if rx_env.shape != replica_env.shape:
        raise LengthMismatch(f"combiner ports differ in length: {rx_env.shape} vs {replica_env.shape}")
    return rx_env * c.signal_gain + replica_env * c.replica_gain


def rf_residual_power_dbm(rx_env: np.ndarray, replica_env: np.ndarray, c: CombinerModel) -> float:
    """Mean power at the LNA input; ``-inf`` on exact cancellation."""
    out = combine(rx_env, replica_env, c)
    p = float(np.mean(np.abs(out) ** 2))
    return 10.0 * math.log10(p) if p > 0 else BELOW_FLOOR_DBM
