"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line measurement; conftest prints a PASS/FAIL line
per criterion at the end of the session.
"""

import math
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
import yaml

from fmcw_leakcal import cli
from fmcw_leakcal.channel import LeakageSpec
from fmcw_leakcal.dsp import dirichlet_bins, range_fft
from fmcw_leakcal.frontend import CombinerModel, DdsConfig, TxOffsetSetting, quantize_frequency
from fmcw_leakcal.frontend import rf_residual_power_dbm
from fmcw_leakcal.scenario import load_scenario
from fmcw_leakcal.signal_model import PathKind, ToneParams, synthesize_beat_signal
from fmcw_leakcal.simulator import Simulator

import oracles


def run(*argv):
    return cli.main([str(a) for a in argv])


def load(path):
    return yaml.safe_load(path.read_text())


@pytest.mark.criterion("Headline suppression")
def test_headline_suppression(tmp_path, record_property):
    results = {}
    for label, extra in (("noisy", []), ("noiseless", ["--noiseless"])):
        out = tmp_path / label
        t0 = time.perf_counter()
        code = run("calibrate", "paper_10cm", "--out-dir", out, *extra)
        wall = time.perf_counter() - t0
        s = load(out / "calibration_summary.yaml") if code == 0 else {"suppression_db": [-1.0]}
        results[label] = (code, s["suppression_db"][0], wall)
    record_property("detail", ", ".join(f"{k} {v[1]:.1f} dB in {v[2]:.1f} s"
                                        for k, v in results.items()) + " (need >= 20 dB, < 60 s)")
    for code, supp, wall in results.values():
        assert code == 0 and supp >= 20.0 and wall < 60.0


@pytest.mark.criterion("Target recovery")
def test_target_recovery(tmp_path, record_property):
    scn = load_scenario("paper_20cm")
    sim = Simulator(scn)
    zero = TxOffsetSetting.zero()
    kb = int(round(sim.tones(zero, PathKind.TARGET)[0].freq / sim.rbw))
    target_only = sim.acquire(zero, kind=PathKind.TARGET, noise=False).spectrum.power_dbm[kb]
    skirt = sim.acquire(zero, kind=PathKind.LEAKAGE, noise=False).spectrum.power_dbm[kb]

    assert run("calibrate", "paper_20cm", "--out-dir", tmp_path) == 0
    assert run("run", "paper_20cm", "--cancel", "--out-dir", tmp_path) == 0
    tx = load(tmp_path / "calibration.yaml")["tx_offset"]
    tx = TxOffsetSetting(tx["step_index"], tx["f_off_hz"])
    ka = int(round(sim.tones(tx, PathKind.TARGET)[0].freq / sim.rbw))
    rows = (tmp_path / "spectrum_cancel.csv").read_text().splitlines()[1:]
    p = np.array([float(r.split(",")[2]) for r in rows])
    floor = float(np.median([p[k] for k in range(ka - 5, ka + 6) if k != ka]))
    margin = p[ka] - floor
    record_property("detail", f"before: target {target_only:.1f} dBm under skirt {skirt:.1f} dBm "
                              f"at bin {kb}; after: bin {ka} {margin:.1f} dB above the "
                              "median of bins k-5..k+5 (need >= 6 dB)")
    assert target_only <= skirt
    assert margin >= 6.0


@pytest.mark.criterion("Oracle equivalence")
def test_oracle_equivalence(capsys, record_property):
    t0 = time.perf_counter()
    code = run("oracle-check", "--cases", "20")
    wall = time.perf_counter() - t0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    record_property("detail", f"{line.split(': ', 1)[-1]} (need < 30 s)")
    assert code == 0 and wall < 30.0


@pytest.mark.criterion("Residual law")
def test_residual_law(record_property):
    comb = CombinerModel()
    x = synthesize_beat_signal([ToneParams(12340.0, 10 ** -1.5, 0.7)], 100e6, 10000)
    base = 10 ** (rf_residual_power_dbm(x, np.zeros_like(x), comb) / 20)
    grid = np.linspace(-0.3, 0.3, 13)
    worst = 0.0
    for eps in grid:
        for delta in grid:
            rep = -(1 + eps) * np.exp(1j * delta) * x
            got = 10 ** (rf_residual_power_dbm(x, rep, comb) / 20) / base
            a = 1 + eps
            want = math.sqrt((1 - a * math.cos(delta)) ** 2 + (a * math.sin(delta)) ** 2)
            if want == 0:
                assert got == 0
                continue
            worst = max(worst, abs(got / want - 1))
    record_property("detail", f"13x13 grid, worst relative error {worst:.2e} (need < 1e-6)")
    assert worst < 1e-6


@pytest.mark.criterion("Coherent-sampling suite")
def test_coherent_sampling(paper10, record_property):
    n = 1000
    m = np.arange(n)
    s = range_fft(np.exp(2j * np.pi * 7 * m / n), fs=10e6)
    e = np.abs(s.bins) ** 2
    frac_dsp = e[7] / e.sum()
    # the full receive chain with the leakage exactly on bin 1
    scn = replace(paper10, targets=(), leakage=(LeakageSpec(100e-12, -30.0),)).with_noise(False)
    e = np.abs(Simulator(scn).acquire(TxOffsetSetting.zero()).spectrum.bins) ** 2
    frac_chain = e[1] / e.sum()
    half = range_fft(np.exp(2j * np.pi * 3.5 * m / n), fs=10e6).bins
    d = dirichlet_bins(3.5, n)
    kernel_err = float(np.max(np.abs(half - d) / np.abs(d)))
    rng = np.random.default_rng(1)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    sp = range_fft(x, fs=10e6).bins
    parseval = abs(np.sum(np.abs(x) ** 2) / (n * np.sum(np.abs(sp) ** 2)) - 1)
    record_property("detail", f"one-bin energy {frac_dsp:.8f} (dsp) / {frac_chain:.8f} (chain), "
                              f"half-bin kernel error {kernel_err:.1e}, Parseval {parseval:.1e}")
    assert frac_dsp >= 0.9999 and frac_chain >= 0.9999
    assert kernel_err < 1e-6
    assert parseval < 1e-9


@pytest.mark.criterion("Combiner loss")
def test_combiner_loss(paper10, record_property):
    # leakage on bin 1, replica off: the spectrum is referred to the LNA input
    scn = replace(paper10, targets=(), leakage=(LeakageSpec(100e-12, -30.0),)).with_noise(False)
    sim = Simulator(scn)
    acq = sim.acquire(TxOffsetSetting.zero())
    rx_dbm = 10.0 + -30.0
    loss_bin = rx_dbm - acq.spectrum.power_dbm[1]
    loss_rf = rx_dbm - acq.rf_residual_dbm
    record_property("detail", f"bin-1 loss {loss_bin:.4f} dB, RF loss {loss_rf:.4f} dB "
                              "(need 3.01 +- 0.01 dB)")
    assert abs(loss_bin - 3.01) <= 0.01
    assert abs(loss_rf - 3.01) <= 0.01


@pytest.mark.criterion("DDS grid")
def test_dds_grid(record_property):
    dds = DdsConfig()
    step = Fraction(dds.freq_step)
    q = quantize_frequency(oracles.DDS_STEP_HZ, dds)
    delay = step / Fraction(10 ** 14)
    record_property("detail", f"step {float(step)!r} Hz, delay step {float(delay) * 1e12!r} ps")
    assert step == Fraction(152587890625, 10 ** 9)
    assert q.step_index == 1 and Fraction(q.f_off) == step
    assert delay == Fraction("1.52587890625e-12")
    assert round(float(delay) * 1e12, 4) == 1.5259


@pytest.mark.criterion("Multipath")
def test_multipath(tmp_path, record_property):
    code = run("calibrate", "array_3path", "--multipath", "--out-dir", tmp_path)
    s = load(tmp_path / "calibration_summary.yaml") if code == 0 else {}
    supp = s.get("suppression_db", [])
    record_property("detail", f"{s.get('leakage_tones', 0)} tones at "
                              f"{[round(f) for f in s.get('leakage_freqs_hz', [])]} Hz, "
                              f"suppression {[round(x, 1) for x in supp]} dB (need each >= 20)")
    assert code == 0 and len(supp) == 3
    assert min(supp) >= 20.0


@pytest.mark.criterion("Determinism")
def test_determinism(tmp_path, record_property):
    def session(out):
        assert run("run", "paper_10cm", "--out-dir", out) == 0
        assert run("calibrate", "paper_10cm", "--out-dir", out) == 0
        assert run("run", "paper_10cm", "--cancel", "--out-dir", out) == 0
        assert run("calibrate", "array_3path", "--multipath", "--out-dir", out / "mp") == 0
        assert run("sweep", "paper_10cm", "--param", "phase_error", "--from", "-0.1",
                   "--to", "0.1", "--steps", "3", "--out-dir", out) == 0

    a, b = tmp_path / "a", tmp_path / "b"
    session(a)
    session(b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same, differ = [], []
    for rel in files:
        x, y = (a / rel).read_bytes(), (b / rel).read_bytes()
        if rel.suffix == ".yaml" and "summary" in rel.name:
            # wall-clock time is the one field allowed to differ
            dx, dy = yaml.safe_load(x), yaml.safe_load(y)
            dx.pop("wall_time_s"), dy.pop("wall_time_s")
            ok = dx == dy
        else:
            ok = x == y
        (same if ok else differ).append(str(rel))
    record_property("detail", f"{len(same)}/{len(files)} output files identical"
                              + (f"; differ: {differ}" if differ else ""))
    assert not differ and len(files) >= 8
