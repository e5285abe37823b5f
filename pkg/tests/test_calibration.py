import math
from dataclasses import replace

import numpy as np
import pytest

from fmcw_leakcal import calibration as cal
from fmcw_leakcal.channel import DriftConfig, LeakageSpec
from fmcw_leakcal.dsp import dirichlet_bins, fit_tone_amplitudes, spectral_leakage_metric
from fmcw_leakcal.errors import (EstimateBelowNoise, NoLeakageFound, PathsTooClose, SchemaError,
                                 SweepFailed)
from fmcw_leakcal.frontend import ReplicaProgram, TxOffsetSetting
from fmcw_leakcal.scenario import load_scenario
from fmcw_leakcal.signal_model import PathKind, ToneParams, wrap_phase
from fmcw_leakcal.simulator import Simulator, power_dbm

CFG = cal.CalibrationConfig()


def leak_only(scn, noise=False, leakage=None):
    s = replace(scn, targets=()).with_noise(noise)
    return s if leakage is None else replace(s, leakage=tuple(leakage))


@pytest.fixture(scope="module")
def quiet10(paper10):
    return leak_only(paper10)


def test_config_checks():
    with pytest.raises(ValueError):
        cal.CalibrationConfig(phase_sweep_step=0.2)
    with pytest.raises(ValueError):
        cal.CalibrationConfig(max_paths=0)
    with pytest.raises(ValueError):
        cal.CalibrationConfig(replica_synthesis="exact")
    with pytest.raises(ValueError):
        cal.CalibrationConfig(align_bin=0)


# --- coarse and step 1 --------------------------------------------------------

def test_coarse_exact_bin(quiet10):
    sim = Simulator(replace(quiet10, leakage=(LeakageSpec(200e-12, -30.0),)))
    assert cal.coarse_leakage_frequency(sim) == pytest.approx(20e3, abs=1.0)


def test_coarse_default(paper10):
    assert cal.coarse_leakage_frequency(Simulator(paper10)) == pytest.approx(12340.0, abs=100.0)


def test_coarse_no_leakage():
    with pytest.raises(NoLeakageFound):
        cal.coarse_leakage_frequency(Simulator(load_scenario("no_leakage")))


def test_step1_default(paper10):
    sim = Simulator(paper10)
    diag = {}
    tx = cal.step1_tune_tx_offset(sim, CFG, diagnostics=diag)
    assert abs(tx.f_off - 2340.0) <= sim.scenario.dds.freq_step
    trace = diag["step1_tx_offset"]
    assert len(trace) == 2 * CFG.offset_search_halfwidth + 1
    chosen = dict(trace)[tx.f_off]
    assert all(chosen < m for f, m in trace if f != tx.f_off)


def test_step1_already_aligned(quiet10):
    sim = Simulator(replace(quiet10, leakage=(LeakageSpec(100e-12, -30.0),)))
    assert cal.step1_tune_tx_offset(sim, CFG) == TxOffsetSetting(0, 0.0)


@pytest.mark.parametrize("coupling", [-20.0, -40.0, -50.0])
def test_step1_scale_invariant(quiet10, coupling):
    ref = cal.step1_tune_tx_offset(Simulator(quiet10), CFG)
    s = replace(quiet10, leakage=(LeakageSpec(123.4e-12, coupling),))
    assert cal.step1_tune_tx_offset(Simulator(s), CFG) == ref


def test_step1_flat_metric():
    sim = Simulator(load_scenario("no_leakage").with_noise(False))
    with pytest.raises(SweepFailed):
        cal.step1_tune_tx_offset(sim, CFG, coarse_hz=12e3)


# --- step 2 -------------------------------------------------------------------

def test_step2_noiseless_matches_ground_truth(quiet10):
    sim = Simulator(quiet10)
    tx = cal.step1_tune_tx_offset(sim, CFG)
    est = cal.step2_estimate_leakage(sim, tx, CFG)
    truth = sim.tones(tx)[0]
    assert est.amp == pytest.approx(truth.amp, rel=1e-4)
    assert abs(wrap_phase(est.phase - truth.phase)) < 1e-3
    assert est.freq == pytest.approx(truth.freq, rel=1e-4)


def test_step2_exact_bin(quiet10):
    sim = Simulator(replace(quiet10, leakage=(LeakageSpec(100e-12, -30.0),)))
    est = cal.step2_estimate_leakage(sim, TxOffsetSetting.zero(), CFG)
    truth = sim.tones(TxOffsetSetting.zero())[0]
    assert est.freq == pytest.approx(10e3, abs=0.01)
    assert est.amp == pytest.approx(truth.amp, rel=1e-4)
    assert abs(wrap_phase(est.phase - truth.phase)) < 1e-3


def test_step2_phase_spread_with_noise(paper10):
    sim = Simulator(leak_only(paper10, noise=True))
    tx = cal.step1_tune_tx_offset(sim, CFG)
    phases = np.array([cal.step2_estimate_leakage(sim, tx, CFG).phase for _ in range(100)])
    assert np.std(phases) < 0.01


def test_step2_sees_residual_when_replica_on(quiet10):
    sim = Simulator(quiet10)
    tx = cal.step1_tune_tx_offset(sim, CFG)
    est = cal.step2_estimate_leakage(sim, tx, CFG)
    prog = cal.synthesize_replica(sim, [replace(est, amp=0.5 * est.amp)], CFG)
    again = cal.step2_estimate_leakage(sim, tx, CFG, prog)
    assert again.amp == pytest.approx(0.5 * est.amp, rel=1e-3)


def test_step2_below_noise():
    sim = Simulator(load_scenario("no_leakage"))
    with pytest.raises(EstimateBelowNoise):
        cal.step2_estimate_leakage(sim, TxOffsetSetting.zero(), CFG)


# --- step 3 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def aligned(quiet10):
    sim = Simulator(quiet10)
    tx = cal.step1_tune_tx_offset(sim, CFG)
    return sim, tx, cal.step2_estimate_leakage(sim, tx, CFG)


def test_step3_finds_true_phase(aligned):
    sim, tx, est = aligned
    truth = sim.tones(tx)[0]
    start = replace(truth, phase=truth.phase + 0.0321)
    best = cal.step3_fine_tune_phase(sim, tx, start, CFG)
    assert abs(wrap_phase(best.phase - truth.phase)) <= CFG.phase_sweep_step
    residual = abs(sim.acquire(tx, cal.synthesize_replica(sim, [best], CFG)).spectrum.bins[1])
    raw = abs(sim.acquire(tx).spectrum.bins[1])
    assert residual <= raw * 2 * math.sin(CFG.phase_sweep_step / 4)


def test_step3_init_optimal(aligned):
    sim, tx, est = aligned
    best = cal.step3_fine_tune_phase(sim, tx, est, CFG)
    assert abs(wrap_phase(best.phase - est.phase)) <= CFG.phase_sweep_step


def test_step3_trace_unimodal(aligned):
    sim, tx, est = aligned
    diag = {}
    cal.step3_fine_tune_phase(sim, tx, replace(est, phase=est.phase + 0.04), CFG, diagnostics=diag)
    m = [v for _, v in diag["step3_phase"]]
    i = int(np.argmin(m))
    assert all(b < a for a, b in zip(m[:i], m[1:i + 1]))
    assert all(b > a for a, b in zip(m[i:], m[i + 1:]))


def test_step3_misconfigured_replica(aligned):
    sim, tx, est = aligned
    with pytest.raises(SweepFailed):
        cal.step3_fine_tune_phase(sim, tx, replace(est, phase=est.phase + math.pi), CFG)


def test_monotone_improvement(aligned):
    sim, tx, est = aligned
    best = cal.step3_fine_tune_phase(sim, tx, est, CFG)

    def bin1(ests):
        return abs(sim.acquire(tx, cal.synthesize_replica(sim, ests, CFG)).spectrum.bins[1])

    assert bin1([best]) <= bin1([est]) <= bin1([])


# --- step 4 and the full pipeline ----------------------------------------------

def test_paper_suppression(paper10):
    r = cal.calibrate(Simulator(paper10))
    assert r.suppression_db[0] >= 20
    assert r.residual_bin_dbm < r.uncancelled_bin_dbm
    assert r.rf_residual_dbm < r.rf_uncancelled_dbm


def test_noiseless_suppression(paper10):
    r = cal.calibrate(Simulator(paper10.with_noise(False)))
    assert r.suppression_db[0] >= 40


def test_zero_leakage():
    with pytest.raises(NoLeakageFound):
        cal.calibrate(Simulator(load_scenario("no_leakage")))


def test_idempotent_noiseless(quiet10):
    sim = Simulator(quiet10)
    a = cal.calibrate(sim)
    b = cal.calibrate(sim)
    assert abs(a.suppression_db[0] - b.suppression_db[0]) <= 3.0
    assert a.to_dict() == b.to_dict()


def test_rerun_with_noise_does_not_diverge(paper10):
    sim = Simulator(paper10)
    runs = [cal.calibrate(sim).suppression_db[0] for _ in range(3)]
    assert min(runs) >= 20


def test_nearest_mode_floor_matches_prediction(quiet10):
    sim = Simulator(quiet10)
    r = cal.calibrate(sim, replace(CFG, replica_synthesis="nearest"))
    assert len(r.program.tones) == 1
    k = CFG.align_bin
    leak = sim.tones(r.tx_offset)[0]
    pred = (sim.signal_chain_gain(leak.freq) * leak.phasor
            * dirichlet_bins(leak.freq / sim.rbw, sim.n_fft)[k])
    rendered = sim.replica_envelope(r.program)
    for t in r.program.tones:
        c = fit_tone_amplitudes(rendered, sim.fs, [t.freq])[0]
        pred += sim.replica_chain_gain(t.freq) * c * dirichlet_bins(t.freq / sim.rbw, sim.n_fft)[k]
    assert abs(r.residual_bin_dbm - power_dbm(pred)) < 1.0


def test_pair_mode_uses_grid_tones(quiet10):
    sim = Simulator(quiet10)
    r = cal.calibrate(sim)
    step = sim.scenario.dds.freq_step
    assert len(r.program.tones) == 2
    lo, hi = sorted(t.freq for t in r.program.tones)
    assert hi - lo == pytest.approx(step)
    assert lo <= r.leakage[0].freq <= hi
    r.program.validate(sim.scenario.dds)


def test_drift_and_recalibration(paper10):
    s = replace(paper10, drift=DriftConfig(True, 0.002, 0.0))
    r = cal.calibrate(Simulator(s))
    late = Simulator(s, drift_index=50)
    stale, _, _ = cal.measure_suppression(late, r.tx_offset, r.program, r.leakage_freqs_hz, CFG)
    # 0.1 rad of drift limits the stale replica to about 20 dB
    assert stale[0] == pytest.approx(-20 * math.log10(2 * math.sin(0.05)), abs=1.0)
    assert cal.calibrate(late).suppression_db[0] > stale[0] + 20


def test_calibration_file_round_trip(paper10):
    r = cal.calibrate(Simulator(paper10.with_noise(False)))
    tx, prog, doc = cal.load_calibration(cal.dump_calibration(r, "paper_10cm"))
    assert tx == r.tx_offset and prog == r.program
    assert doc["scenario"] == "paper_10cm"
    assert doc["suppression_db"] == r.suppression_db
    with pytest.raises(SchemaError):
        cal.load_calibration("tx_offset: 3\n")
    with pytest.raises(SchemaError):
        cal.load_calibration(": : :\n")


# --- multipath ----------------------------------------------------------------

@pytest.fixture(scope="module")
def array3():
    return load_scenario("array_3path")


def test_multipath_three_tones(array3):
    r = cal.calibrate_multipath(Simulator(array3))
    truth = sorted(t.freq for t in Simulator(array3).tones(r.tx_offset, PathKind.LEAKAGE))
    assert sorted(r.leakage_freqs_hz) == pytest.approx(truth, abs=5.0)
    assert len(r.suppression_db) == 3
    assert min(r.suppression_db) >= 20


def test_multipath_single_path_matches_pipeline(paper10):
    s = paper10.with_noise(False)
    single = cal.calibrate(Simulator(s))
    greedy = cal.calibrate_multipath(Simulator(s))
    assert greedy.to_dict() == single.to_dict()


def test_multipath_path_removed(array3):
    s = replace(array3.with_noise(False), leakage=array3.leakage[:2])
    full = cal.calibrate_multipath(Simulator(array3.with_noise(False)))
    fewer = cal.calibrate_multipath(Simulator(s))
    assert len(fewer.leakage) == len(full.leakage) - 1


def test_multipath_max_paths(array3):
    r = cal.calibrate_multipath(Simulator(array3.with_noise(False)), replace(CFG, max_paths=2))
    assert len(r.leakage) == 2


def test_paths_too_close(quiet10):
    # beats 7 kHz apart: resolvable, but closer than one bin
    s = replace(quiet10, leakage=(LeakageSpec(123.4e-12, -30.0), LeakageSpec(193.4e-12, -35.0)))
    with pytest.raises(PathsTooClose):
        cal.calibrate_multipath(Simulator(s))
