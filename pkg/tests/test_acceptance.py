"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from dbfsim.beamformer import ConstraintSpec, ErrorModel, constraint_matrix, injected_error_trial, lcmp_weights
from dbfsim.clock import ChannelModel, ClockModel
from dbfsim.estimation import matched_filter, sidelobe_metrics
from dbfsim.geometry import Position2D, euclidean_range
from dbfsim.localization import ArrayGeometry, RangeSet, localize_array
from dbfsim.pipeline import PipelineOptions, emit_outputs, register, run_monte_carlo
from dbfsim.scenario import (
    BEAM_WAVEFORM,
    SYNC_WAVEFORM,
    Mode,
    NodeSpec,
    ReceiverSpec,
    ScenarioConfig,
    builtin_scenario,
    builtin_scenarios,
)
from dbfsim.sync import calibrate, est_clock_offset, est_prop_delay, est_range, run_exchange
from dbfsim.waveforms import WaveformKind, synthesize

pytestmark = pytest.mark.slow

NO_MAP = PipelineOptions(grid=None)
ERRORS = ErrorModel(position_sigma_m=5e-3, sync_sigma_s=5e-12)
EXP_A = [f"exp-a-pos{i}" for i in range(1, 5)]
EXP_B = [f"exp-b-pos{i}" for i in range(1, 5)]


def _pair(distance: float, offset: float, hw: float, mode: Mode, snr=None, multipath=(), kind=None) -> ScenarioConfig:
    sync = SYNC_WAVEFORM if kind is None else replace(SYNC_WAVEFORM, kind=WaveformKind(kind))
    return ScenarioConfig(
        nodes=(
            NodeSpec(0, Position2D(0, 0), ClockModel(), hw),
            NodeSpec(1, Position2D(distance, 0), ClockModel(offset), hw),
        ),
        receivers=(ReceiverSpec(0, Position2D(0, 5)),),
        sync_waveform=sync,
        beam_waveform=BEAM_WAVEFORM,
        channel=ChannelModel(snr_db=snr, multipath=multipath),
        carrier_beam_hz=2.1e9,
        mode=mode,
    )


@pytest.fixture(scope="module")
def exp_a1_run():
    t0 = time.perf_counter()
    cfg = builtin_scenario("exp-a-pos1")
    assert cfg.mode is Mode.WAVEFORM and cfg.sync_waveform.kind is WaveformKind.DUAL_LFM
    assert cfg.channel.snr_db == 30.0
    result = run_monte_carlo(cfg, 200, seed=2024, options=NO_MAP)
    return cfg, result, time.perf_counter() - t0


def test_criterion_01_sync_exactness(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_delay = worst_offset = 0.0
    for _ in range(1000):
        cfg = _pair(rng.uniform(0.1, 100), rng.uniform(-1e-3, 1e-3), rng.uniform(0, 100e-9), Mode.ABSTRACT)
        q = run_exchange(cfg, (0, 1), rng)
        worst_delay = max(worst_delay, abs(est_prop_delay(q) - q.truth.delay_s - q.truth.tau_cal_s))
        worst_offset = max(worst_offset, abs(est_clock_offset(q) - q.truth.offset_s))
    dt = time.perf_counter() - t0
    ok = worst_delay < 1e-15 and worst_offset < 1e-15 and dt < 5
    acceptance(1, "sync exactness", ok,
               f"max delay err {worst_delay:.2e} s, max offset err {worst_offset:.2e} s, {dt:.2f} s")
    assert ok


def test_criterion_02_ranging_accuracy(acceptance, exp_a1_run):
    cfg, result, dt = exp_a1_run
    loc = result.points[0].localization(cfg)
    rmse = {k: loc[k].rmse for k in ("d01", "d02", "d12")}
    n_ok = len(result.points[0].successful())
    ok = n_ok == 200 and max(rmse.values()) <= 0.010 and dt < 120
    acceptance(2, "ranging RMSE <= 10 mm", ok,
               ", ".join(f"{k} {1e3 * v:.2f} mm" for k, v in rmse.items()) + f", {n_ok}/200 trials, {dt:.1f} s")
    assert ok


def test_criterion_03_localization_accuracy(acceptance, exp_a1_run):
    cfg, result, dt = exp_a1_run
    loc = result.points[0].localization(cfg)
    rmse = {k: loc[k].rmse for k in ("y1", "x2", "y2")}
    ok = max(rmse.values()) < 0.010 and dt < 120
    acceptance(3, "coordinate RMSE < 1 cm", ok,
               ", ".join(f"{k} {1e3 * v:.2f} mm" for k, v in rmse.items()) + f", {dt:.1f} s")
    assert ok


def test_criterion_04_geometry_round_trip(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for cfg in builtin_scenarios():
        truth = {n.id: n.true_position for n in cfg.nodes}
        p = truth
        ranges = RangeSet(euclidean_range(p[0], p[1]), euclidean_range(p[0], p[2]), euclidean_range(p[1], p[2]))
        geo = localize_array(ranges)
        mirror = p[2].x < p[0].x
        placed = register(geo, p[0], p[1], mirror)
        worst = max(worst, max(math.hypot(placed[i].x - p[i].x, placed[i].y - p[i].y) for i in p))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 1
    acceptance(4, "noiseless geometric round trip", ok, f"max position err {worst:.2e} m over 9 layouts, {dt:.3f} s")
    assert ok


def test_criterion_05_lcmp_exactness(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for cfg in builtin_scenarios():
        if cfg.name == "calibration":
            continue
        spec = ConstraintSpec.from_scenario(cfg)
        c = constraint_matrix(ArrayGeometry({n.id: n.true_position for n in cfg.nodes}), spec)
        w = lcmp_weights(c, spec.g)
        worst = max(worst, float(np.max(np.abs(w.w @ c.entries - np.asarray(spec.g, complex)))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 1
    acceptance(5, "LCMP constraint exactness", ok, f"max |w.C - g| {worst:.2e} over 8 layouts, {dt:.3f} s")
    assert ok


def _trials(names, seed):
    out = {}
    for i, name in enumerate(names):
        cfg = builtin_scenario(name)
        rng = np.random.default_rng([seed, i])
        out[name] = [injected_error_trial(cfg, ERRORS, rng) for _ in range(200)]
    return out


def test_criterion_06_null_depth(acceptance):
    t0 = time.perf_counter()
    trials = _trials(EXP_B, 606)
    med = {k: float(np.median([t.null_depth_db for t in v])) for k, v in trials.items()}
    dt = time.perf_counter() - t0
    ok = min(med.values()) >= 15 and dt < 60
    acceptance(6, "median null depth >= 15 dB", ok,
               ", ".join(f"{k[-4:]} {v:.1f} dB" for k, v in med.items()) + f", {dt:.1f} s")
    assert ok


def test_criterion_07_coherent_gain(acceptance):
    t0 = time.perf_counter()
    trials = _trials(EXP_A + EXP_B, 707)
    med = {k: float(np.median([t.coherent_gain for t in v])) for k, v in trials.items()}
    dt = time.perf_counter() - t0
    ok = min(med.values()) >= 0.90 and dt < 60
    acceptance(7, "median coherent gain >= 0.90", ok,
               f"lowest {min(med, key=med.get)} {min(med.values()):.3f}, highest {max(med.values()):.3f}, {dt:.1f} s")
    assert ok


def test_criterion_08_sidelobe_ordering(acceptance):
    t0 = time.perf_counter()
    m = {}
    for kind in ("two_tone", "dual_lfm", "lfm"):
        ref = synthesize(replace(SYNC_WAVEFORM, kind=WaveformKind(kind), rise_fall_s=0.0))
        m[kind] = sidelobe_metrics(matched_filter(ref, ref))
    psr = {k: v["peak_sidelobe_ratio_db"] for k, v in m.items()}
    width = {k: v["mainlobe_width_s"] for k, v in m.items()}
    dt = time.perf_counter() - t0
    ok = (psr["two_tone"] > psr["dual_lfm"] > psr["lfm"]
          and width["two_tone"] < width["dual_lfm"] < width["lfm"] and dt < 5)
    acceptance(8, "sidelobe and mainlobe ordering", ok,
               ", ".join(f"{k} {psr[k]:.2f} dB / {1e9 * width[k]:.3f} ns" for k in psr) + f", {dt:.2f} s")
    assert ok


def test_criterion_09_multipath(acceptance):
    t0 = time.perf_counter()
    rate = {}
    for kind in ("two_tone", "dual_lfm"):
        rng = np.random.default_rng(909)
        mk = lambda d: _pair(d, 0.0, 10e-9, Mode.WAVEFORM, 10.0, ((25e-9, 0.6),), kind)  # noqa: E731
        cal = calibrate([run_exchange(mk(2.0), (0, 1), rng) for _ in range(16)], 2.0)
        cfg = mk(3.3)
        err = np.array([est_range(run_exchange(cfg, (0, 1), rng), cal) - 3.3 for _ in range(500)])
        rate[kind] = float(np.mean(np.abs(err) > 0.5))
    dt = time.perf_counter() - t0
    ok = rate["two_tone"] > 0 and rate["two_tone"] >= 10 * rate["dual_lfm"] and dt < 120
    acceptance(9, "multipath outliers two-tone >= 10x dual-LFM", ok,
               f"two-tone {100 * rate['two_tone']:.1f}%, dual-LFM {100 * rate['dual_lfm']:.1f}%, {dt:.1f} s")
    assert ok


def test_criterion_10_focus_stability(acceptance):
    t0 = time.perf_counter()
    trials = _trials(EXP_A, 1010)
    focus_db = {k: 10 * math.log10(np.median([t.focus_power for t in v])) for k, v in trials.items()}
    nulled = all(t.null_power < t.focus_power for v in trials.values() for t in v)
    spread = max(focus_db.values()) - min(focus_db.values())
    dt = time.perf_counter() - t0
    ok = spread < 1 and nulled and dt < 60
    acceptance(10, "experiment-A focus stability", ok,
               f"focus spread {spread:.3f} dB, null below focus in every trial: {nulled}, {dt:.1f} s")
    assert ok


def _digests(path):
    return {p.relative_to(path).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_criterion_11_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    cfg = builtin_scenario("exp-b-pos2")
    for run in ("a", "b"):
        emit_outputs(run_monte_carlo(cfg, 3, seed=77), tmp_path / run)
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    dt = time.perf_counter() - t0
    ok = a == b and len(a) >= 3 and dt < 10
    acceptance(11, "byte-identical reruns", ok, f"{len(a)} files compared, {dt:.1f} s")
    assert ok
