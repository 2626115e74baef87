from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dbfsim.estimation import (
    CorrelationSeries,
    DetectionError,
    add_awgn,
    estimate_arrival,
    matched_filter,
    qls_refine,
    sidelobe_metrics,
)
from dbfsim.scenario import SYNC_WAVEFORM
from dbfsim.waveforms import SampledWaveform, WaveformKind, synthesize, tapered_pulse_value

FS = SYNC_WAVEFORM.sample_rate_hz


def ref_for(kind: str = "dual_lfm", **kw) -> SampledWaveform:
    return synthesize(replace(SYNC_WAVEFORM, kind=WaveformKind(kind), **kw))


def delayed(kind: str, delay_samples: float, pad: int = 400, **kw) -> SampledWaveform:
    """Oracle: the continuous pulse resampled at an arbitrary delay."""
    sp = replace(SYNC_WAVEFORM, kind=WaveformKind(kind), **kw)
    n = sp.n_samples
    t = (np.arange(n + pad) - n // 2) / FS
    return SampledWaveform(tapered_pulse_value(sp, t - delay_samples / FS), FS, 0.0, kind)


def pulse_power(wf: SampledWaveform) -> float:
    m = np.abs(wf.samples) ** 2
    return float(m[m > 0].mean())


# -- noise ------------------------------------------------------------------


def test_awgn_disabled():
    wf = ref_for()
    for snr in (None, math.inf):
        np.testing.assert_array_equal(add_awgn(wf, snr, np.random.default_rng(0)).samples, wf.samples)


def test_awgn_snr_calibrated():
    wf = SampledWaveform(np.exp(1j * np.linspace(0, 30, 10_000)), FS)
    noisy = add_awgn(wf, 0.0, np.random.default_rng(3))
    noise = noisy.samples - wf.samples
    snr = 10 * math.log10(np.mean(np.abs(wf.samples) ** 2) / np.mean(np.abs(noise) ** 2))
    assert abs(snr) <= 0.5


def test_awgn_deterministic():
    wf = ref_for()
    a = add_awgn(wf, 10, np.random.default_rng(9)).samples
    b = add_awgn(wf, 10, np.random.default_rng(9)).samples
    np.testing.assert_array_equal(a, b)


# -- matched filter -------------------------------------------------------------


def test_autocorrelation_peak_at_lag_zero():
    ref = ref_for()
    s = matched_filter(ref, ref)
    assert s.lags()[s.peak_index()] == 0


def test_integer_delay_peak():
    ref = ref_for()
    rx = SampledWaveform(np.concatenate([np.zeros(37), ref.samples, np.zeros(20)]), FS)
    s = matched_filter(rx, ref)
    assert s.lags()[s.peak_index()] == 37


def test_two_tone_ambiguity_sidelobe():
    ref = ref_for("two_tone", rise_fall_s=0.0)
    s = matched_filter(ref, ref)
    m = s.magnitudes / s.magnitudes.max()
    k0 = s.lag0_index
    period = round(FS / 40e6)  # 25 ns
    assert period == 5
    for k in (k0 - period, k0 + period):
        assert m[k] > 0.99
        assert m[k] >= m[k - 1] and m[k] >= m[k + 1]


def test_rate_mismatch():
    ref = ref_for()
    with pytest.raises(ValueError, match="sample rate"):
        matched_filter(SampledWaveform(ref.samples, FS / 2), ref)


@given(st.floats(-math.pi, math.pi))
def test_peak_invariant_under_phase_rotation(phi):
    ref = ref_for()
    rx = delayed("dual_lfm", 12.4)
    a = matched_filter(rx, ref)
    b = matched_filter(rx.with_samples(rx.samples * np.exp(1j * phi)), ref)
    assert a.peak_index() == b.peak_index()
    assert a.magnitudes.max() == pytest.approx(b.magnitudes.max(), rel=1e-9)


# -- QLS ------------------------------------------------------------------------


def _series(vals):
    return CorrelationSeries(np.array(vals, float), 0, FS)


def test_qls_symmetric():
    assert qls_refine(_series([0.5, 1.0, 0.5]), 1) == (1.0, True)


def test_qls_closed_form():
    # (0.6 - 0.4) / (2 * (2 - 0.4 - 0.6)) = 0.1
    idx, ok = qls_refine(_series([0.4, 1.0, 0.6]), 1)
    assert ok and idx == pytest.approx(1.1, abs=1e-12)


@pytest.mark.parametrize("k", [0, 2])
def test_qls_boundary_unrefined(k):
    assert qls_refine(_series([1.0, 0.5, 0.9]), k) == (float(k), False)


@given(st.lists(st.floats(0, 1e3), min_size=3, max_size=3))
def test_qls_delta_bounded(vals):
    idx, _ = qls_refine(_series(vals), 1)
    assert -0.5 <= idx - 1 <= 0.5


def test_qls_fractional_dual_lfm():
    rx = delayed("dual_lfm", 100.30)
    s = matched_filter(rx, ref_for())
    idx, ok = qls_refine(s, s.peak_index())
    assert ok
    assert abs((idx - s.lag0_index) - 100.30) < 0.02


# -- arrival estimation ---------------------------------------------------------


def test_arrival_of_reference_is_zero():
    ref = ref_for()
    assert estimate_arrival(ref, ref).arrival_s == pytest.approx(0.0, abs=1e-15)


def test_arrival_500ns():
    ref = ref_for()
    rx = delayed("dual_lfm", 500e-9 * FS)
    assert estimate_arrival(rx, ref).arrival_s == pytest.approx(500e-9, abs=1e-12)


def test_arrival_adds_capture_epoch():
    ref = ref_for()
    rx = delayed("dual_lfm", 20)
    rx = SampledWaveform(rx.samples, FS, 1e-3)
    assert estimate_arrival(rx, ref).arrival_s == pytest.approx(1e-3 + 100e-9, abs=1e-15)


def test_detection_failure_on_silence():
    ref = ref_for()
    with pytest.raises(DetectionError):
        estimate_arrival(SampledWaveform(np.zeros(2400, complex), FS), ref)


def test_detection_failure_on_flat_capture():
    ref = ref_for()
    with pytest.raises(DetectionError):
        estimate_arrival(SampledWaveform(np.ones(2400, complex), FS), ref, threshold_db=10)


def test_signal_always_detected_at_30db():
    ref = ref_for()
    rng = np.random.default_rng(5)
    clean = delayed("dual_lfm", 200.0)
    p = pulse_power(ref)
    for _ in range(200):
        estimate_arrival(add_awgn(clean, 30.0, rng, p), ref)


def test_capture_shorter_than_reference():
    ref = ref_for()
    with pytest.raises(ValueError):
        estimate_arrival(SampledWaveform(ref.samples[:100], FS), ref)


@pytest.mark.parametrize("shift", [1, 7, 64, 250])
def test_integer_shift_equivariance(shift):
    ref = ref_for()
    base = estimate_arrival(delayed("dual_lfm", 40.0), ref).arrival_s
    moved = estimate_arrival(delayed("dual_lfm", 40.0 + shift), ref).arrival_s
    assert abs(moved - base - shift / FS) < 2e-12


@pytest.mark.xfail(
    strict=True,
    reason="three-point parabola on native-rate magnitude is biased by up to ~0.003 samples (15 ps)",
)
def test_fractional_shift_equivariance():
    ref = ref_for()
    base = estimate_arrival(delayed("dual_lfm", 40.0), ref).arrival_s
    worst = max(
        abs(estimate_arrival(delayed("dual_lfm", 40.0 + f), ref).arrival_s - base - f / FS)
        for f in np.linspace(0.05, 0.95, 19)
    )
    assert worst < 2e-12


def test_fractional_shift_bias_bounded():
    ref = ref_for()
    errs = [
        estimate_arrival(delayed("dual_lfm", 40.0 + f), ref).arrival_s - (40.0 + f) / FS
        for f in np.linspace(0.0, 1.0, 21)
    ]
    assert max(abs(e) for e in errs) < 20e-12


def _arrival_std(snr_db: float, n: int, seed: int, kind: str = "dual_lfm") -> np.ndarray:
    ref = ref_for(kind)
    clean = delayed(kind, 123.3)
    p = pulse_power(ref)
    rng = np.random.default_rng(seed)
    return np.array([estimate_arrival(add_awgn(clean, snr_db, rng, p), ref).arrival_s for _ in range(n)])


def test_arrival_std_at_30db():
    assert np.std(_arrival_std(30.0, 300, 11)) <= 20e-12


def test_std_monotone_in_snr():
    stds = [np.std(_arrival_std(s, 200, 100 + i)) for i, s in enumerate([0, 10, 20, 30, 40])]
    assert all(b <= a for a, b in zip(stds, stds[1:])), stds


def test_low_snr_two_tone_ambiguity_vs_dual_lfm():
    true = 123.3 / FS
    tt = _arrival_std(0.0, 1000, 21, "two_tone") - true
    dl = _arrival_std(0.0, 1000, 21, "dual_lfm") - true
    # ambiguity errors sit near multiples of 25 ns
    amb = np.abs(tt) > 12.5e-9
    assert amb.sum() > 0
    assert np.allclose(np.abs(tt[amb]) % 25e-9, 0, atol=2e-9) or np.all(np.abs(tt[amb]) > 20e-9)
    assert np.sum(np.abs(dl) > 12.5e-9) == 0


# -- sidelobes ------------------------------------------------------------------


def _auto(kind):
    ref = ref_for(kind, rise_fall_s=0.0)
    return sidelobe_metrics(matched_filter(ref, ref))


def test_lfm_pslr():
    assert _auto("lfm")["peak_sidelobe_ratio_db"] == pytest.approx(-13.2, abs=0.3)


def test_sidelobe_ordering():
    tt, dl, lfm = _auto("two_tone"), _auto("dual_lfm"), _auto("lfm")
    assert tt["peak_sidelobe_ratio_db"] > dl["peak_sidelobe_ratio_db"] > lfm["peak_sidelobe_ratio_db"]
    assert tt["mainlobe_width_s"] < lfm["mainlobe_width_s"]


def test_flat_series_rejected():
    with pytest.raises(ValueError):
        sidelobe_metrics(CorrelationSeries(np.ones(20), 10, FS))


def test_series_validation():
    with pytest.raises(ValueError):
        CorrelationSeries(np.array([1.0, -1.0]), 0, FS)
    with pytest.raises(ValueError):
        CorrelationSeries(np.array([]), 0, FS)
