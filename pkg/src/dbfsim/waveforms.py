"""
Transmit waveform synthesis.

All waveforms are complex baseband; the carrier is applied analytically by the
channel models downstream. Pulses use a time axis centered on the pulse, so the
sample at index ``N // 2`` sits at ``t = 0`` and sample 0 at ``t = -T/2``.

Functions
---------
pulse_value :
    Continuous-time evaluation of an untapered pulse, used for fractional delays.
synth_two_tone, synth_lfm, synth_dual_lfm :
    Delay-estimation pulses.
synth_ask_train :
    On/off keyed pulse train for the beamforming slots.
apply_edge_taper :
    Raised-cosine rise/fall on each pulse edge.
write_waveform, read_waveform :
    Interleaved float32 I/Q dump with a JSON sidecar.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class WaveformKind(str, enum.Enum):
    TWO_TONE = "two_tone"
    LFM = "lfm"
    DUAL_LFM = "dual_lfm"
    ASK = "ask"
    CW = "cw"


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class WaveformSpec:
    """Parameters of one transmit waveform.

    ``bandwidth_hz`` is the tone separation for two-tone pulses and the total
    swept span for the chirps. Each half of a dual-LFM sweeps half of it.
    """

    kind: WaveformKind
    carrier_hz: float
    bandwidth_hz: float
    duration_s: float
    sample_rate_hz: float
    amplitude: float = 1.0
    rise_fall_s: float = 0.0
    phase_rad: float = 0.0
    data_rate_hz: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", WaveformKind(self.kind))
        if not self.duration_s > 0:
            raise SynthesisError("duration_s must be positive")
        if not self.sample_rate_hz > 0:
            raise SynthesisError("sample_rate_hz must be positive")
        if not 0 <= self.bandwidth_hz < self.sample_rate_hz:
            raise SynthesisError("bandwidth_hz must lie in [0, sample_rate_hz)")
        if not 0 <= self.rise_fall_s <= self.duration_s / 2:
            raise SynthesisError("rise_fall_s must lie in [0, duration_s / 2]")
        if self.carrier_hz < 0:
            raise SynthesisError("carrier_hz must be non-negative")
        if self.data_rate_hz is not None and not self.data_rate_hz > 0:
            raise SynthesisError("data_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def pulse_times(self) -> np.ndarray:
        n = self.n_samples
        return (np.arange(n) - n // 2) / self.sample_rate_hz


@dataclass(frozen=True)
class SampledWaveform:
    samples: np.ndarray
    sample_rate_hz: float
    epoch_s: float = 0.0
    kind: str = ""

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def times(self) -> np.ndarray:
        """Timestamp of every sample on the emitting timebase."""
        return self.epoch_s + np.arange(self.samples.size) / self.sample_rate_hz

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def with_samples(self, samples: np.ndarray) -> SampledWaveform:
        return SampledWaveform(samples, self.sample_rate_hz, self.epoch_s, self.kind)


@dataclass(frozen=True)
class BitPattern:
    bits: tuple[int, ...]
    data_rate_hz: float

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise SynthesisError("bit pattern is empty")
        if any(b not in (0, 1) for b in bits):
            raise SynthesisError("bits must be 0 or 1")
        if not self.data_rate_hz > 0:
            raise SynthesisError("data_rate_hz must be positive")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def on_slots(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]


def pulse_value(spec: WaveformSpec, t: np.ndarray | float) -> np.ndarray:
    """Untapered pulse evaluated at arbitrary times ``t`` (pulse-centered axis).

    The rect window is half-open, ``[-T/2, T/2)``, matching the sampled grid.
    """
    t = np.asarray(t, dtype=float)
    a = spec.amplitude * np.exp(1j * spec.phase_rad)
    half = spec.duration_s / 2
    inside = (t >= -half) & (t < half)
    bw = spec.bandwidth_hz
    T = spec.duration_s
    if spec.kind is WaveformKind.TWO_TONE:
        body = np.exp(-1j * np.pi * bw * t) + np.exp(1j * np.pi * bw * t)
    elif spec.kind is WaveformKind.LFM:
        body = np.exp(1j * np.pi * (bw / T) * t**2)
    elif spec.kind is WaveformKind.DUAL_LFM:
        # two chirps of span bw/2 each, centers held bw/2 apart
        half_bw = bw / 2
        chirp = np.exp(1j * np.pi * (half_bw / T) * t**2)
        body = chirp * (np.exp(-1j * np.pi * half_bw * t) + np.exp(1j * np.pi * half_bw * t))
    else:
        body = np.ones_like(t, dtype=complex)
    return np.where(inside, a * body, 0.0 + 0.0j)


def _synth(spec: WaveformSpec, expected: WaveformKind) -> SampledWaveform:
    if spec.kind is not expected:
        raise SynthesisError(f"expected a {expected.value} spec, got {spec.kind.value}")
    t = spec.pulse_times()
    return SampledWaveform(pulse_value(spec, t), spec.sample_rate_hz, 0.0, spec.kind.value)


def synth_two_tone(spec: WaveformSpec) -> SampledWaveform:
    """Two tones at +/- bandwidth/2 under a rect window; peak 2*amplitude at t=0."""
    return _synth(spec, WaveformKind.TWO_TONE)


def synth_lfm(spec: WaveformSpec) -> SampledWaveform:
    """Up-chirp sweeping -bandwidth/2 to +bandwidth/2 over the pulse."""
    return _synth(spec, WaveformKind.LFM)


def synth_dual_lfm(spec: WaveformSpec) -> SampledWaveform:
    """Sum of two simultaneous up-chirps.

    The lower chirp sweeps ``[-B/2, 0]`` and the upper ``[0, B/2]``, so the pair
    is an instantaneous two-tone signal with separation ``B/2`` whose total
    occupied span is ``B``.
    """
    return _synth(spec, WaveformKind.DUAL_LFM)


def synth_cw(spec: WaveformSpec) -> SampledWaveform:
    return _synth(spec, WaveformKind.CW)


def ask_slot_samples(spec: WaveformSpec) -> int:
    """Samples per keying slot.

    A slot holds a whole number of data-rate periods and is just long enough
    for one pulse; with a 10 us pulse at 1.5 MSa/s that is 15 periods (10 us).
    """
    if spec.data_rate_hz is None:
        raise SynthesisError("ASK spec needs data_rate_hz")
    periods = math.ceil(spec.duration_s * spec.data_rate_hz - 1e-9)
    return int(round(periods / spec.data_rate_hz * spec.sample_rate_hz))


def ask_pulse_spans(spec: WaveformSpec, pattern: BitPattern) -> list[tuple[int, int]]:
    slot = ask_slot_samples(spec)
    n = spec.n_samples
    return [(k * slot, k * slot + n) for k in pattern.on_slots()]


def synth_ask_train(spec: WaveformSpec, pattern: BitPattern) -> SampledWaveform:
    """On/off keyed pulse train, one slot per bit, with the spec's edge taper applied."""
    if spec.kind is not WaveformKind.ASK:
        raise SynthesisError(f"expected an ask spec, got {spec.kind.value}")
    slot = ask_slot_samples(spec)
    total = slot * len(pattern)
    samples = np.zeros(total, dtype=complex)
    a = spec.amplitude * np.exp(1j * spec.phase_rad)
    spans = ask_pulse_spans(spec, pattern)
    for start, stop in spans:
        samples[start:stop] = a
    wf = SampledWaveform(samples, spec.sample_rate_hz, 0.0, spec.kind.value)
    if spec.rise_fall_s > 0 and spans:
        wf = apply_edge_taper(wf, spec.rise_fall_s, pulses=spans)
    return wf


def raised_cosine_ramp(n: int) -> np.ndarray:
    """Rising half-cosine sampled at mid-sample points; ``n`` samples, all in (0, 1)."""
    i = np.arange(n)
    return 0.5 * (1 - np.cos(np.pi * (i + 0.5) / n))


def apply_edge_taper(
    wf: SampledWaveform,
    rise_fall_s: float,
    pulses: Sequence[tuple[int, int]] | None = None,
) -> SampledWaveform:
    """Apply a raised-cosine ramp to the leading and trailing edge of each pulse.

    Parameters
    ----------
    wf : SampledWaveform
    rise_fall_s : float
        Ramp length. Rounded to whole samples.
    pulses : sequence of (start, stop) sample spans, optional
        Defaults to the whole waveform being a single pulse.
    """
    if rise_fall_s < 0:
        raise SynthesisError("rise_fall_s must be non-negative")
    n = int(round(rise_fall_s * wf.sample_rate_hz))
    if n == 0:
        return wf.with_samples(wf.samples.copy())
    spans = [(0, len(wf))] if pulses is None else list(pulses)
    out = wf.samples.copy()
    ramp = raised_cosine_ramp(n)
    for start, stop in spans:
        if 2 * n > stop - start:
            raise SynthesisError(
                f"taper of {n} samples exceeds half the {stop - start}-sample pulse"
            )
        out[start:start + n] *= ramp
        out[stop - n:stop] *= ramp[::-1]
    return wf.with_samples(out)


def synthesize(spec: WaveformSpec, pattern: BitPattern | None = None) -> SampledWaveform:
    """Synthesize any kind of waveform with its edge taper applied."""
    if spec.kind is WaveformKind.ASK:
        if pattern is None:
            raise SynthesisError("ASK synthesis needs a bit pattern")
        return synth_ask_train(spec, pattern)
    raw = {
        WaveformKind.TWO_TONE: synth_two_tone,
        WaveformKind.LFM: synth_lfm,
        WaveformKind.DUAL_LFM: synth_dual_lfm,
        WaveformKind.CW: synth_cw,
    }[spec.kind](spec)
    return apply_edge_taper(raw, spec.rise_fall_s)


def tapered_pulse_value(spec: WaveformSpec, t: np.ndarray | float) -> np.ndarray:
    """Continuous-time pulse including the edge taper.

    Agrees with :func:`synthesize` on the synthesis grid (ramps are evaluated at
    mid-sample points there), so it can stand in for the sampled pulse at any
    fractional delay.
    """
    t = np.asarray(t, dtype=float)
    raw = pulse_value(spec, t)
    if spec.rise_fall_s <= 0:
        return raw
    fs = spec.sample_rate_hz
    n = int(round(spec.rise_fall_s * fs))
    if n == 0:
        return raw
    # distance into the pulse, measured from its first sample, plus half a sample
    u = (t + spec.n_samples // 2 / fs) * fs + 0.5
    d = np.minimum(u, spec.n_samples - u)
    ramp = np.where(d < n, 0.5 * (1 - np.cos(np.pi * np.clip(d, 0, n) / n)), 1.0)
    return raw * ramp


def write_waveform(wf: SampledWaveform, path: str | Path, **header) -> tuple[Path, Path]:
    """Write interleaved float32 I/Q plus a JSON sidecar header.

    Returns the data path and the header path.
    """
    path = Path(path)
    data_path = path.with_suffix(".cf32")
    header_path = path.with_suffix(".json")
    iq = np.empty(2 * len(wf), dtype="<f4")
    iq[0::2] = wf.samples.real
    iq[1::2] = wf.samples.imag
    data_path.write_bytes(iq.tobytes())
    meta = {
        "sample_rate_hz": wf.sample_rate_hz,
        "epoch_s": wf.epoch_s,
        "kind": wf.kind,
        "n_samples": len(wf),
        "format": "cf32_le",
        **header,
    }
    header_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return data_path, header_path


def read_waveform(path: str | Path) -> SampledWaveform:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    iq = np.frombuffer(path.with_suffix(".cf32").read_bytes(), dtype="<f4")
    samples = iq[0::2].astype(float) + 1j * iq[1::2].astype(float)
    if samples.size != meta["n_samples"]:
        raise ValueError(f"{path}: expected {meta['n_samples']} samples, found {samples.size}")
    return SampledWaveform(samples, meta["sample_rate_hz"], meta["epoch_s"], meta.get("kind", ""))
