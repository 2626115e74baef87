"""
Two-way time transfer between node pairs.

One exchange: the initiating node ``n`` transmits the sync pulse, the primary
``0`` timestamps its arrival, waits a fixed turnaround and answers, and ``n``
timestamps the reply. Each timestamp is read from the capturing node's own
clock. From the four timestamps::

    delay  = ((t_rx_0 - t_tx_n) + (t_rx_n - t_tx_0)) / 2
    offset = ((t_rx_0 - t_tx_n) - (t_rx_n - t_tx_0)) / 2

With ``local = global + D`` the offset estimate equals ``-(D_n - D_0)``.

Every node's hardware delay is modeled as a static RF-chain latency split
evenly between its transmit and receive paths. Those latencies add
``(h_0 + h_n) / 2`` to the delay estimate and cancel in the offset estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .clock import ClockModel, local_time
from .estimation import DetectionError, add_awgn, estimate_arrival
from .geometry import SPEED_OF_LIGHT, Position2D, euclidean_range
from .scenario import Mode, ScenarioConfig
from .waveforms import SampledWaveform, synthesize, tapered_pulse_value

CALIBRATION_TOLERANCE_S = 1e-12


class ExchangeError(RuntimeError):
    """A leg of the exchange failed to detect the sync pulse."""


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyncParams:
    """Protocol constants of one synchronization epoch."""

    turnaround_s: float = 20e-6
    guard_s: float = 1e-6
    coarse_alignment_s: float = 100e-9
    schedule_s: float = 10e-6
    initiator: str = "n"
    detection_threshold_db: float = 10.0

    def __post_init__(self) -> None:
        if self.initiator not in ("n", "0"):
            raise ValueError("initiator must be 'n' or '0'")


@dataclass(frozen=True)
class ExchangeTruth:
    """Values the estimators target; ``offset_s`` is primary-minus-other clock bias."""

    delay_s: float
    offset_s: float
    tau_cal_s: float


@dataclass(frozen=True)
class TimestampQuad:
    """Four timestamps of one exchange between ``pair = (primary, other)``."""

    t_tx_n: float
    t_rx_0: float
    t_tx_0: float
    t_rx_n: float
    pair: tuple[int, int] = (0, 1)
    truth: ExchangeTruth | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "t_tx_n": self.t_tx_n,
            "t_rx_0": self.t_rx_0,
            "t_tx_0": self.t_tx_0,
            "t_rx_n": self.t_rx_n,
        }


@dataclass(frozen=True)
class CalibrationRecord:
    tau_cal_s: dict[tuple[int, int], float]
    source: str = ""

    def lookup(self, pair: tuple[int, int]) -> float:
        a, b = pair
        if (a, b) in self.tau_cal_s:
            return self.tau_cal_s[(a, b)]
        if (b, a) in self.tau_cal_s:
            return self.tau_cal_s[(b, a)]
        raise CalibrationError(f"no calibration for pair {pair}")

    def merged(self, other: CalibrationRecord) -> CalibrationRecord:
        src = self.source if self.source == other.source else f"{self.source}+{other.source}"
        return CalibrationRecord({**self.tau_cal_s, **other.tau_cal_s}, src)


def est_prop_delay(quad: TimestampQuad) -> float:
    return ((quad.t_rx_0 - quad.t_tx_n) + (quad.t_rx_n - quad.t_tx_0)) / 2


def est_clock_offset(quad: TimestampQuad) -> float:
    """Half the leg difference; the negative of the other node's bias."""
    return ((quad.t_rx_0 - quad.t_tx_n) - (quad.t_rx_n - quad.t_tx_0)) / 2


def calibrate(
    quad: TimestampQuad | Sequence[TimestampQuad],
    true_range_m: float,
    source: str = "",
) -> CalibrationRecord:
    """System delay of a pair from exchanges at a surveyed range.

    Several quads of the same pair are combined by their median, so a rare
    ambiguity-lobe jump during calibration does not leak into every range.
    """
    quads = [quad] if isinstance(quad, TimestampQuad) else list(quad)
    if not quads:
        raise CalibrationError("no exchanges to calibrate from")
    pairs = {q.pair for q in quads}
    if len(pairs) != 1:
        raise CalibrationError(f"quads mix pairs {sorted(pairs)}")
    delay = float(np.median([est_prop_delay(q) for q in quads]))
    tau = delay - true_range_m / SPEED_OF_LIGHT
    if tau < -CALIBRATION_TOLERANCE_S:
        raise CalibrationError(
            f"pair {quads[0].pair}: measured delay {delay:.4e} s is shorter than the "
            f"{true_range_m} m light time"
        )
    return CalibrationRecord({quads[0].pair: tau}, source)


def est_range(quad: TimestampQuad, cal: CalibrationRecord) -> float:
    return (est_prop_delay(quad) - cal.lookup(quad.pair)) * SPEED_OF_LIGHT


def epoch_clocks(
    config: ScenarioConfig, rng: np.random.Generator, coarse_alignment_s: float
) -> dict[int, ClockModel]:
    """Clocks at the start of an epoch: each non-primary node gets a fresh
    coarse-alignment error, uniform in +/- ``coarse_alignment_s``."""
    out = {}
    for n in config.nodes:
        c = n.clock
        if n.id != 0 and coarse_alignment_s > 0:
            c = replace(c, offset_s=c.offset_s + rng.uniform(-coarse_alignment_s, coarse_alignment_s))
        out[n.id] = c
    return out


def _capture(
    config: ScenarioConfig,
    rx_clock: ClockModel,
    rx_latency: float,
    emit_global: float,
    delay: float,
    window_start_local: float,
    n_window: int,
    snr_db: float | None,
    rng: np.random.Generator,
    signal_power: float,
) -> SampledWaveform:
    spec = config.sync_waveform
    fs = spec.sample_rate_hz
    local = window_start_local + np.arange(n_window) / fs
    g = (local - rx_clock.offset_s) / rx_clock.rate - rx_latency
    half = spec.n_samples // 2 / fs
    taps = ((0.0, 1.0),) + config.channel.multipath
    x = np.zeros(n_window, dtype=complex)
    for excess, amp in taps:
        d = delay + excess
        t = g - emit_global - d - half
        x += amp * np.exp(-2j * math.pi * spec.carrier_hz * d) * tapered_pulse_value(spec, t)
    wf = SampledWaveform(x, fs, window_start_local, spec.kind.value)
    return add_awgn(wf, snr_db, rng, signal_power=signal_power)


def _jitter(clock: ClockModel, rng: np.random.Generator) -> float:
    if clock.timestamp_jitter_s > 0:
        return clock.timestamp_jitter_s * float(rng.standard_normal())
    return 0.0


def run_exchange(
    config: ScenarioConfig,
    pair: tuple[int, int],
    rng: np.random.Generator | int | None = None,
    *,
    clocks: Mapping[int, ClockModel] | None = None,
    positions: Mapping[int, Position2D] | None = None,
    params: SyncParams = SyncParams(),
) -> TimestampQuad:
    """Simulate one two-way exchange between ``pair = (primary, other)``.

    Parameters
    ----------
    config : ScenarioConfig
        Supplies waveforms, channel, hardware delays and the estimation mode.
    pair : (int, int)
        The first node plays the primary role.
    rng : Generator or seed
        Drives coarse alignment (when ``clocks`` is omitted), noise and jitter.
    clocks : mapping, optional
        Clock of each node for this epoch. Defaults to :func:`epoch_clocks`.
    positions : mapping, optional
        Physical node positions; defaults to the scenario's true positions.

    Raises
    ------
    ExchangeError
        If either leg fails detection in waveform mode.
    """
    rng = np.random.default_rng(rng)
    a_id, b_id = pair
    a, b = config.node(a_id), config.node(b_id)
    if clocks is None:
        clocks = epoch_clocks(config, rng, params.coarse_alignment_s)
    ca, cb = clocks[a_id], clocks[b_id]
    pa = (positions or {}).get(a_id, a.true_position)
    pb = (positions or {}).get(b_id, b.true_position)
    tau = euclidean_range(pa, pb) / SPEED_OF_LIGHT
    ha, hb = a.hardware_delay_s / 2, b.hardware_delay_s / 2

    spec = config.sync_waveform
    fs = spec.sample_rate_hz
    snr = config.channel.snr_for(a_id, b_id)
    sigma = config.channel.abstract_timestamp_sigma_s
    waveform_mode = config.mode is Mode.WAVEFORM
    if waveform_mode:
        reference = synthesize(spec)
        mag2 = np.abs(reference.samples) ** 2
        power = float(mag2[mag2 > 0].mean())
        n_guard = int(math.ceil(params.guard_s * fs))
        n_window = reference.samples.size + 2 * n_guard

    # the initiator and responder roles follow the protocol setting
    if params.initiator == "n":
        first, second = (b, cb, hb), (a, ca, ha)
    else:
        first, second = (a, ca, ha), (b, cb, hb)

    def leg(tx, rx, tx_local: float, expect_local: float) -> tuple[float, float]:
        (_, tx_clock, tx_lat), (_, rx_clock, rx_lat) = tx, rx
        emit = tx_clock.to_global(tx_local) + tx_lat
        t_tx = tx_local + _jitter(tx_clock, rng)
        if not waveform_mode:
            t_rx = local_time(rx_clock, emit + tau + rx_lat)
            if sigma > 0:
                t_rx += sigma * rng.standard_normal()
        else:
            start = expect_local - n_guard / fs
            cap = _capture(config, rx_clock, rx_lat, emit, tau, start, n_window, snr, rng, power)
            try:
                est = estimate_arrival(cap, reference, params.detection_threshold_db)
            except DetectionError as err:
                raise ExchangeError(f"pair {pair}: {err}") from None
            t_rx = est.arrival_s
        return t_tx, t_rx + _jitter(rx_clock, rng)

    start_local = round(params.schedule_s * fs) / fs
    t_tx1, t_rx1 = leg(first, second, start_local, start_local)
    reply_local = math.ceil((t_rx1 + params.turnaround_s) * fs) / fs
    t_tx2, t_rx2 = leg(second, first, reply_local, start_local + params.turnaround_s)

    g0 = cb.to_global(start_local)
    truth = ExchangeTruth(
        delay_s=tau,
        offset_s=local_time(ca, g0) - local_time(cb, g0),
        tau_cal_s=ha + hb,
    )
    if params.initiator == "n":
        return TimestampQuad(t_tx1, t_rx1, t_tx2, t_rx2, (a_id, b_id), truth)
    return TimestampQuad(t_tx2, t_rx2, t_tx1, t_rx1, (a_id, b_id), truth)


def exchange_record(
    quad: TimestampQuad,
    mode: Mode | str,
    seed: int | None = None,
    cal: CalibrationRecord | None = None,
) -> dict:
    """One JSON-lines log record for an exchange."""
    est = {
        "prop_delay_s": est_prop_delay(quad),
        "clock_offset_s": est_clock_offset(quad),
    }
    if cal is not None:
        est["range_m"] = est_range(quad, cal)
    rec = {
        "pair": list(quad.pair),
        "quad": quad.to_dict(),
        "estimates": est,
        "mode": Mode(mode).value,
        "seed": seed,
    }
    if quad.truth is not None:
        rec["truth"] = {
            "delay_s": quad.truth.delay_s,
            "offset_s": quad.truth.offset_s,
            "tau_cal_s": quad.truth.tau_cal_s,
        }
    return rec
