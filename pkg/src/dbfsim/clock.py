"""Node clock and channel models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class ClockModel:
    """Local timebase of one node: ``local = global + offset + drift * global``.

    ``offset_s`` is the local-minus-global bias. Jitter is white and only
    enters when a timestamp is captured.
    """

    offset_s: float = 0.0
    drift_ppb: float = 0.0
    timestamp_jitter_s: float = 0.0

    def __post_init__(self) -> None:
        if self.timestamp_jitter_s < 0:
            raise ValueError("timestamp_jitter_s must be non-negative")
        if abs(self.drift_ppb) >= 1e4:
            raise ValueError("|drift_ppb| must be below 1e4")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppb * 1e-9

    def to_global(self, local_t: float) -> float:
        """Inverse of the jitter-free clock map."""
        return (local_t - self.offset_s) / self.rate


def local_time(clock: ClockModel, global_t, rng: np.random.Generator | None = None):
    """Reading of ``clock`` at global time ``global_t``.

    A jitter draw is added only when ``rng`` is supplied, i.e. when the reading
    is a captured timestamp rather than the physical timebase.
    """
    t = global_t + clock.offset_s + clock.drift_ppb * 1e-9 * global_t
    if rng is not None and clock.timestamp_jitter_s > 0:
        t = t + clock.timestamp_jitter_s * rng.standard_normal(np.shape(global_t))
    return t


def apply_sync_correction(clock: ClockModel, offset_estimate: float) -> ClockModel:
    """Remove an estimated bias; the residual offset is ``offset - offset_estimate``."""
    return replace(clock, offset_s=clock.offset_s - offset_estimate)


def link_key(a: int, b: int) -> str:
    lo, hi = sorted((int(a), int(b)))
    return f"{lo}-{hi}"


@dataclass(frozen=True)
class ChannelModel:
    """Quasi-static propagation channel shared by every link.

    ``snr_db`` of ``None`` means noiseless; ``link_snr_db`` overrides it per
    unordered link, keyed ``"a-b"`` with ``a < b``. Multipath taps are
    ``(excess_delay_s, relative_amplitude)`` pairs added on top of the direct
    path. ``abstract_timestamp_sigma_s`` is the reception-timestamp noise used
    when waveforms are not simulated.
    """

    snr_db: float | None = 30.0
    link_snr_db: Mapping[str, float] = field(default_factory=dict)
    multipath: tuple[tuple[float, float], ...] = ()
    abstract_timestamp_sigma_s: float = 0.0

    def __post_init__(self) -> None:
        taps = tuple((float(d), float(a)) for d, a in self.multipath)
        for delay, amp in taps:
            if not delay > 0:
                raise ValueError("multipath excess delays must be positive")
            if not 0 <= amp < 1:
                raise ValueError("multipath relative amplitudes must lie in [0, 1)")
        if self.abstract_timestamp_sigma_s < 0:
            raise ValueError("abstract_timestamp_sigma_s must be non-negative")
        object.__setattr__(self, "multipath", taps)
        object.__setattr__(self, "link_snr_db", dict(self.link_snr_db))

    def snr_for(self, a: int, b: int) -> float | None:
        return self.link_snr_db.get(link_key(a, b), self.snr_db)
