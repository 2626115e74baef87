"""Ranging waveforms: correlation shape, sidelobes and the cost of ambiguity.

Run with ``python3 demos/01_waveforms.py``. Figures land in ``demos/figures``
when matplotlib is installed.
"""

# %% Setup
from dataclasses import replace
from pathlib import Path

import numpy as np

from dbfsim.estimation import add_awgn, estimate_arrival, matched_filter, sidelobe_metrics
from dbfsim.scenario import SYNC_WAVEFORM
from dbfsim.waveforms import SampledWaveform, WaveformKind, synthesize

KINDS = ("two_tone", "dual_lfm", "lfm")
refs = {k: synthesize(replace(SYNC_WAVEFORM, kind=WaveformKind(k), rise_fall_s=0.0)) for k in KINDS}

# %% Autocorrelation metrics
# Two tones give the sharpest peak but a correlation that barely decays; the
# chirps trade a wider mainlobe for -13 dB sidelobes.
series = {k: matched_filter(r, r) for k, r in refs.items()}
for k, s in series.items():
    m = sidelobe_metrics(s)
    print(f"{k:>9}: PSLR {m['peak_sidelobe_ratio_db']:7.2f} dB, "
          f"-3 dB mainlobe {1e9 * m['mainlobe_width_s']:.2f} ns")

# %% Ambiguity at low SNR
# Delay a pulse by a fraction of a sample and count estimates that land on a
# neighbouring lobe (more than half a 25 ns period away).
fs = SYNC_WAVEFORM.sample_rate_hz
rng = np.random.default_rng(3)
for k in ("two_tone", "dual_lfm"):
    ref = synthesize(replace(SYNC_WAVEFORM, kind=WaveformKind(k)))
    pad = np.zeros(300, complex)
    rx = SampledWaveform(np.concatenate([pad[:120], ref.samples, pad]), fs, 0.0, k)
    errs = np.array([estimate_arrival(add_awgn(rx, 0.0, rng), ref).arrival_s - 120 / fs for _ in range(300)])
    print(f"{k:>9} at 0 dB: {np.mean(np.abs(errs) > 12.5e-9):.1%} ambiguity errors")

# %% Figure
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    out = Path(__file__).with_name("figures")
    out.mkdir(exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, s in series.items():
        lag_ns = 1e9 * s.lags() / s.sample_rate_hz
        keep = np.abs(lag_ns) < 150
        ax.plot(lag_ns[keep], 20 * np.log10(s.magnitudes[keep] / s.magnitudes.max() + 1e-12), label=k)
    ax.set(xlabel="lag (ns)", ylabel="normalized |R| (dB)", ylim=(-40, 2))
    ax.legend()
    fig.savefig(out / "autocorrelation.png", dpi=120, bbox_inches="tight")
    print(f"wrote {out / 'autocorrelation.png'}")
