"""Two-way time transfer, range calibration and array self-localization.

Run with ``python3 demos/02_sync_and_localization.py``.
"""

# %% Setup
import numpy as np

from dbfsim import builtin_scenario
from dbfsim.pipeline import PipelineOptions, run_calibration, run_monte_carlo, run_pipeline
from dbfsim.sync import est_clock_offset, est_prop_delay, run_exchange

cfg = builtin_scenario("exp-a-pos1")
opts = PipelineOptions(grid=None)

# %% One exchange
# Each quad holds four timestamps read on two different clocks. Half the
# round trip is the delay; half the asymmetry is the clock offset.
q = run_exchange(cfg, (0, 2), np.random.default_rng(0))
print(f"delay  est {1e9 * est_prop_delay(q):9.4f} ns  (light time + hardware {1e9 * (q.truth.delay_s + q.truth.tau_cal_s):9.4f} ns)")
print(f"offset est {1e9 * est_clock_offset(q):9.4f} ns  (truth {1e9 * q.truth.offset_s:9.4f} ns)")

# %% Calibration
# Exchanges at the surveyed calibration layout expose the fixed system delay
# that must be removed before a round trip becomes a range.
record, _ = run_calibration(cfg, seed=1, options=opts)
for pair, tau in sorted(record.tau_cal_s.items()):
    print(f"tau_cal {pair}: {1e9 * tau:.4f} ns")

# %% A single trial
report = run_pipeline(cfg, seed=1, calibration=record, options=opts)
for nid, p in sorted(report.geometry.positions.items()):
    t = cfg.node(nid).true_position
    print(f"node {nid}: estimate ({p.x:+.4f}, {p.y:+.4f}) m   truth ({t.x:+.4f}, {t.y:+.4f}) m")

# %% Accuracy against SNR
result = run_monte_carlo(cfg, 50, {"snr_db": [0, 10, 20, 30]}, seed=5, options=opts)
print("\n snr_db  range RMSE (mm)  coordinate RMSE (mm)")
for point in result.points:
    loc = point.localization(cfg)
    r = max(loc[k].rmse for k in ("d01", "d02", "d12"))
    c = max(loc[k].rmse for k in ("y1", "x2", "y2"))
    print(f"{point.value:7.0f}  {1e3 * r:15.2f}  {1e3 * c:20.2f}")

# %% Per-position and pooled statistics over experiment A
from dbfsim.localization import metrics_csv, pooled
from dbfsim.scenario import ground_truth

per_position = []
for i in range(1, 5):
    c = builtin_scenario(f"exp-a-pos{i}")
    point = run_monte_carlo(c, 30, seed=i, options=opts).points[0]
    per_position.append(([r.geometry for r in point.successful()], ground_truth(c)))
    print(f"\nexp-a-pos{i}")
    print(metrics_csv(point.localization(c)), end="")
print("\npooled over positions 1-4")
print(metrics_csv(pooled(per_position)), end="")
