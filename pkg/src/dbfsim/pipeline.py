"""End-to-end runs: calibrate, synchronize, range, localize, beamform, evaluate.

Seeding
-------
Every random stream comes from ``numpy.random.SeedSequence(master_seed,
spawn_key=(trial, stage))``. Stage 0 is calibration and is always drawn with
trial 0, so every trial of a run shares one calibration. Stage 1 drives the
synchronization epoch, stage 2 the injected beamforming errors. Any stage of any
trial can therefore be replayed on its own.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .beamformer import (
    AmplitudeModel,
    BeamWeights,
    DegeneracyError,
    GridSpec,
    PowerMap,
    beam_trial,
    perturbed_geometry,
    power_map,
)
from .estimation import DetectionError
from .geometry import Position2D
from .localization import (
    ArrayGeometry,
    ErrorStats,
    GeometryError,
    RangeSet,
    localization_error,
    localize_array,
    metrics_csv,
)
from .scenario import Mode, ScenarioConfig, ground_truth, scenario_to_dict
from .sync import (
    CalibrationError,
    CalibrationRecord,
    ExchangeError,
    SyncParams,
    TimestampQuad,
    calibrate,
    epoch_clocks,
    est_clock_offset,
    est_range,
    exchange_record,
    run_exchange,
)
from .waveforms import synthesize, write_waveform

STAGE_CALIBRATION = 0
STAGE_SYNC = 1
STAGE_BEAM = 2
PAIRS = ((0, 1), (0, 2), (1, 2))
DEFAULT_GRID = GridSpec(-1.0, 3.0, 0.0, 6.0, 0.02)

STAGE_ERRORS = (
    ExchangeError,
    CalibrationError,
    DetectionError,
    GeometryError,
    DegeneracyError,
)


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def stage_rng(master_seed: int, trial: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial, stage)))


@dataclass(frozen=True)
class PipelineOptions:
    """Knobs that are not part of the physical scenario."""

    sync: SyncParams = SyncParams()
    calibration_epochs: int = 16
    extra_position_sigma_m: float = 0.0
    extra_sync_sigma_s: float = 0.0
    normalize_weights: bool = False
    grid: GridSpec | None = DEFAULT_GRID
    amplitude_model: AmplitudeModel = AmplitudeModel.PHASE_ONLY

    def __post_init__(self) -> None:
        if self.calibration_epochs < 1:
            raise ValueError("calibration_epochs must be at least 1")


@dataclass
class RunReport:
    scenario: str
    seed: int
    trial: int
    mode: str
    exchanges: list[TimestampQuad] = field(default_factory=list)
    sync_errors_s: dict[int, float] = field(default_factory=dict)
    calibration: CalibrationRecord | None = None
    ranges: RangeSet | None = None
    geometry: ArrayGeometry | None = None
    weights: BeamWeights | None = None
    metrics: dict[str, Any] = field(default_factory=dict)
    power_map: PowerMap | None = None
    wall_time_s: float = 0.0
    failed_stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def summary(self) -> dict[str, Any]:
        """Deterministic, JSON-ready view (wall time excluded)."""
        out: dict[str, Any] = {
            "scenario": self.scenario,
            "seed": self.seed,
            "trial": self.trial,
            "mode": self.mode,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }
        if self.ranges is not None:
            out["ranges_m"] = self.ranges.as_dict()
        if self.geometry is not None:
            out["geometry"] = {str(k): [p.x, p.y] for k, p in sorted(self.geometry.positions.items())}
        if self.weights is not None:
            out["weights"] = self.weights.to_dict()
        out["sync_errors_s"] = {str(k): v for k, v in sorted(self.sync_errors_s.items())}
        out["metrics"] = self.metrics
        return out


def noiseless(config: ScenarioConfig) -> ScenarioConfig:
    """Same scenario with receiver noise, timestamp noise and jitter removed."""
    channel = replace(config.channel, snr_db=None, link_snr_db={}, abstract_timestamp_sigma_s=0.0)
    nodes = tuple(replace(n, clock=replace(n.clock, timestamp_jitter_s=0.0)) for n in config.nodes)
    return replace(config, channel=channel, nodes=nodes)


def error_free(config: ScenarioConfig) -> ScenarioConfig:
    """Noiseless, drift-free, abstract-timestamp version of a scenario.

    Every stage is then analytically exact, which isolates modeling bugs.
    """
    base = noiseless(config)
    nodes = tuple(replace(n, clock=replace(n.clock, drift_ppb=0.0)) for n in base.nodes)
    return replace(base, nodes=nodes, mode=Mode.ABSTRACT)


def _pairs(config: ScenarioConfig) -> tuple[tuple[int, int], ...]:
    ids = set(config.node_ids)
    if ids != {0, 1, 2}:
        raise PipelineError("config", f"the pipeline needs nodes 0, 1 and 2, got {sorted(ids)}")
    return PAIRS


def run_calibration(
    config: ScenarioConfig,
    seed: int | None = None,
    options: PipelineOptions = PipelineOptions(),
) -> tuple[CalibrationRecord, list[TimestampQuad]]:
    """Estimate each pair's system delay with the array at its surveyed calibration layout."""
    seed = config.seed if seed is None else seed
    rng = stage_rng(seed, 0, STAGE_CALIBRATION)
    truth = ground_truth(config, calibration=True)
    record = CalibrationRecord({}, config.name or "scenario")
    quads: list[TimestampQuad] = []
    for pair in _pairs(config):
        pq = []
        for _ in range(options.calibration_epochs):
            clocks = epoch_clocks(config, rng, options.sync.coarse_alignment_s)
            pq.append(run_exchange(
                config, pair, rng, clocks=clocks, positions=truth.positions, params=options.sync
            ))
        record = record.merged(calibrate(pq, truth.range(*pair), record.source))
        quads.extend(pq)
    return record, quads


def register(geometry: ArrayGeometry, anchor0: Position2D, anchor1: Position2D, mirror: bool) -> ArrayGeometry:
    """Map an anchor-frame geometry into the scenario frame.

    The anchor frame puts node 0 at the origin and node 1 on +y; the scenario
    frame is recovered from the surveyed node-0 position, the bearing to node 1
    and which side of that baseline node 2 lies on.
    """
    ux, uy = anchor1.x - anchor0.x, anchor1.y - anchor0.y
    norm = math.hypot(ux, uy)
    if norm == 0:
        raise GeometryError("anchors coincide")
    ux, uy = ux / norm, uy / norm
    out = {}
    for nid, p in geometry.positions.items():
        x = -p.x if mirror else p.x
        # local +y -> (ux, uy), local +x -> (uy, -ux)
        out[nid] = Position2D(anchor0.x + x * uy + p.y * ux, anchor0.y - x * ux + p.y * uy)
    return ArrayGeometry(out, "scenario", geometry.clamped)


def _frame(config: ScenarioConfig) -> tuple[Position2D, Position2D, bool]:
    p = ground_truth(config).positions
    a0, a1, n2 = p[0], p[1], p[2]
    cross = (a1.x - a0.x) * (n2.y - a0.y) - (a1.y - a0.y) * (n2.x - a0.x)
    return a0, a1, cross > 0


def run_pipeline(
    config: ScenarioConfig,
    seed: int | None = None,
    *,
    trial: int = 0,
    calibration: CalibrationRecord | None = None,
    options: PipelineOptions = PipelineOptions(),
    with_power_map: bool = True,
) -> RunReport:
    """One full trial. Stage failures are recorded in the report, not raised.

    Weights are solved on the estimated geometry; captures and maps use the
    true one, so every beamforming impairment comes from estimation error.
    """
    seed = config.seed if seed is None else seed
    report = RunReport(config.name, seed, trial, config.mode.value)
    t0 = time.perf_counter()
    stage = "calibrate"
    try:
        _pairs(config)
        if calibration is None:
            calibration, _ = run_calibration(config, seed, options)
        report.calibration = calibration

        stage = "sync"
        rng = stage_rng(seed, trial, STAGE_SYNC)
        clocks = epoch_clocks(config, rng, options.sync.coarse_alignment_s)
        quads = [run_exchange(config, pair, rng, clocks=clocks, params=options.sync) for pair in PAIRS]
        report.exchanges = quads
        # a node that corrects its clock by the estimate keeps the estimation
        # error; transmitting on that clock makes it late by the negative error
        for q in quads:
            if q.pair[0] == 0 and q.truth is not None:
                report.sync_errors_s[q.pair[1]] = -(est_clock_offset(q) - q.truth.offset_s)
        report.sync_errors_s[0] = 0.0

        stage = "range"
        d = {q.pair: est_range(q, calibration) for q in quads}
        report.ranges = RangeSet(d[(0, 1)], d[(0, 2)], d[(1, 2)])

        stage = "localize"
        local = localize_array(report.ranges)
        geometry = register(local, *_frame(config))
        report.geometry = geometry
        truth = ground_truth(config)
        loc = localization_error([geometry], truth, [report.ranges])

        stage = "beamform"
        beam_rng = stage_rng(seed, trial, STAGE_BEAM)
        est_beam = ArrayGeometry(
            {n.id: geometry[n.id] + n.lever_arm for n in config.nodes}, geometry.convention
        )
        if options.extra_position_sigma_m > 0:
            est_beam = perturbed_geometry(est_beam.positions, options.extra_position_sigma_m, beam_rng)
        sync_err = dict(report.sync_errors_s)
        if options.extra_sync_sigma_s > 0:
            for nid in sync_err:
                if nid != 0:
                    sync_err[nid] += float(beam_rng.normal(0.0, options.extra_sync_sigma_s))
        report.sync_errors_s = sync_err
        bt = beam_trial(config, est_beam, sync_err, normalize=options.normalize_weights)
        report.weights = bt.weights

        stage = "evaluate"
        if with_power_map and options.grid is not None:
            true_beam = ArrayGeometry({n.id: n.beam_position for n in config.nodes})
            report.power_map = power_map(
                options.grid, true_beam, bt.weights, config.wavenumber, options.amplitude_model
            )
        report.metrics = {
            "range_error_m": {k: v.bias for k, v in loc.items() if k.startswith("d")},
            "coordinate_error_m": {k: v.bias for k, v in loc.items() if not k.startswith("d")},
            "focus_power": bt.focus_power,
            "null_power": bt.null_power,
            "null_depth_db": bt.null_depth_db,
            "coherent_gain": bt.coherent_gain,
            "coherent_gain_lcmp": bt.coherent_gain_lcmp,
            "clamped": geometry.clamped,
        }
    except STAGE_ERRORS as err:
        report.failed_stage, report.error = stage, str(err)
    except PipelineError as err:
        report.failed_stage, report.error = err.stage, str(err)
    report.wall_time_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# Monte-Carlo


SWEEP_AXES = (
    "snr_db",
    "abstract_timestamp_sigma_s",
    "position_sigma_m",
    "sync_sigma_s",
    "calibration_epochs",
)


def apply_axis(
    config: ScenarioConfig, options: PipelineOptions, axis: str, value: float
) -> tuple[ScenarioConfig, PipelineOptions]:
    if axis == "snr_db":
        return replace(config, channel=replace(config.channel, snr_db=float(value))), options
    if axis == "abstract_timestamp_sigma_s":
        ch = replace(config.channel, abstract_timestamp_sigma_s=float(value))
        return replace(config, channel=ch), options
    if axis == "position_sigma_m":
        return config, replace(options, extra_position_sigma_m=float(value))
    if axis == "sync_sigma_s":
        return config, replace(options, extra_sync_sigma_s=float(value))
    if axis == "calibration_epochs":
        return config, replace(options, calibration_epochs=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


@dataclass
class SweepPoint:
    axis: str | None
    value: float | None
    reports: list[RunReport]
    calibration: CalibrationRecord | None = None
    calibration_quads: list[TimestampQuad] = field(default_factory=list)

    def successful(self) -> list[RunReport]:
        return [r for r in self.reports if r.ok]

    def localization(self, config: ScenarioConfig) -> dict[str, ErrorStats]:
        ok = self.successful()
        if not ok:
            raise ValueError("no successful trials")
        return localization_error([r.geometry for r in ok], ground_truth(config), [r.ranges for r in ok])

    def beam_summary(self) -> dict[str, float]:
        ok = self.successful()
        out: dict[str, float] = {"n_trials": len(self.reports), "n_failed": len(self.reports) - len(ok)}
        for key in ("null_depth_db", "focus_power", "null_power", "coherent_gain", "coherent_gain_lcmp"):
            vals = np.array([r.metrics[key] for r in ok]) if ok else np.array([math.nan])
            out[f"{key}_median"] = float(np.median(vals))
            out[f"{key}_mean"] = float(np.mean(vals))
        return out


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    seed: int
    n_trials: int
    points: list[SweepPoint]
    wall_time_s: float = 0.0

    @property
    def reports(self) -> list[RunReport]:
        return [r for p in self.points for r in p.reports]


def _trial_job(args) -> RunReport:
    config, seed, trial, calibration, options, with_map = args
    return run_pipeline(
        config, seed, trial=trial, calibration=calibration, options=options, with_power_map=with_map
    )


def run_monte_carlo(
    config: ScenarioConfig,
    n_trials: int,
    sweep: Mapping[str, Sequence[float]] | None = None,
    *,
    seed: int | None = None,
    options: PipelineOptions = PipelineOptions(),
    jobs: int = 1,
) -> MonteCarloResult:
    """Repeated pipeline trials, optionally over a one-axis parameter grid.

    Trial ``i`` always uses the streams derived from ``(seed, i)``, whatever
    the sweep point or worker that runs it, and results are assembled in trial
    order, so the outcome does not depend on ``jobs``. Only trial 0 renders a
    power map.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    seed = config.seed if seed is None else seed
    sweep = dict(sweep or {})
    if len(sweep) > 1:
        raise ValueError("sweeps take a single axis")
    grid: list[tuple[str | None, float | None]] = [(None, None)]
    for axis, values in sweep.items():
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
        if len(values) == 0:
            raise ValueError(f"sweep axis {axis!r} has no values")
        grid = [(axis, float(v)) for v in values]

    t0 = time.perf_counter()
    points = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for axis, value in grid:
            cfg, opts = (config, options) if axis is None else apply_axis(config, options, axis, value)
            try:
                cal, cal_quads = run_calibration(cfg, seed, opts)
            except STAGE_ERRORS as err:
                failed = RunReport(cfg.name, seed, 0, cfg.mode.value, failed_stage="calibrate", error=str(err))
                points.append(SweepPoint(axis, value, [failed]))
                continue
            args = [(cfg, seed, i, cal, opts, i == 0) for i in range(n_trials)]
            reports = list(pool.map(_trial_job, args)) if pool else [_trial_job(a) for a in args]
            points.append(SweepPoint(axis, value, reports, cal, cal_quads))
    finally:
        if pool is not None:
            pool.shutdown()
    return MonteCarloResult(config, seed, n_trials, points, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Output files

OUTPUT_FILES = (
    "scenario.json",
    "calibration.json",
    "localization_metrics.csv",
    "beam_metrics.csv",
    "sweep_metrics.csv",
    "exchanges.jsonl",
    "beamforming.jsonl",
    "power_map.csv",
)


class OutputError(OSError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.9e}" if isinstance(v, float) else str(v)


def _beam_csv(result: MonteCarloResult) -> str:
    lines = ["sweep_value,trial,null_depth_db,focus_power,null_power,coherent_gain,coherent_gain_lcmp,failed_stage"]
    for p in result.points:
        sv = "" if p.value is None else _fmt(p.value)
        for r in p.reports:
            m = r.metrics
            vals = [
                _fmt(m[k]) if k in m else ""
                for k in ("null_depth_db", "focus_power", "null_power", "coherent_gain", "coherent_gain_lcmp")
            ]
            lines.append(",".join([sv, str(r.trial), *vals, r.failed_stage or ""]))
    return "\n".join(lines) + "\n"


def _sweep_csv(result: MonteCarloResult) -> str:
    lines = ["axis,value,quantity,rmse_m,bias_m,std_m,n_trials"]
    for p in result.points:
        if not p.successful():
            continue
        for name, s in p.localization(result.config).items():
            lines.append(",".join([
                p.axis or "", "" if p.value is None else _fmt(p.value),
                name, _fmt(s.rmse), _fmt(s.bias), _fmt(s.std), str(s.n),
            ]))
    return "\n".join(lines) + "\n"


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def emit_outputs(
    result: MonteCarloResult | RunReport,
    out_dir: str | Path,
    *,
    config: ScenarioConfig | None = None,
    dump_waveforms: bool = False,
) -> Path:
    """Write the run's data files and a manifest listing each with its SHA-256.

    Everything except ``manifest.json`` is a pure function of scenario, seed
    and trial count. Wall time lives only in the manifest.

    Raises
    ------
    OutputError
        When the directory or a file cannot be written; the message names the path.
    """
    if isinstance(result, RunReport):
        if config is None:
            raise ValueError("config is required when emitting a single report")
        result = MonteCarloResult(config, result.seed, 1, [SweepPoint(None, None, [result], result.calibration)])
    cfg = result.config
    out = Path(out_dir)
    files: dict[str, str] = {}
    files["scenario.json"] = json.dumps(scenario_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    cal = {
        f"{p.axis}={p.value}" if p.axis else "default": (
            {f"{a}-{b}": t for (a, b), t in sorted(p.calibration.tau_cal_s.items())} if p.calibration else None
        )
        for p in result.points
    }
    files["calibration.json"] = json.dumps(cal, indent=2, sort_keys=True) + "\n"
    base = result.points[0]
    if base.successful():
        files["localization_metrics.csv"] = metrics_csv(base.localization(cfg))
    files["beam_metrics.csv"] = _beam_csv(result)
    if len(result.points) > 1 or result.points[0].axis:
        files["sweep_metrics.csv"] = _sweep_csv(result)
    ex = []
    for p in result.points:
        for q in p.calibration_quads:
            rec = exchange_record(q, cfg.mode, result.seed, p.calibration)
            rec.update(stage="calibrate", trial=0, sweep_value=p.value)
            ex.append(rec)
        for r in p.reports:
            for q in r.exchanges:
                rec = exchange_record(q, cfg.mode, result.seed, r.calibration)
                rec.update(stage="sync", trial=r.trial, sweep_value=p.value)
                ex.append(rec)
    files["exchanges.jsonl"] = _jsonl(ex)
    files["beamforming.jsonl"] = _jsonl(
        {**r.summary(), "sweep_value": p.value} for p in result.points for r in p.reports
    )
    pm = next((r.power_map for r in result.reports if r.power_map is not None), None)
    if pm is not None:
        files["power_map.csv"] = pm.to_csv()

    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8")
            written.append(out / name)
        if dump_waveforms:
            wdir = out / "waveforms"
            wdir.mkdir(exist_ok=True)
            written.extend(write_waveform(synthesize(cfg.sync_waveform), wdir / "sync.cf32", role="sync"))
            for nid, pat in sorted(cfg.patterns().items()):
                written.extend(write_waveform(
                    synthesize(cfg.beam_waveform, pat), wdir / f"beam_node{nid}.cf32", role="beam", node=nid
                ))
    except OSError as err:
        raise OutputError(f"cannot write outputs to {err.filename or out}: {err.strerror or err}") from err

    entries = []
    for path in sorted(written):
        data = path.read_bytes()
        entries.append({
            "path": path.relative_to(out).as_posix(),
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        })
    manifest = {
        "package_version": __version__,
        "scenario": cfg.name,
        "seed": result.seed,
        "n_trials": result.n_trials,
        "mode": cfg.mode.value,
        "n_failed": sum(1 for r in result.reports if not r.ok),
        "wall_time_s": result.wall_time_s,
        "files": entries,
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as err:
        raise OutputError(f"cannot write {out / 'manifest.json'}: {err.strerror or err}") from err
    return out / "manifest.json"
