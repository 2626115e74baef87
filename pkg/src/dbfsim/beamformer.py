"""Near-field LCMP beam/null weights, field synthesis and received-pulse metrics.

Steering entries are unit phasors ``exp(-1j * k * r)``. Weights come from the
quiescent constrained solution ``w = g^H (C^H C)^-1 C^H``, so the array's
response at each constrained receiver equals its objective exactly when the
geometry used for the solve matches the physical one.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT, Position2D, euclidean_range
from .localization import ArrayGeometry
from .scenario import Objective, ScenarioConfig
from .waveforms import BitPattern, SampledWaveform, ask_slot_samples, synthesize

GRAM_CONDITION_LIMIT = 1e8
MAX_MAP_POINTS = 10_000_000
R_MIN_M = 0.1


class DegeneracyError(ValueError):
    """The constraint Gram matrix is singular or badly conditioned."""


class ResourceError(RuntimeError):
    pass


class AmplitudeModel(str, enum.Enum):
    PHASE_ONLY = "phase_only"
    INVERSE_R = "inverse_r"


@dataclass(frozen=True)
class ConstraintSpec:
    receiver_positions: tuple[Position2D, ...]
    g: tuple[int, ...]
    wavenumber: float

    def __post_init__(self) -> None:
        rx = tuple(self.receiver_positions)
        g = tuple(int(v) for v in self.g)
        object.__setattr__(self, "receiver_positions", rx)
        object.__setattr__(self, "g", g)
        if len(g) != len(rx):
            raise ValueError(f"{len(g)} objectives for {len(rx)} receivers")
        if any(v not in (0, 1) for v in g):
            raise ValueError("objectives must be 1 (focus) or 0 (null)")
        if 1 not in g:
            raise ValueError("at least one receiver must be a focus")
        for (i, a), (j, b) in itertools.combinations(enumerate(rx), 2):
            if a == b:
                raise ValueError(f"receivers {i} and {j} coincide")
        if not (math.isfinite(self.wavenumber) and self.wavenumber > 0):
            raise ValueError("wavenumber must be positive")

    @classmethod
    def from_scenario(cls, config: ScenarioConfig) -> ConstraintSpec:
        rx = sorted(config.receivers, key=lambda r: r.id)
        return cls(
            tuple(r.true_position for r in rx),
            tuple(1 if r.objective is Objective.FOCUS else 0 for r in rx),
            config.wavenumber,
        )

    def swapped(self, g: Sequence[int]) -> ConstraintSpec:
        return ConstraintSpec(self.receiver_positions, tuple(g), self.wavenumber)


@dataclass(frozen=True)
class ConstraintMatrix:
    """``entries[n, m]`` is the steering phasor from node ``n`` to receiver ``m``."""

    entries: np.ndarray
    node_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        c = np.asarray(self.entries, dtype=complex)
        if c.ndim != 2:
            raise ValueError("constraint matrix must be 2-D")
        if not np.allclose(np.abs(c), 1.0, atol=1e-12):
            raise ValueError("constraint entries must be unit phasors")
        object.__setattr__(self, "entries", c)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(range(c.shape[0])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def gram_condition(self) -> float:
        c = self.entries
        return float(np.linalg.cond(c.conj().T @ c))


@dataclass(frozen=True)
class BeamWeights:
    w: np.ndarray
    normalization: str = "raw"
    node_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=complex).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "w", w)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(range(w.size)))

    def __len__(self) -> int:
        return self.w.size

    def scaled(self, factor: complex) -> BeamWeights:
        return BeamWeights(self.w * factor, self.normalization, self.node_ids)

    def to_dict(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "re": self.w.real.tolist(),
            "im": self.w.imag.tolist(),
            "normalization": self.normalization,
        }


def steering_matrix(
    nodes: Sequence[Position2D], points: Sequence[Position2D], k: float
) -> np.ndarray:
    r = np.array([[euclidean_range(n, p) for p in points] for n in nodes], dtype=float)
    return np.exp(-1j * k * r)


def constraint_matrix(geometry: ArrayGeometry, spec: ConstraintSpec) -> ConstraintMatrix:
    ids = tuple(sorted(geometry.positions))
    nodes = [geometry.positions[i] for i in ids]
    return ConstraintMatrix(steering_matrix(nodes, spec.receiver_positions, spec.wavenumber), ids)


def _most_collinear_pair(c: np.ndarray) -> tuple[int, int]:
    m = c.shape[1]
    if m < 2:
        return (0, 0)
    norms = np.linalg.norm(c, axis=0)
    best, pair = -1.0, (0, 1)
    for i, j in itertools.combinations(range(m), 2):
        coh = abs(np.vdot(c[:, i], c[:, j])) / (norms[i] * norms[j])
        if coh > best:
            best, pair = coh, (i, j)
    return pair


def lcmp_weights(C: ConstraintMatrix, g: Sequence[int]) -> BeamWeights:
    """Quiescent LCMP solution ``w = g^H (C^H C)^-1 C^H``.

    Parameters
    ----------
    C : ConstraintMatrix
        N nodes by M receivers.
    g : sequence of {0, 1}
        Desired response at each receiver.

    Returns
    -------
    BeamWeights
        Row vector ``w`` of length N with ``w @ C == g`` (up to rounding).

    Raises
    ------
    DegeneracyError
        If the M x M Gram matrix has condition number of 1e8 or more, or more
        receivers are constrained than there are nodes.
    """
    c = C.entries
    gv = np.asarray(g, dtype=complex)
    n, m = c.shape
    if gv.size != m:
        raise ValueError(f"{gv.size} objectives for {m} receivers")
    gram = c.conj().T @ c
    cond = float(np.linalg.cond(gram)) if m <= n else math.inf
    if not cond < GRAM_CONDITION_LIMIT:
        i, j = _most_collinear_pair(c)
        raise DegeneracyError(
            f"Gram condition {cond:.3g} >= {GRAM_CONDITION_LIMIT:.0e}; "
            f"receivers {i} and {j} are not separable"
        )
    w = gv.conj() @ np.linalg.solve(gram, c.conj().T)
    return BeamWeights(w, "raw", C.node_ids)


def normalize_weights(w: BeamWeights) -> BeamWeights:
    """Scale so the largest per-node magnitude is 1 (transmit amplitude limit)."""
    peak = float(np.max(np.abs(w.w))) if len(w) else 0.0
    if peak == 0:
        raise ValueError("cannot normalize all-zero weights")
    return BeamWeights(w.w / peak, "peak", w.node_ids)


def _field(xs: np.ndarray, ys: np.ndarray, nodes, w: np.ndarray, k: float, model) -> np.ndarray:
    model = AmplitudeModel(model)
    out = np.zeros(np.broadcast(xs, ys).shape, dtype=complex)
    for p, wn in zip(nodes, w):
        r = np.hypot(xs - p.x, ys - p.y)
        a = 1.0 if model is AmplitudeModel.PHASE_ONLY else 1.0 / np.maximum(r, R_MIN_M)
        out += wn * a * np.exp(-1j * k * r)
    return out


def field_at(
    point: Position2D,
    truth_geometry: ArrayGeometry,
    w: BeamWeights,
    k: float,
    amplitude_model: AmplitudeModel | str = AmplitudeModel.PHASE_ONLY,
) -> complex:
    """Complex field at ``point`` radiated by the physical array with weights ``w``."""
    nodes = [truth_geometry.positions[i] for i in w.node_ids]
    return complex(_field(np.float64(point.x), np.float64(point.y), nodes, w.w, k, amplitude_model))


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    step: float

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError("grid bounds are inverted")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(math.floor((self.x_max - self.x_min) / self.step + 1e-9)) + 1
        ny = int(math.floor((self.y_max - self.y_min) / self.step + 1e-9)) + 1
        return self.x_min + self.step * np.arange(nx), self.y_min + self.step * np.arange(ny)

    @property
    def n_points(self) -> int:
        nx = (self.x_max - self.x_min) / self.step + 1
        ny = (self.y_max - self.y_min) / self.step + 1
        return int(nx) * int(ny)


@dataclass(frozen=True)
class PowerMap:
    """``power[iy, ix]`` is ``|field|^2`` at ``(x[ix], y[iy])``; rows follow y."""

    x: np.ndarray
    y: np.ndarray
    power: np.ndarray
    amplitude_model: str = AmplitudeModel.PHASE_ONLY.value

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape

    def power_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.power)

    def value_at(self, p: Position2D) -> float:
        ix = int(np.argmin(np.abs(self.x - p.x)))
        iy = int(np.argmin(np.abs(self.y - p.y)))
        return float(self.power[iy, ix])

    def argmax(self) -> Position2D:
        iy, ix = np.unravel_index(int(np.argmax(self.power)), self.power.shape)
        return Position2D(float(self.x[ix]), float(self.y[iy]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(("x", "y", "power_db"))
        db = self.power_db()
        for iy, yv in enumerate(self.y):
            for ix, xv in enumerate(self.x):
                wr.writerow((f"{xv:.6f}", f"{yv:.6f}", f"{db[iy, ix]:.6f}"))
        return buf.getvalue()


def power_map(
    grid: GridSpec,
    truth_geometry: ArrayGeometry,
    w: BeamWeights,
    k: float,
    amplitude_model: AmplitudeModel | str = AmplitudeModel.PHASE_ONLY,
) -> PowerMap:
    """Field power over a rectangular grid.

    Raises
    ------
    ResourceError
        If the grid has more than 1e7 points.
    """
    if grid.n_points > MAX_MAP_POINTS:
        raise ResourceError(f"grid of {grid.n_points} points exceeds {MAX_MAP_POINTS}")
    xs, ys = grid.axes()
    nodes = [truth_geometry.positions[i] for i in w.node_ids]
    f = _field(xs[None, :], ys[:, None], nodes, w.w, k, amplitude_model)
    return PowerMap(xs, ys, np.abs(f) ** 2, AmplitudeModel(amplitude_model).value)


# ---------------------------------------------------------------------------
# Pulse-level captures


@dataclass(frozen=True)
class SlotMap:
    """Which keying slots carry one node, a pair, or every node."""

    single: dict[int, int]
    pairs: dict[tuple[int, int], int]
    all_nodes: int
    slot_samples: int
    pulse_samples: int

    @classmethod
    def from_patterns(
        cls, patterns: Mapping[int, BitPattern], slot_samples: int, pulse_samples: int
    ) -> SlotMap:
        ids = sorted(patterns)
        lengths = {len(p) for p in patterns.values()}
        if len(lengths) != 1:
            raise ValueError("bit patterns differ in length")
        single: dict[int, int] = {}
        pairs: dict[tuple[int, int], int] = {}
        all_slot = None
        for s in range(lengths.pop()):
            on = tuple(i for i in ids if patterns[i].bits[s])
            if len(on) == 1:
                single.setdefault(on[0], s)
            elif len(on) == len(ids) and len(ids) > 1:
                all_slot = s if all_slot is None else all_slot
            elif len(on) == 2:
                pairs.setdefault(on, s)
        missing = [i for i in ids if i not in single]
        if missing or all_slot is None:
            raise ValueError(
                f"patterns lack an individual slot for nodes {missing}"
                if missing else "patterns lack a slot with every node on"
            )
        return cls(single, pairs, all_slot, slot_samples, pulse_samples)

    @classmethod
    def from_scenario(cls, config: ScenarioConfig) -> SlotMap:
        spec = config.beam_waveform
        return cls.from_patterns(config.patterns(), ask_slot_samples(spec), spec.n_samples)


def simulate_rx_capture(
    config: ScenarioConfig,
    w: BeamWeights,
    patterns: Mapping[int, BitPattern] | None = None,
    *,
    positions: Mapping[int, Position2D] | None = None,
    sync_errors_s: Mapping[int, float] | None = None,
) -> dict[int, SampledWaveform]:
    """Complex-baseband capture at every receiver.

    Each node's keyed pulse train is delayed by ``r / c`` plus its residual
    transmit-epoch error, rotated by the matching carrier phase and scaled by
    its weight; the captures are the sums of those contributions.

    Parameters
    ----------
    positions : mapping, optional
        Physical antenna positions; defaults to each node's beam position.
    sync_errors_s : mapping, optional
        Residual synchronization error of each node (seconds, late positive).
    """
    patterns = dict(config.patterns() if patterns is None else patterns)
    if len({len(p) for p in patterns.values()}) != 1:
        raise ValueError("bit patterns differ in length")
    if set(patterns) != set(w.node_ids):
        raise ValueError(f"patterns for {sorted(patterns)} but weights for {list(w.node_ids)}")
    spec = config.beam_waveform
    fs = spec.sample_rate_hz
    f_c = config.carrier_beam_hz
    trains = {i: synthesize(spec, patterns[i]).samples for i in w.node_ids}
    n = next(iter(trains.values())).size
    src_t = np.arange(n) / fs
    pos = {nd.id: nd.beam_position for nd in config.nodes}
    pos.update(positions or {})
    errs = dict(sync_errors_s or {})
    delays = {
        (nid, rx.id): euclidean_range(pos[nid], rx.true_position) / SPEED_OF_LIGHT + errs.get(nid, 0.0)
        for nid in w.node_ids
        for rx in config.receivers
    }
    pad = int(math.ceil(max(max(delays.values()), 0.0) * fs)) + 1
    t = np.arange(n + pad) / fs
    out = {}
    for rx in sorted(config.receivers, key=lambda r: r.id):
        x = np.zeros(t.size, dtype=complex)
        for wn, nid in zip(w.w, w.node_ids):
            d = delays[(nid, rx.id)]
            s = trains[nid]
            delayed = np.interp(t - d, src_t, s.real, left=0, right=0) + 1j * np.interp(
                t - d, src_t, s.imag, left=0, right=0
            )
            x += wn * np.exp(-2j * math.pi * f_c * d) * delayed
        out[rx.id] = SampledWaveform(x, fs, 0.0, spec.kind.value)
    return out


def slot_amplitude(capture: SampledWaveform, slots: SlotMap, slot: int, margin: float = 0.1) -> float:
    """Mean envelope magnitude over the interior of one keyed slot.

    ``margin`` is the fraction of the pulse dropped at each end, which keeps the
    taper and the propagation offset out of the average.
    """
    start = slot * slots.slot_samples
    cut = max(1, int(round(margin * slots.pulse_samples)))
    lo, hi = start + cut, start + slots.pulse_samples - cut
    if hi <= lo or hi > len(capture):
        raise ValueError(f"slot {slot} is outside the capture")
    return float(np.mean(np.abs(capture.samples[lo:hi])))


def coherent_gain(capture: SampledWaveform, slots: SlotMap) -> float:
    """Amplitude of the all-node slot over the sum of the individual-slot amplitudes.

    An amplitude ratio: 1.0 means the contributions add fully in phase.
    """
    individual = [slot_amplitude(capture, slots, s) for s in slots.single.values()]
    total = sum(individual)
    if total <= 0:
        raise ValueError("individual slots carry no energy")
    return slot_amplitude(capture, slots, slots.all_nodes) / total


def slot_power(capture: SampledWaveform, slots: SlotMap, slot: int, margin: float = 0.1) -> float:
    start = slot * slots.slot_samples
    cut = max(1, int(round(margin * slots.pulse_samples)))
    seg = capture.samples[start + cut:start + slots.pulse_samples - cut]
    if seg.size == 0:
        raise ValueError(f"slot {slot} is outside the capture")
    return float(np.mean(np.abs(seg) ** 2))


def rx_power_metrics(
    captures: Mapping[int, SampledWaveform],
    slots: SlotMap,
    focus_id: int = 0,
    null_id: int = 1,
) -> dict[str, float]:
    """Mean power of the all-node slot at the focus and null receivers."""
    if focus_id not in captures or null_id not in captures:
        raise ValueError(f"captures for receivers {focus_id} and {null_id} are required")
    focus = slot_power(captures[focus_id], slots, slots.all_nodes)
    null = slot_power(captures[null_id], slots, slots.all_nodes)
    if focus <= 0 or null <= 0:
        raise ValueError("zero-power capture")
    return {
        "focus_power": focus,
        "null_power": null,
        "null_depth_db": 10 * math.log10(focus / null),
    }


# ---------------------------------------------------------------------------
# Injected-error trials


@dataclass(frozen=True)
class ErrorModel:
    """Gaussian errors injected between the true and the assumed array state."""

    position_sigma_m: float = 0.0
    sync_sigma_s: float = 0.0

    def __post_init__(self) -> None:
        if self.position_sigma_m < 0 or self.sync_sigma_s < 0:
            raise ValueError("error sigmas must be non-negative")


@dataclass(frozen=True)
class BeamTrial:
    weights: BeamWeights
    null_depth_db: float
    focus_power: float
    null_power: float
    coherent_gain: float
    coherent_gain_lcmp: float
    sync_errors_s: dict[int, float] = field(default_factory=dict)


def focus_weights(geometry: ArrayGeometry, focus: Position2D, k: float) -> BeamWeights:
    """Single-constraint focus on one point (pure conjugate phasing)."""
    spec = ConstraintSpec((focus,), (1,), k)
    return lcmp_weights(constraint_matrix(geometry, spec), spec.g)


def beam_trial(
    config: ScenarioConfig,
    estimated: ArrayGeometry,
    sync_errors_s: Mapping[int, float] | None = None,
    *,
    normalize: bool = False,
) -> BeamTrial:
    """Solve weights on ``estimated`` and evaluate them on the scenario's true layout.

    Coherent gain is measured twice: at the focus receiver with a focus-only
    beam (the quantity whose ideal value is 1) and with the focus/null weights.
    """
    spec = ConstraintSpec.from_scenario(config)
    w = lcmp_weights(constraint_matrix(estimated, spec), spec.g)
    if normalize:
        w = normalize_weights(w)
    slots = SlotMap.from_scenario(config)
    caps = simulate_rx_capture(config, w, sync_errors_s=sync_errors_s)
    rx_sorted = sorted(config.receivers, key=lambda r: r.id)
    focus_rx = next(r for r in rx_sorted if r.objective is Objective.FOCUS)
    null_rx = next((r for r in rx_sorted if r.objective is Objective.NULL), None)
    if null_rx is None:
        raise ValueError("scenario has no null receiver")
    metrics = rx_power_metrics(caps, slots, focus_rx.id, null_rx.id)
    wf = focus_weights(estimated, focus_rx.true_position, spec.wavenumber)
    caps_f = simulate_rx_capture(config, wf, sync_errors_s=sync_errors_s)
    return BeamTrial(
        weights=w,
        null_depth_db=metrics["null_depth_db"],
        focus_power=metrics["focus_power"],
        null_power=metrics["null_power"],
        coherent_gain=coherent_gain(caps_f[focus_rx.id], slots),
        coherent_gain_lcmp=coherent_gain(caps[focus_rx.id], slots),
        sync_errors_s=dict(sync_errors_s or {}),
    )


def perturbed_geometry(
    truth: Mapping[int, Position2D], sigma_m: float, rng: np.random.Generator
) -> ArrayGeometry:
    """Assumed layout: every node coordinate off by independent N(0, sigma)."""
    pos = {}
    for nid in sorted(truth):
        dx, dy = rng.normal(0.0, sigma_m, 2) if sigma_m > 0 else (0.0, 0.0)
        pos[nid] = Position2D(truth[nid].x + float(dx), truth[nid].y + float(dy))
    return ArrayGeometry(pos)


def injected_error_trial(
    config: ScenarioConfig,
    errors: ErrorModel,
    rng: np.random.Generator,
    *,
    normalize: bool = False,
) -> BeamTrial:
    """One beamforming trial with Gaussian position and synchronization errors.

    Node 0 keeps zero timing error; it is the time reference.
    """
    truth = {n.id: n.beam_position for n in config.nodes}
    est = perturbed_geometry(truth, errors.position_sigma_m, rng)
    # the primary defines system time, so only the others carry residual error
    sync = {
        nid: float(rng.normal(0.0, errors.sync_sigma_s)) if errors.sync_sigma_s > 0 and nid != 0 else 0.0
        for nid in sorted(truth)
    }
    return beam_trial(config, est, sync, normalize=normalize)
