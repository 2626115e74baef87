"""
Scenario configuration: node and receiver layout, clocks, channel and waveforms.

A scenario is one JSON document::

    {
      "name": "exp-a-pos1",                  # optional
      "nodes": [{"id": 0, "position": [0, 0], "clock": {...},
                 "hardware_delay_s": 1e-8, "calibration_position": [x, y],
                 "lever_arm": [dx, dy], "tx_pattern": [0, 1, ...]}, ...],
      "receivers": [{"id": 0, "position": [x, y], "objective": "focus"}, ...],
      "sync_waveform": {...}, "beam_waveform": {...},
      "channel": {"snr_db": 30, "link_snr_db": {"0-2": 25},
                  "multipath": [[25e-9, 0.6]], "abstract_timestamp_sigma_s": 7e-12},
      "carrier_beam_hz": 2.1e9, "seed": 1, "mode": "waveform"
    }

Units are meters, seconds and hertz throughout. Unknown keys are rejected.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .clock import ChannelModel, ClockModel
from .geometry import SPEED_OF_LIGHT, Position2D, euclidean_range
from .waveforms import BitPattern, SynthesisError, WaveformKind, WaveformSpec


class ScenarioError(ValueError):
    """The document does not match the scenario schema."""


class ValidationError(ValueError):
    """The document parsed but describes an inconsistent scenario."""


class Objective(str, enum.Enum):
    FOCUS = "focus"
    NULL = "null"


class Mode(str, enum.Enum):
    WAVEFORM = "waveform"
    ABSTRACT = "abstract"


@dataclass(frozen=True)
class NodeSpec:
    id: int
    true_position: Position2D
    clock: ClockModel = field(default_factory=ClockModel)
    hardware_delay_s: float = 0.0
    calibration_position: Position2D | None = None
    lever_arm: Position2D = Position2D(0.0, 0.0)
    tx_pattern: tuple[int, ...] | None = None

    @property
    def beam_position(self) -> Position2D:
        """Phase center of the beamforming antenna."""
        return self.true_position + self.lever_arm


@dataclass(frozen=True)
class ReceiverSpec:
    id: int
    true_position: Position2D
    objective: Objective = Objective.FOCUS


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: tuple[NodeSpec, ...]
    receivers: tuple[ReceiverSpec, ...]
    sync_waveform: WaveformSpec
    beam_waveform: WaveformSpec
    channel: ChannelModel
    carrier_beam_hz: float
    seed: int = 0
    mode: Mode = Mode.WAVEFORM
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        object.__setattr__(self, "mode", Mode(self.mode))
        validate(self)

    def node(self, node_id: int) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi * self.carrier_beam_hz / SPEED_OF_LIGHT

    def patterns(self) -> dict[int, BitPattern]:
        rate = self.beam_waveform.data_rate_hz
        if rate is None:
            raise ValidationError("beam_waveform.data_rate_hz is required for ASK patterns")
        missing = [n.id for n in self.nodes if n.tx_pattern is None]
        if missing:
            raise ValidationError(f"nodes {missing} have no tx_pattern")
        return {n.id: BitPattern(n.tx_pattern, rate) for n in self.nodes}

    def with_node_positions(self, positions: Mapping[int, Position2D]) -> ScenarioConfig:
        nodes = tuple(
            replace(n, true_position=positions.get(n.id, n.true_position)) for n in self.nodes
        )
        return replace(self, nodes=nodes)


@dataclass(frozen=True)
class GroundTruth:
    positions: dict[int, Position2D]
    ranges: dict[tuple[int, int], float]

    def range(self, a: int, b: int) -> float:
        return self.ranges[(min(a, b), max(a, b))]


def ground_truth(config: ScenarioConfig, calibration: bool = False) -> GroundTruth:
    """Node positions and pairwise ranges, optionally at the calibration layout."""
    positions = {}
    for n in config.nodes:
        p = n.calibration_position if calibration and n.calibration_position else n.true_position
        positions[n.id] = p
    ranges = {
        (a, b): euclidean_range(positions[a], positions[b])
        for a, b in itertools.combinations(sorted(positions), 2)
    }
    return GroundTruth(positions, ranges)


def validate(config: ScenarioConfig) -> None:
    ids = [n.id for n in config.nodes]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate node ids in {ids}")
    if 0 not in ids:
        raise ValidationError("node 0 (the primary) is missing")
    for n in config.nodes:
        if n.hardware_delay_s < 0:
            raise ValidationError(f"node {n.id}: hardware_delay_s must be non-negative")
        if n.tx_pattern is not None and not n.tx_pattern:
            raise ValidationError(f"node {n.id}: tx_pattern is empty")
    if not config.receivers:
        raise ValidationError("at least one receiver is required")
    rx_ids = [r.id for r in config.receivers]
    if len(set(rx_ids)) != len(rx_ids):
        raise ValidationError(f"duplicate receiver ids in {rx_ids}")
    for a, b in itertools.combinations(config.receivers, 2):
        if a.true_position == b.true_position:
            raise ValidationError(f"receivers {a.id} and {b.id} are co-located")
    if not config.carrier_beam_hz > 0:
        raise ValidationError("carrier_beam_hz must be positive")
    for key in config.channel.link_snr_db:
        try:
            lo, hi = (int(v) for v in key.split("-"))
        except ValueError:
            raise ValidationError(f"channel.link_snr_db key {key!r} is not 'a-b'") from None
        if lo not in ids or hi not in ids:
            raise ValidationError(f"channel.link_snr_db key {key!r} names an unknown node")
    patterns = [n.tx_pattern for n in config.nodes if n.tx_pattern is not None]
    if len({len(p) for p in patterns}) > 1:
        raise ValidationError("tx_pattern lengths differ between nodes")


# ---------------------------------------------------------------------------
# JSON schema and (de)serialization

_NUM = {"type": "number"}
_POS = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_WAVEFORM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "carrier_hz", "bandwidth_hz", "duration_s", "sample_rate_hz"],
    "properties": {
        "kind": {"enum": [k.value for k in WaveformKind]},
        "carrier_hz": _NUM,
        "bandwidth_hz": _NUM,
        "duration_s": _NUM,
        "sample_rate_hz": _NUM,
        "amplitude": _NUM,
        "rise_fall_s": _NUM,
        "phase_rad": _NUM,
        "data_rate_hz": {"type": ["number", "null"]},
    },
}
SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "nodes", "receivers", "sync_waveform", "beam_waveform",
        "channel", "carrier_beam_hz", "seed", "mode",
    ],
    "properties": {
        "name": {"type": "string"},
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "position"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "position": _POS,
                    "clock": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "offset_s": _NUM,
                            "drift_ppb": _NUM,
                            "timestamp_jitter_s": _NUM,
                        },
                    },
                    "hardware_delay_s": _NUM,
                    "calibration_position": {"anyOf": [_POS, {"type": "null"}]},
                    "lever_arm": _POS,
                    "tx_pattern": {
                        "anyOf": [
                            {"type": "array", "items": {"enum": [0, 1]}},
                            {"type": "null"},
                        ]
                    },
                },
            },
        },
        "receivers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "position", "objective"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "position": _POS,
                    "objective": {"enum": [o.value for o in Objective]},
                },
            },
        },
        "sync_waveform": _WAVEFORM,
        "beam_waveform": _WAVEFORM,
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "snr_db": {"type": ["number", "null"]},
                "link_snr_db": {"type": "object", "additionalProperties": _NUM},
                "multipath": {"type": "array", "items": {**_POS}},
                "abstract_timestamp_sigma_s": _NUM,
            },
        },
        "carrier_beam_hz": _NUM,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "mode": {"enum": [m.value for m in Mode]},
    },
}


def _path(err: jsonschema.ValidationError) -> str:
    out = ""
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<document>"


def scenario_from_dict(doc: Mapping[str, Any]) -> ScenarioConfig:
    """Build a validated config from a parsed JSON document."""
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ScenarioError(f"{_path(err)}: {err.message}") from None

    def waveform(key: str) -> WaveformSpec:
        try:
            return WaveformSpec(**doc[key])
        except SynthesisError as err:
            raise ValidationError(f"{key}: {err}") from None

    try:
        nodes = tuple(
            NodeSpec(
                id=n["id"],
                true_position=Position2D.from_seq(n["position"]),
                clock=ClockModel(**n.get("clock", {})),
                hardware_delay_s=float(n.get("hardware_delay_s", 0.0)),
                calibration_position=(
                    Position2D.from_seq(n["calibration_position"])
                    if n.get("calibration_position") is not None
                    else None
                ),
                lever_arm=Position2D.from_seq(n.get("lever_arm", [0.0, 0.0])),
                tx_pattern=tuple(n["tx_pattern"]) if n.get("tx_pattern") is not None else None,
            )
            for n in doc["nodes"]
        )
        receivers = tuple(
            ReceiverSpec(r["id"], Position2D.from_seq(r["position"]), Objective(r["objective"]))
            for r in doc["receivers"]
        )
        ch = doc["channel"]
        channel = ChannelModel(
            snr_db=ch.get("snr_db", None),
            link_snr_db=ch.get("link_snr_db", {}),
            multipath=tuple(tuple(t) for t in ch.get("multipath", [])),
            abstract_timestamp_sigma_s=ch.get("abstract_timestamp_sigma_s", 0.0),
        )
    except ValidationError:
        raise
    except ValueError as err:
        raise ValidationError(str(err)) from None
    return ScenarioConfig(
        nodes=nodes,
        receivers=receivers,
        sync_waveform=waveform("sync_waveform"),
        beam_waveform=waveform("beam_waveform"),
        channel=channel,
        carrier_beam_hz=float(doc["carrier_beam_hz"]),
        seed=int(doc["seed"]),
        mode=Mode(doc["mode"]),
        name=doc.get("name", ""),
    )


def load_scenario(document: str | bytes | Path) -> ScenarioConfig:
    """Parse and validate a scenario from JSON text or a file path."""
    if isinstance(document, Path):
        text = document.read_text()
    else:
        text = document.decode() if isinstance(document, bytes) else document
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ScenarioError(f"invalid JSON: {err}") from None
    return scenario_from_dict(doc)


def _waveform_dict(w: WaveformSpec) -> dict[str, Any]:
    return {
        "kind": w.kind.value,
        "carrier_hz": w.carrier_hz,
        "bandwidth_hz": w.bandwidth_hz,
        "duration_s": w.duration_s,
        "sample_rate_hz": w.sample_rate_hz,
        "amplitude": w.amplitude,
        "rise_fall_s": w.rise_fall_s,
        "phase_rad": w.phase_rad,
        "data_rate_hz": w.data_rate_hz,
    }


def scenario_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    nodes = []
    for n in config.nodes:
        nodes.append({
            "id": n.id,
            "position": [n.true_position.x, n.true_position.y],
            "clock": {
                "offset_s": n.clock.offset_s,
                "drift_ppb": n.clock.drift_ppb,
                "timestamp_jitter_s": n.clock.timestamp_jitter_s,
            },
            "hardware_delay_s": n.hardware_delay_s,
            "calibration_position": (
                list(n.calibration_position) if n.calibration_position is not None else None
            ),
            "lever_arm": list(n.lever_arm),
            "tx_pattern": list(n.tx_pattern) if n.tx_pattern is not None else None,
        })
    ch = config.channel
    return {
        "name": config.name,
        "nodes": nodes,
        "receivers": [
            {"id": r.id, "position": list(r.true_position), "objective": r.objective.value}
            for r in config.receivers
        ],
        "sync_waveform": _waveform_dict(config.sync_waveform),
        "beam_waveform": _waveform_dict(config.beam_waveform),
        "channel": {
            "snr_db": ch.snr_db,
            "link_snr_db": dict(ch.link_snr_db),
            "multipath": [list(t) for t in ch.multipath],
            "abstract_timestamp_sigma_s": ch.abstract_timestamp_sigma_s,
        },
        "carrier_beam_hz": config.carrier_beam_hz,
        "seed": config.seed,
        "mode": config.mode.value,
    }


def dump_scenario(config: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(config), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Built-in experiment layouts

SYNC_WAVEFORM = WaveformSpec(
    kind=WaveformKind.DUAL_LFM,
    carrier_hz=4.8e9,
    bandwidth_hz=40e6,
    duration_s=10e-6,
    sample_rate_hz=200e6,
    rise_fall_s=5e-9,
)
BEAM_WAVEFORM = WaveformSpec(
    kind=WaveformKind.ASK,
    carrier_hz=2.1e9,
    bandwidth_hz=40e6,
    duration_s=10e-6,
    sample_rate_hz=200e6,
    rise_fall_s=5e-9,
    data_rate_hz=1.5e6,
)
# oscilloscope trigger; carried as a constant, never simulated
TRIGGER_WAVEFORM = WaveformSpec(
    kind=WaveformKind.CW,
    carrier_hz=4.3e9,
    bandwidth_hz=50e6,
    duration_s=10e-6,
    sample_rate_hz=200e6,
    rise_fall_s=10e-9,
)
TX_PATTERNS = {
    0: (0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0),
    1: (0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0),
    2: (0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 1, 0),
}
DEFAULT_CLOCKS = {
    0: ClockModel(0.0, 0.0, 300e-15),
    1: ClockModel(23e-9, 20.0, 300e-15),
    2: ClockModel(-61e-9, -35.0, 300e-15),
}
DEFAULT_HARDWARE_DELAY_S = 10e-9
DEFAULT_CHANNEL = ChannelModel(snr_db=30.0, abstract_timestamp_sigma_s=7e-12)

NODE0 = (0.0, 0.0)
NODE1 = (0.0, 1.85)
NODE2_CALIBRATION = (1.53, 1.03)
EXP_A_NODE2 = [(1.93, 1.06), (1.71, 1.09), (1.49, 1.04), (1.16, 1.05)]
EXP_A_RX = ((0.8, 5.07), (1.3, 5.07))
EXP_B_NODE2 = (1.16, 1.05)
EXP_B_RX = [
    ((0.8, 5.07), (1.3, 5.07)),
    ((0.9, 5.07), (1.4, 5.07)),
    ((1.0, 5.07), (1.5, 5.07)),
    ((0.1, 5.07), (1.6, 5.07)),
]


def make_scenario(
    name: str,
    node2: tuple[float, float],
    rx: tuple[tuple[float, float], tuple[float, float]],
    seed: int,
    calibrate_node2: bool = True,
) -> ScenarioConfig:
    layout = {0: NODE0, 1: NODE1, 2: node2}
    nodes = []
    for nid, xy in layout.items():
        cal = None
        if nid == 2 and calibrate_node2:
            cal = Position2D(*NODE2_CALIBRATION)
        nodes.append(NodeSpec(
            id=nid,
            true_position=Position2D(*xy),
            clock=DEFAULT_CLOCKS[nid],
            hardware_delay_s=DEFAULT_HARDWARE_DELAY_S,
            calibration_position=cal,
            tx_pattern=TX_PATTERNS[nid],
        ))
    receivers = (
        ReceiverSpec(0, Position2D(*rx[0]), Objective.FOCUS),
        ReceiverSpec(1, Position2D(*rx[1]), Objective.NULL),
    )
    return ScenarioConfig(
        nodes=tuple(nodes),
        receivers=receivers,
        sync_waveform=SYNC_WAVEFORM,
        beam_waveform=BEAM_WAVEFORM,
        channel=DEFAULT_CHANNEL,
        carrier_beam_hz=2.1e9,
        seed=seed,
        mode=Mode.WAVEFORM,
        name=name,
    )


def builtin_scenarios() -> list[ScenarioConfig]:
    """Calibration layout, the four moving-node layouts and the four steering layouts."""
    out = [make_scenario("calibration", NODE2_CALIBRATION, EXP_A_RX, 100, calibrate_node2=False)]
    for i, node2 in enumerate(EXP_A_NODE2, start=1):
        out.append(make_scenario(f"exp-a-pos{i}", node2, EXP_A_RX, 100 + i))
    for i, rx in enumerate(EXP_B_RX, start=1):
        out.append(make_scenario(f"exp-b-pos{i}", EXP_B_NODE2, rx, 200 + i))
    return out


def builtin_scenario(name: str) -> ScenarioConfig:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise KeyError(f"unknown builtin scenario {name!r}")
