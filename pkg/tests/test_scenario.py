from __future__ import annotations

import json

import pytest

from dbfsim.clock import ChannelModel, ClockModel
from dbfsim.geometry import Position2D
from dbfsim.scenario import (
    BEAM_WAVEFORM,
    SYNC_WAVEFORM,
    TX_PATTERNS,
    Mode,
    Objective,
    ScenarioError,
    ValidationError,
    builtin_scenario,
    builtin_scenarios,
    dump_scenario,
    ground_truth,
    load_scenario,
    scenario_to_dict,
)
from dbfsim.waveforms import WaveformKind


def _doc(name="exp-a-pos1"):
    return scenario_to_dict(builtin_scenario(name))


def test_builtin_set_names():
    names = [s.name for s in builtin_scenarios()]
    assert names == ["calibration"] + [f"exp-a-pos{i}" for i in range(1, 5)] + [
        f"exp-b-pos{i}" for i in range(1, 5)
    ]


@pytest.mark.parametrize(
    "name, node2, rx0, rx1",
    [
        ("calibration", (1.53, 1.03), (0.8, 5.07), (1.3, 5.07)),
        ("exp-a-pos1", (1.93, 1.06), (0.8, 5.07), (1.3, 5.07)),
        ("exp-a-pos2", (1.71, 1.09), (0.8, 5.07), (1.3, 5.07)),
        ("exp-a-pos3", (1.49, 1.04), (0.8, 5.07), (1.3, 5.07)),
        ("exp-a-pos4", (1.16, 1.05), (0.8, 5.07), (1.3, 5.07)),
        ("exp-b-pos1", (1.16, 1.05), (0.8, 5.07), (1.3, 5.07)),
        ("exp-b-pos2", (1.16, 1.05), (0.9, 5.07), (1.4, 5.07)),
        ("exp-b-pos3", (1.16, 1.05), (1.0, 5.07), (1.5, 5.07)),
        ("exp-b-pos4", (1.16, 1.05), (0.1, 5.07), (1.6, 5.07)),
    ],
)
def test_builtin_layouts_match_reference(name, node2, rx0, rx1):
    cfg = builtin_scenario(name)
    assert cfg.node(0).true_position == Position2D(0.0, 0.0)
    assert cfg.node(1).true_position == Position2D(0.0, 1.85)
    assert cfg.node(2).true_position == Position2D(*node2)
    rx = {r.id: r for r in cfg.receivers}
    assert rx[0].true_position == Position2D(*rx0) and rx[0].objective is Objective.FOCUS
    assert rx[1].true_position == Position2D(*rx1) and rx[1].objective is Objective.NULL


def test_builtin_waveforms_match_reference():
    s, b = SYNC_WAVEFORM, BEAM_WAVEFORM
    assert (s.kind, s.carrier_hz, s.bandwidth_hz) == (WaveformKind.DUAL_LFM, 4.8e9, 40e6)
    assert (s.duration_s, s.sample_rate_hz, s.rise_fall_s) == (10e-6, 200e6, 5e-9)
    assert (b.kind, b.carrier_hz, b.bandwidth_hz, b.data_rate_hz) == (WaveformKind.ASK, 2.1e9, 40e6, 1.5e6)
    assert builtin_scenario("exp-a-pos1").carrier_beam_hz == 2.1e9
    assert TX_PATTERNS[0] == (0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0)
    assert TX_PATTERNS[1] == (0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0)
    assert TX_PATTERNS[2] == (0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 1, 0)


@pytest.mark.parametrize("cfg", builtin_scenarios(), ids=lambda c: c.name)
def test_builtins_round_trip(cfg):
    assert load_scenario(dump_scenario(cfg)) == cfg


def test_load_from_path(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(dump_scenario(builtin_scenario("exp-a-pos1")))
    cfg = load_scenario(p)
    assert cfg.node(2).true_position == Position2D(1.93, 1.06)


def test_empty_receivers_rejected():
    doc = _doc()
    doc["receivers"] = []
    with pytest.raises(ValidationError):
        load_scenario(json.dumps(doc))


def test_duplicate_node_rejected():
    doc = _doc()
    doc["nodes"][1]["id"] = 0
    with pytest.raises(ValidationError, match="duplicate"):
        load_scenario(json.dumps(doc))


def test_unknown_key_rejected_with_field_name():
    doc = _doc()
    doc["nodes"][0]["colour"] = "red"
    with pytest.raises(ScenarioError, match="nodes"):
        load_scenario(json.dumps(doc))


def test_missing_key_names_field():
    doc = _doc()
    del doc["carrier_beam_hz"]
    with pytest.raises(ScenarioError, match="carrier_beam_hz"):
        load_scenario(json.dumps(doc))


def test_wrong_type_names_path():
    doc = _doc()
    doc["receivers"][0]["position"] = [1.0]
    with pytest.raises(ScenarioError, match=r"receivers\[0\]\.position"):
        load_scenario(json.dumps(doc))


def test_invalid_json():
    with pytest.raises(ScenarioError):
        load_scenario("{nodes:")


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda d: d["nodes"].pop(0), "node 0"),
        (lambda d: d.__setitem__("carrier_beam_hz", 0), "carrier_beam_hz"),
        (lambda d: d["nodes"][1].__setitem__("hardware_delay_s", -1e-9), "hardware_delay"),
        (lambda d: d["receivers"][1].__setitem__("position", d["receivers"][0]["position"]), "co-located"),
        (lambda d: d["channel"].__setitem__("multipath", [[-1e-9, 0.5]]), "excess"),
        (lambda d: d["channel"].__setitem__("multipath", [[1e-9, 1.0]]), "amplitude"),
        (lambda d: d["nodes"][1]["clock"].__setitem__("timestamp_jitter_s", -1.0), "jitter"),
        (lambda d: d["sync_waveform"].__setitem__("bandwidth_hz", 300e6), "bandwidth"),
        (lambda d: d["nodes"][2].__setitem__("tx_pattern", [1, 0]), "length"),
    ],
)
def test_invariant_violations(mutate, match):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ValidationError, match=match):
        load_scenario(json.dumps(doc))


def test_ground_truth_consistent():
    cfg = builtin_scenario("exp-a-pos1")
    gt = ground_truth(cfg)
    assert gt.range(0, 2) == gt.range(2, 0)
    assert gt.range(0, 1) == pytest.approx(1.85, abs=1e-12)
    cal = ground_truth(cfg, calibration=True)
    assert cal.positions[2] == Position2D(1.53, 1.03)


def test_clock_and_channel_validation():
    with pytest.raises(ValueError):
        ClockModel(drift_ppb=2e4)
    ch = ChannelModel(snr_db=30, link_snr_db={"0-2": 12.0})
    assert ch.snr_for(2, 0) == 12.0
    assert ch.snr_for(0, 1) == 30


def test_mode_override():
    cfg = builtin_scenario("exp-a-pos1")
    assert cfg.mode is Mode.WAVEFORM
