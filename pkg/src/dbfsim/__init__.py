"""Simulation of a three-node distributed phased array.

Nodes synchronize and range each other with two-way time transfer, localize
themselves from the ranges, and form a near-field beam with a null using
LCMP weights. Modules follow the processing chain:

``geometry`` / ``scenario``  layouts, clocks, channel and JSON scenarios
``waveforms``               sync pulses and keyed beamforming trains
``estimation``              matched filtering and sub-sample peak refinement
``sync``                    exchanges, calibration and ranging
``localization``            closed-form array geometry and error statistics
``beamformer``              weights, fields, captures and received metrics
``pipeline``                end-to-end trials, Monte-Carlo and output files
"""

__version__ = "0.1.0"

from .geometry import SPEED_OF_LIGHT, Position2D, euclidean_range  # noqa: E402
from .scenario import (  # noqa: E402
    Mode,
    ScenarioConfig,
    ScenarioError,
    ValidationError,
    builtin_scenario,
    builtin_scenarios,
    load_scenario,
)
from .localization import ArrayGeometry, RangeSet, localize_array, solve_node  # noqa: E402
from .beamformer import (  # noqa: E402
    BeamWeights,
    ConstraintSpec,
    constraint_matrix,
    field_at,
    lcmp_weights,
    normalize_weights,
    power_map,
)
from .pipeline import RunReport, emit_outputs, run_monte_carlo, run_pipeline  # noqa: E402

__all__ = [
    "SPEED_OF_LIGHT",
    "Position2D",
    "euclidean_range",
    "Mode",
    "ScenarioConfig",
    "ScenarioError",
    "ValidationError",
    "builtin_scenario",
    "builtin_scenarios",
    "load_scenario",
    "ArrayGeometry",
    "RangeSet",
    "localize_array",
    "solve_node",
    "BeamWeights",
    "ConstraintSpec",
    "constraint_matrix",
    "field_at",
    "lcmp_weights",
    "normalize_weights",
    "power_map",
    "RunReport",
    "emit_outputs",
    "run_monte_carlo",
    "run_pipeline",
]
