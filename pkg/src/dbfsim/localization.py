"""Array geometry from pairwise ranges, and accuracy statistics against ground truth.

Anchor convention: node 0 sits at the origin, node 1 on the +y axis at
``(0, d01)`` and node 2 is placed with ``x >= 0``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Position2D, euclidean_range
from .scenario import GroundTruth

CLAMP_TOLERANCE_M = 0.01
TRIANGLE_TOLERANCE_M = 0.05
ANCHOR_CONVENTION = "node0-origin/node1-+y/node2-x>=0"


class GeometryError(ValueError):
    pass


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RangeSet:
    d_01: float
    d_02: float
    d_12: float
    std: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        d = (self.d_01, self.d_02, self.d_12)
        if not all(math.isfinite(v) and v > 0 for v in d):
            raise GeometryError(f"ranges must be positive, got {d}")
        a, b, c = sorted(d)
        if c > a + b + TRIANGLE_TOLERANCE_M:
            raise GeometryError(f"ranges {d} violate the triangle inequality")

    def as_dict(self) -> dict[str, float]:
        return {"d01": self.d_01, "d02": self.d_02, "d12": self.d_12}

    @classmethod
    def from_geometry(cls, positions: dict[int, Position2D]) -> RangeSet:
        p = positions
        return cls(euclidean_range(p[0], p[1]), euclidean_range(p[0], p[2]), euclidean_range(p[1], p[2]))


@dataclass(frozen=True)
class ArrayGeometry:
    positions: dict[int, Position2D]
    convention: str = ANCHOR_CONVENTION
    clamped: bool = False

    def __getitem__(self, node_id: int) -> Position2D:
        return self.positions[node_id]

    def ordered(self) -> list[Position2D]:
        return [self.positions[k] for k in sorted(self.positions)]


def solve_node(d_0m: float, d_0n: float, d_mn: float) -> tuple[Position2D, bool]:
    """Place node ``n`` from its ranges to the origin node and the +y anchor ``m``.

    Returns the position and whether the x coordinate had to be clamped to
    zero because noise pushed the triangle slightly past collinear.

    Raises
    ------
    GeometryError
        When the triangle is infeasible by more than 1 cm.
    """
    if not d_0m > 0:
        raise GeometryError("anchor baseline d_0m must be positive")
    y = (d_0m**2 - d_mn**2 + d_0n**2) / (2 * d_0m)
    x2 = d_0n**2 - y**2
    if x2 >= 0:
        return Position2D(math.sqrt(x2), y), False
    if x2 >= -CLAMP_TOLERANCE_M**2:
        warnings.warn(f"x^2 = {x2:.3e} m^2 clamped to 0", ClampWarning, stacklevel=2)
        return Position2D(0.0, y), True
    raise GeometryError(f"infeasible triangle: x^2 = {x2:.3e} m^2")


def localize_array(ranges: RangeSet) -> ArrayGeometry:
    p2, clamped = solve_node(ranges.d_01, ranges.d_02, ranges.d_12)
    return ArrayGeometry(
        {0: Position2D(0.0, 0.0), 1: Position2D(0.0, ranges.d_01), 2: p2},
        clamped=clamped,
    )


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    bias: float
    std: float
    n: int


def _stats(errors: np.ndarray) -> ErrorStats:
    e = np.asarray(errors, dtype=float)
    return ErrorStats(
        rmse=float(np.sqrt(np.mean(e**2))),
        bias=float(np.mean(e)),
        std=float(np.std(e)),
        n=int(e.size),
    )


def localization_error(
    est: Sequence[ArrayGeometry],
    truth: GroundTruth,
    ranges: Sequence[RangeSet] | None = None,
) -> dict[str, ErrorStats]:
    """RMSE, mean bias and standard deviation over trials.

    Quantities are the three ranges (``d01``, ``d02``, ``d12``) and the
    unknown coordinates ``y1``, ``x2``, ``y2``. Range errors use ``ranges``
    when given, otherwise ranges recomputed from each estimated geometry.
    Standard deviation is the population value (ddof = 0).
    """
    if not est:
        raise ValueError("no trials to evaluate")
    if ranges is None:
        ranges = [RangeSet.from_geometry(g.positions) for g in est]
    if len(ranges) != len(est):
        raise ValueError("ranges and geometries differ in length")
    t = truth.positions
    true_ranges = {"d01": truth.range(0, 1), "d02": truth.range(0, 2), "d12": truth.range(1, 2)}
    out: dict[str, ErrorStats] = {}
    for key, true_val in true_ranges.items():
        out[key] = _stats(np.array([r.as_dict()[key] for r in ranges]) - true_val)
    out["y1"] = _stats(np.array([g[1].y for g in est]) - t[1].y)
    out["x2"] = _stats(np.array([g[2].x for g in est]) - t[2].x)
    out["y2"] = _stats(np.array([g[2].y for g in est]) - t[2].y)
    return out


CSV_COLUMNS = ("quantity", "rmse_m", "bias_m", "std_m", "n_trials")


def metrics_csv(stats: dict[str, ErrorStats], label_column: str | None = None, label: str = "") -> str:
    """Render error statistics as CSV text, one row per quantity."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ((label_column,) if label_column else ()) + CSV_COLUMNS
    w.writerow(cols)
    for name, s in stats.items():
        row = [name, f"{s.rmse:.9e}", f"{s.bias:.9e}", f"{s.std:.9e}", s.n]
        w.writerow(([label] if label_column else []) + row)
    return buf.getvalue()


def pooled(per_position: Iterable[tuple[Sequence[ArrayGeometry], GroundTruth]]) -> dict[str, ErrorStats]:
    """Statistics pooled over several layouts, each with its own ground truth."""
    errors: dict[str, list[float]] = {}
    for est, truth in per_position:
        t = truth.positions
        true_ranges = {"d01": truth.range(0, 1), "d02": truth.range(0, 2), "d12": truth.range(1, 2)}
        for g in est:
            r = RangeSet.from_geometry(g.positions).as_dict()
            for key, v in true_ranges.items():
                errors.setdefault(key, []).append(r[key] - v)
            errors.setdefault("y1", []).append(g[1].y - t[1].y)
            errors.setdefault("x2", []).append(g[2].x - t[2].x)
            errors.setdefault("y2", []).append(g[2].y - t[2].y)
    if not errors:
        raise ValueError("no trials to evaluate")
    return {k: _stats(np.array(v)) for k, v in errors.items()}
