"""Planar geometry shared by every stage of the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Position2D:
    """A point in the array plane, in meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def __add__(self, other: Position2D) -> Position2D:
        return Position2D(self.x + other.x, self.y + other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @classmethod
    def from_seq(cls, xy: Sequence[float]) -> Position2D:
        if len(xy) != 2:
            raise ValueError(f"expected [x, y], got {list(xy)!r}")
        return cls(float(xy[0]), float(xy[1]))


def euclidean_range(a: Position2D, b: Position2D) -> float:
    """Straight-line distance between two points."""
    return math.hypot(a.x - b.x, a.y - b.y)


def range_matrix(sources: Iterable[Position2D], targets: Iterable[Position2D]) -> np.ndarray:
    """Distances between every source (rows) and target (columns)."""
    s = np.array([p.as_array() for p in sources], dtype=float).reshape(-1, 2)
    t = np.array([p.as_array() for p in targets], dtype=float).reshape(-1, 2)
    return np.hypot(s[:, None, 0] - t[None, :, 0], s[:, None, 1] - t[None, :, 1])
