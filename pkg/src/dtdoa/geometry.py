"""Planar geometry: positions, distances, differential ranges, tick conversion."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Vacuum speed of light [m/s]; the air correction is far below timestamp noise.
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Position:
    """A 2D point in metres."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"coordinates must be finite, got ({self.x}, {self.y})")


def distance(a: Position, b: Position) -> float:
    """Euclidean distance between two points, in metres."""
    return math.hypot(a.x - b.x, a.y - b.y)


def diff_range(p: Position, anchor_k: Position, anchor_1: Position) -> float:
    """Differential range of ``p`` with respect to an anchor pair.

    Returns ``|p - anchor_k| - |p - anchor_1|``. By the triangle inequality
    the result is bounded in magnitude by the inter-anchor baseline.
    """
    if anchor_k == anchor_1:
        raise ValueError("anchors must be distinct")
    return distance(p, anchor_k) - distance(p, anchor_1)


def ticks_to_meters(ticks: float, tick_rate_hz: float):
    """Convert a clock-tick count to the distance light travels in that time.

    Accepts scalars or numpy arrays of any float precision; the input
    precision is preserved.
    """
    if tick_rate_hz <= 0:
        raise ValueError(f"tick rate must be positive, got {tick_rate_hz}")
    return ticks * (SPEED_OF_LIGHT / tick_rate_hz)


@dataclass(frozen=True)
class QuadrupletGeometry:
    """The four-node geometry behind one double difference.

    Two transmitters (a blind-position hypothesis and the pivot) and two
    receiving anchors. Holds the purely geometric differential ranges used
    to predict or verify measurements.
    """

    pivot: Position
    ref_anchor: Position
    other_anchor: Position
    blind_hypothesis: Position | None = None

    def __post_init__(self) -> None:
        if self.ref_anchor == self.other_anchor:
            raise ValueError("reference and other anchor must be distinct")

    def pivot_diff_range(self) -> float:
        """Known differential range of the pivot (fully determined)."""
        return diff_range(self.pivot, self.other_anchor, self.ref_anchor)

    def blind_diff_range(self) -> float:
        """Differential range of the blind hypothesis; requires one to be set."""
        if self.blind_hypothesis is None:
            raise ValueError("no blind hypothesis set")
        return diff_range(self.blind_hypothesis, self.other_anchor, self.ref_anchor)
