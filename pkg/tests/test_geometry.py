import math

import numpy as np
import pytest

from dtdoa.geometry import (
    SPEED_OF_LIGHT,
    Position,
    QuadrupletGeometry,
    diff_range,
    distance,
    ticks_to_meters,
)


def test_distance_345_triangle():
    assert distance(Position(0, 0), Position(3, 4)) == 5.0


def test_distance_identity():
    assert distance(Position(1, 1), Position(1, 1)) == 0.0


def test_distance_box_diagonal():
    # sqrt(16^2 + 20^2), evaluated independently
    expected = math.sqrt(656)
    assert distance(Position(0, 0), Position(16, 20)) == pytest.approx(expected, rel=1e-15)
    assert expected == pytest.approx(25.612496949731394, rel=1e-15)


def test_position_rejects_non_finite():
    with pytest.raises(ValueError):
        Position(float("nan"), 0.0)
    with pytest.raises(ValueError):
        Position(0.0, float("inf"))


def test_diff_range_on_perpendicular_bisector():
    a1, a2 = Position(-3, 0), Position(3, 0)
    for y in (0.0, 1.0, -7.5):
        assert diff_range(Position(0, y), a2, a1) == pytest.approx(0.0, abs=1e-12)


def test_diff_range_at_anchor():
    a1, a2 = Position(1, 2), Position(5, -1)
    assert diff_range(a1, a2, a1) == pytest.approx(distance(a1, a2), rel=1e-15)


def test_diff_range_square_symmetry():
    # Blind and pivot on one diagonal of a square, anchors on the other:
    # both differential ranges vanish and therefore coincide.
    a = 10.0
    blind, pivot = Position(0, 0), Position(a, a)
    k1, k2 = Position(a, 0), Position(0, a)
    assert diff_range(blind, k2, k1) == pytest.approx(diff_range(pivot, k2, k1), abs=1e-12)
    assert diff_range(blind, k2, k1) == pytest.approx(0.0, abs=1e-12)


def test_diff_range_requires_distinct_anchors():
    with pytest.raises(ValueError):
        diff_range(Position(0, 0), Position(1, 1), Position(1, 1))


def test_diff_range_bounds_and_antisymmetry():
    rng = np.random.default_rng(42)
    for _ in range(200):
        p, a, b = (Position(*rng.uniform(-50, 50, 2)) for _ in range(3))
        if a == b:
            continue
        d = diff_range(p, a, b)
        assert abs(d) <= distance(a, b) + 1e-9
        assert d == pytest.approx(-diff_range(p, b, a), abs=1e-12)


def test_distance_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b, c = (Position(*rng.uniform(-100, 100, 2)) for _ in range(3))
        assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9


def test_ticks_to_meters_one_tick_at_22mhz():
    assert ticks_to_meters(1, 22e6) == pytest.approx(13.627, abs=0.01)


def test_ticks_to_meters_zero():
    assert ticks_to_meters(0, 22e6) == 0.0


def test_ticks_to_meters_one_second_of_light():
    assert ticks_to_meters(22e6, 22e6) == pytest.approx(SPEED_OF_LIGHT, rel=1e-15)


def test_ticks_to_meters_rejects_bad_rate():
    with pytest.raises(ValueError):
        ticks_to_meters(1.0, 0.0)
    with pytest.raises(ValueError):
        ticks_to_meters(1.0, -22e6)


def test_quadruplet_geometry():
    q = QuadrupletGeometry(
        pivot=Position(10, 10),
        ref_anchor=Position(0, 0),
        other_anchor=Position(10, 0),
        blind_hypothesis=Position(2, 5),
    )
    assert q.pivot_diff_range() == pytest.approx(
        distance(Position(10, 10), Position(10, 0)) - distance(Position(10, 10), Position(0, 0))
    )
    assert q.blind_diff_range() == pytest.approx(
        distance(Position(2, 5), Position(10, 0)) - distance(Position(2, 5), Position(0, 0))
    )
    with pytest.raises(ValueError):
        QuadrupletGeometry(
            pivot=Position(1, 1), ref_anchor=Position(0, 0), other_anchor=Position(0, 0)
        )
    with pytest.raises(ValueError):
        QuadrupletGeometry(
            pivot=Position(1, 1), ref_anchor=Position(0, 0), other_anchor=Position(1, 0)
        ).blind_diff_range()
