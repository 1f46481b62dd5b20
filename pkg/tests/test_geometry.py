from fractions import Fraction as F

import numpy as np
import pytest

from chanhom.errors import GeometryError
from chanhom.geometry import (
    BULK_M,
    BULK_P,
    CHAN,
    VOID,
    ChannelProfile,
    build_micro_geometry,
    build_reference_cell,
)


def hourglass():
    return ChannelProfile.from_pairs(
        [((-1, F(-1, 4)), F(3, 4)), ((F(-1, 4), F(1, 4)), F(1, 4)), ((F(1, 4), 1), F(3, 4))]
    )


def test_rectangle_half_width_measures():
    cell = build_reference_cell(ChannelProfile.rectangle(F(1, 2)))
    assert cell.rectangles == ((F(1, 4), F(3, 4), F(-1), F(1)),)
    assert cell.area == 1
    assert cell.s_plus == (F(1, 4), F(3, 4))
    assert cell.s_minus == (F(1, 4), F(3, 4))
    assert cell.s_plus[1] - cell.s_plus[0] == F(1, 2)
    assert cell.n_length == 4


def test_full_width_channel_rejected():
    with pytest.raises(GeometryError, match="lateral"):
        ChannelProfile.rectangle(1)
    with pytest.raises(GeometryError, match="lateral"):
        ChannelProfile.rectangle(F(5, 4))


def test_hourglass_measures():
    cell = build_reference_cell(hourglass())
    assert cell.area == F(9, 16) + F(1, 8) + F(9, 16) == F(5, 4)
    # vertical walls 2*(3/4 + 1/2 + 3/4) = 4 plus four ledges of 1/4
    assert cell.n_length == 5
    assert cell.alignment == 8


def test_non_partitioning_segments_rejected():
    with pytest.raises(GeometryError, match="partition"):
        ChannelProfile.from_pairs([((-1, 0), F(1, 2))])
    with pytest.raises(GeometryError, match="partition"):
        ChannelProfile.from_pairs([((-1, 0), F(1, 2)), ((F(1, 4), 1), F(1, 2))])
    with pytest.raises(GeometryError, match="degenerate"):
        ChannelProfile.from_pairs([((-1, -1), F(1, 2)), ((-1, 1), F(1, 2))])


def test_micro_geometry_counts_and_measures():
    cell = build_reference_cell(ChannelProfile.rectangle(F(1, 2)))
    geom = build_micro_geometry(F(1, 2), 1, cell)
    assert geom.n_columns == 2
    assert geom.channel_area == F(1, 2)

    geom4 = build_micro_geometry(F(1, 4), 1, cell)
    assert geom4.n_columns == 4
    assert geom4.wall_length == 4  # one factor eps from the count, one from the scaling


def test_channel_area_over_eps_is_exact():
    cell = build_reference_cell(hourglass())
    for den in (2, 3, 8, 16):
        geom = build_micro_geometry(F(1, den), 2, cell)
        assert geom.channel_area / geom.eps == cell.area


def test_invalid_eps_rejected():
    cell = build_reference_cell(ChannelProfile.rectangle(F(1, 2)))
    with pytest.raises(GeometryError, match="positive integer"):
        build_micro_geometry(F(3, 10), 1, cell)
    with pytest.raises(GeometryError, match="eps < H"):
        build_micro_geometry(F(1, 2), F(1, 4), cell)


def test_local_global_round_trip_is_measure_preserving():
    cell = build_reference_cell(hourglass())
    geom = build_micro_geometry(F(1, 8), 1, cell)
    eps = float(geom.eps)
    rng = np.random.default_rng(7)
    for _ in range(500):
        x = rng.uniform(0, 1)
        y = rng.uniform(-eps, eps)
        k, ybar, y_n = geom.to_local(x, y)
        assert 0 <= k < geom.n_columns
        assert 0 <= ybar <= 1 and -1 <= y_n <= 1
        xb, xn = geom.to_global(k, ybar, y_n)
        assert xb == pytest.approx(x, abs=1e-12)
        assert xn == pytest.approx(y, abs=1e-12)


def test_region_classifier_matches_rectangle_union():
    cell = build_reference_cell(hourglass())
    geom = build_micro_geometry(F(1, 4), 1, cell)
    eps = float(geom.eps)
    rects = [tuple(map(float, r)) for r in cell.rectangles]
    rng = np.random.default_rng(11)
    pts = rng.uniform([0, -1], [1, 1], size=(10_000, 2))
    for x, y in pts:
        got = geom.region_of(x, y)
        if y > eps:
            assert got == BULK_P
        elif y < -eps:
            assert got == BULK_M
        else:
            k, ybar, y_n = geom.to_local(x, y)
            inside = any(x0 < ybar < x1 and y0 < y_n < y1 for x0, x1, y0, y1 in rects)
            assert got == (CHAN if inside else VOID)


def test_wall_keeps_distance_to_the_cell_boundary():
    cell = build_reference_cell(hourglass())
    assert cell.wall_distance_to_cell_boundary() == F(1, 8)
    half = build_reference_cell(ChannelProfile.rectangle(F(1, 2)))
    assert half.wall_distance_to_cell_boundary() == F(1, 4)


def test_arc_coordinate_covers_the_wall():
    cell = build_reference_cell(ChannelProfile.rectangle(F(1, 2)))
    # left wall bottom, left wall top, right wall midpoint
    s0 = cell.arc_coordinate(0.25, -1.0)
    s1 = cell.arc_coordinate(0.25, 1.0)
    s2 = cell.arc_coordinate(0.75, 0.0)
    assert s0 == pytest.approx(0.0)
    assert s1 == pytest.approx(2.0)
    assert 2.0 < s2 < 4.0
    with pytest.raises(GeometryError):
        cell.arc_coordinate(0.5, 0.0)
