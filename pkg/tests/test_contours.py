import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soswet import contours, exact
from soswet.contours import (Cylinder, CylinderSet, GeometricContour, InvalidCollection, UnsupportedRegion,
                             check_compatible, compatible, contour_energy, decompose, enumerate_contours,
                             intensity_of, peierls_sum, reconstruct, unit_square)
from soswet.lattice import HeightField, Region, build_rect_region


def centre_field(value):
    return HeightField.from_mapping(build_rect_region(3, 3), {(2, 2): value})


def test_flat_field_is_empty():
    assert len(decompose(HeightField.flat(build_rect_region(4, 3), 2))) == 0


def test_single_bump():
    cs = decompose(centre_field(2))
    assert len(cs) == 1
    (c,) = cs
    assert c.contour == unit_square((2, 2))
    assert (c.sign, c.intensity) == (1, 2)
    assert c.contour.interior == {(2, 2)}


def test_single_dip():
    (c,) = decompose(centre_field(-1))
    assert c.contour == unit_square((2, 2))
    assert (c.sign, c.intensity) == (-1, 1)


def test_reconstruct_examples():
    region = build_rect_region(3, 3)
    assert reconstruct([], region, 4) == HeightField.flat(region, 4)
    f = reconstruct([Cylinder(unit_square((2, 2)), 1, 3)], region)
    assert f.value((2, 2)) == 3 and sum(f.heights) == 3


def test_energy_examples():
    assert contour_energy([]) == 0
    c = Cylinder(unit_square((2, 2)), 1, 2)
    assert contour_energy([c]) == 8 == exact.hamiltonian(centre_field(2))


def test_intensity_examples():
    f = centre_field(2)
    assert intensity_of(f, unit_square((2, 2)), 1) == 2
    assert intensity_of(f, unit_square((2, 2)), -1) == 0


def test_compatibility_examples():
    sq = unit_square((0, 0))
    assert not compatible(Cylinder(sq, 1, 1), Cylinder(sq, -1, 1))
    assert compatible(Cylinder(sq, 1, 1), Cylinder(unit_square((2, 0)), 1, 1))
    assert not compatible(Cylinder(sq, 1, 1), Cylinder(unit_square((1, 0)), 1, 1))


def test_compatibility_ignores_intensity():
    a, b = unit_square((0, 0)), unit_square((1, 0))
    for i in (1, 2, 5):
        for j in (1, 3):
            assert compatible(Cylinder(a, 1, i), Cylinder(b, -1, j)) == compatible(Cylinder(a, 1, 1), Cylinder(b, -1, 1))


def test_nested_opposite_signs():
    # a 3x3 plateau with a dip at its centre: the dip sits inside the plateau's interior, away from its edge
    big = GeometricContour(frozenset(contours.boundary_edges([(x, y) for x in range(3) for y in range(3)])))
    small = unit_square((1, 1))
    assert compatible(Cylinder(big, 1, 1), Cylinder(small, -1, 1))
    edge_dip = unit_square((0, 1))
    assert not compatible(Cylinder(big, 1, 1), Cylinder(edge_dip, -1, 1))


def test_invalid_collection():
    sq = unit_square((2, 2))
    with pytest.raises(InvalidCollection):
        reconstruct([Cylinder(sq, 1, 1), Cylinder(sq, -1, 1)], build_rect_region(3, 3))
    with pytest.raises(InvalidCollection):
        reconstruct([Cylinder(unit_square((9, 9)), 1, 1)], build_rect_region(3, 3))


def test_cylinder_validation():
    with pytest.raises(ValueError):
        Cylinder(unit_square((0, 0)), 0, 1)
    with pytest.raises(ValueError):
        Cylinder(unit_square((0, 0)), 1, 0)


def test_unsupported_region():
    ring = Region.from_sites([(x, y) for x in range(3) for y in range(3) if (x, y) != (1, 1)])
    with pytest.raises(UnsupportedRegion):
        decompose(HeightField.flat(ring))


def test_linking_convention_diagonals():
    region = build_rect_region(2, 2)
    # slope +1 diagonal pair: one contour
    f = HeightField.from_mapping(region, {(1, 1): 1, (2, 2): 1})
    assert len(decompose(f)) == 1
    # slope -1 diagonal pair: two unit squares
    g = HeightField.from_mapping(region, {(2, 1): 1, (1, 2): 1})
    assert sorted(c.contour.length for c in decompose(g)) == [4, 4]


def _check_field(f):
    cs = decompose(f)
    assert reconstruct(cs, f.region, f.boundary_level) == f
    assert contour_energy(cs) == exact.hamiltonian(f)
    for c in cs:
        assert c.contour.is_contour_sequence()
        assert intensity_of(f, c.contour, c.sign) == c.intensity
    return cs


def test_exhaustive_2x2():
    region = build_rect_region(2, 2)
    seen = set()
    for hs in np.ndindex(5, 5, 5, 5):
        f = HeightField(region, tuple(int(h) - 2 for h in hs))
        seen.add(tuple(c.sort_key for c in _check_field(f)))
    assert len(seen) == 625


def test_random_fields_pairwise_compatible():
    rng = random.Random(3)
    region = build_rect_region(6, 6)
    for _ in range(300):
        f = HeightField(region, tuple(rng.randint(-2, 2) for _ in range(36)), rng.randint(-1, 1))
        check_compatible(_check_field(f))


def test_json_round_trip():
    rng = random.Random(5)
    f = HeightField(build_rect_region(5, 4), tuple(rng.randint(-3, 3) for _ in range(20)))
    cs = decompose(f)
    assert CylinderSet.from_json(cs.to_json()) == cs


fields = st.integers(1, 5).flatmap(
    lambda w: st.integers(1, 5).flatmap(
        lambda h: st.tuples(st.just(w), st.just(h), st.lists(st.integers(-4, 4), min_size=w * h, max_size=w * h),
                            st.integers(-2, 2))))


@given(fields)
def test_round_trip_property(spec):
    w, h, heights, level = spec
    _check_field(HeightField(build_rect_region(w, h), tuple(heights), level))


@given(st.lists(st.integers(-3, 3), min_size=8, max_size=8))
def test_round_trip_on_l_shape(heights):
    region = Region.from_sites([(0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (0, 2), (0, 3), (1, 1)])
    _check_field(HeightField(region, tuple(heights)))


@given(fields)
@settings(max_examples=30)
def test_shifted_boundary_level(spec):
    # adding a constant to field and boundary leaves the cylinders unchanged
    w, h, heights, level = spec
    region = build_rect_region(w, h)
    a = decompose(HeightField(region, tuple(heights), level))
    b = decompose(HeightField(region, tuple(v + 3 for v in heights), level + 3))
    assert a == b


# -- enumeration --------------------------------------------------------------

IN_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1))
OUT_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


def _connected(sites, steps):
    sites = set(sites)
    start = next(iter(sites))
    seen, stack = {start}, [start]
    while stack:
        x, y = stack.pop()
        for dx, dy in steps:
            t = (x + dx, y + dy)
            if t in sites and t not in seen:
                seen.add(t)
                stack.append(t)
    return len(seen) == len(sites)


def _perimeter(s):
    return sum(1 for x, y in s for t in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)) if t not in s)


def set_oracle(max_length):
    """Count interiors instead of walks.

    Under the slope +1 linking rule a contour interior is connected through
    4-neighbours and (1, 1) diagonals and its complement through
    4-neighbours and (1, -1) diagonals.
    """
    frontier = {frozenset([(0, 0)])}
    found = set(frontier)
    while frontier:
        new = set()
        for s in frontier:
            for x, y in s:
                for dx, dy in IN_STEPS:
                    t = (x + dx, y + dy)
                    if t in s:
                        continue
                    ns = s | {t}
                    if ns in found or ns in new:
                        continue
                    xs = [p[0] for p in ns]
                    ys = [p[1] for p in ns]
                    if 2 * (max(xs) - min(xs) + max(ys) - min(ys) + 2) > max_length:
                        continue
                    new.add(ns)
        found |= new
        frontier = new
    counts = Counter()
    for s in found:
        length = _perimeter(s)
        if length > max_length:
            continue
        xs = [p[0] for p in s]
        ys = [p[1] for p in s]
        box = [(x, y) for x in range(min(xs) - 1, max(xs) + 2) for y in range(min(ys) - 1, max(ys) + 2)
               if (x, y) not in s]
        if _connected(box, OUT_STEPS):
            counts[length] += 1
    return {L: counts[L] for L in range(4, max_length + 1, 2)}


def test_small_counts():
    counts = enumerate_contours((0, 0), 8)
    assert counts == {4: 1, 6: 4, 8: 24}


def test_counts_against_set_oracle():
    assert enumerate_contours((3, -2), 12) == set_oracle(12)


def test_counts_translation_invariant():
    assert enumerate_contours((0, 0), 10) == enumerate_contours((5, 7), 10)


def test_enumeration_guard():
    with pytest.raises(exact.TooLarge):
        enumerate_contours((0, 0), 22)
    with pytest.raises(ValueError):
        enumerate_contours((0, 0), 7)


def test_peierls_partial_sum():
    ps = peierls_sum(2.0, 6)
    assert ps.partial_sum == pytest.approx(math.exp(-8) + 4 * math.exp(-12), rel=1e-14)
    assert ps.partial_sum == pytest.approx(3.6004e-4, rel=1e-4)
    sums = [peierls_sum(b, 10).partial_sum for b in (1.0, 2.0, 4.0, 8.0)]
    assert all(b < a for a, b in zip(sums, sums[1:]))
    assert ps.rows()[0] == {"length": 4, "count": 1, "weight": math.exp(-8)}
