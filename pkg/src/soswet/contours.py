"""Level-line calculus: signed cylinders, compatibility, reconstruction, contour counting.

Geometry is kept in doubled integer coordinates: site ``(x, y)`` sits at
``(2x, 2y)``, dual vertices at odd/odd points and a dual edge is identified by
its midpoint (exactly one odd coordinate).  Odd ``ex`` means a vertical dual
edge, crossing the primal edge between ``((ex-1)/2, ey/2)`` and ``((ex+1)/2, ey/2)``.

Linking rule at a dual vertex where four edges meet: edges lying on the same
side of the slope +1 line through the vertex are linked, i.e. the pairs
{north, west} and {south, east}.  Consequently two diagonal sites along the
slope +1 direction that share a level set are enclosed by one contour, while
the other diagonal is split into two.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable

import numpy as np

from .exact import TooLarge
from .formulas import ModelParams
from .lattice import HeightField, Region, Site, is_simply_connected

Edge = tuple[int, int]

N, E, S, W = "N", "E", "S", "W"
LINKED = ({N, W}, {S, E})
_LINK_PARTNER = {N: W, W: N, S: E, E: S}
_STEP = {N: (0, 1), E: (1, 0), S: (0, -1), W: (-1, 0)}


class UnsupportedRegion(ValueError):
    pass


class InvalidCollection(ValueError):
    pass


def edge_between(a: Site, b: Site) -> Edge:
    """Dual edge crossing the primal edge a-b."""
    return (a[0] + b[0], a[1] + b[1])


def edge_sites(e: Edge) -> tuple[Site, Site]:
    ex, ey = e
    if ex % 2:
        return ((ex - 1) // 2, ey // 2), ((ex + 1) // 2, ey // 2)
    return (ex // 2, (ey - 1) // 2), (ex // 2, (ey + 1) // 2)


def edge_endpoints(e: Edge) -> tuple[tuple[int, int], tuple[int, int]]:
    ex, ey = e
    if ex % 2:
        return (ex, ey - 1), (ex, ey + 1)
    return (ex - 1, ey), (ex + 1, ey)


_DIRECTION = {(0, 1): N, (1, 0): E, (0, -1): S, (-1, 0): W}


def direction_at(v: tuple[int, int], e: Edge) -> str:
    return _DIRECTION[(e[0] - v[0], e[1] - v[1])]


def is_linked(d1: str, d2: str) -> bool:
    return {d1, d2} in LINKED


def vertex_sites(v: tuple[int, int]) -> tuple[Site, Site, Site, Site]:
    """Sites around a dual vertex: SW, SE, NE, NW."""
    x, y = (v[0] - 1) // 2, (v[1] - 1) // 2
    return (x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1)


def _edge_at(v: tuple[int, int], d: str) -> Edge:
    dx, dy = _STEP[d]
    return (v[0] + dx, v[1] + dy)


@dataclass(frozen=True)
class GeometricContour:
    """A set of dual edges forming one contour sequence."""

    edges: frozenset

    @property
    def length(self) -> int:
        return len(self.edges)

    @cached_property
    def key(self) -> tuple:
        return tuple(sorted(self.edges, key=lambda e: (e[1], e[0])))

    @cached_property
    def interior(self) -> frozenset:
        """Sites enclosed by the contour (parity of vertical crossings to the right)."""
        rows = defaultdict(list)
        for ex, ey in self.edges:
            if ex % 2:
                rows[ey].append(ex)
        inside = set()
        for ey, xs in rows.items():
            xs.sort()
            y = ey // 2
            for a, b in zip(xs[0::2], xs[1::2]):
                inside.update((x, y) for x in range((a + 1) // 2, (b - 1) // 2 + 1))
        return frozenset(inside)

    @cached_property
    def _incidence(self) -> dict:
        inc = defaultdict(list)
        for e in self.edges:
            for v in edge_endpoints(e):
                inc[v].append(direction_at(v, e))
        return inc

    @cached_property
    def neighborhood(self) -> frozenset:
        """Sites at distance 1/2 from the edges, plus the four sites around each non-linked corner."""
        out = set()
        for e in self.edges:
            out.update(edge_sites(e))
        for v, dirs in self._incidence.items():
            if len(dirs) == 2 and not is_linked(*dirs):
                out.update(vertex_sites(v))
        return frozenset(out)

    @cached_property
    def inner(self) -> frozenset:
        return self.neighborhood & self.interior

    @cached_property
    def outer(self) -> frozenset:
        return self.neighborhood - self.interior

    def is_contour_sequence(self) -> bool:
        """Closed, single cycle, every vertex of degree 2 or 4, 4-vertices split into linked pairs."""
        if not self.edges:
            return False
        inc = self._incidence
        for dirs in inc.values():
            if len(dirs) not in (2, 4):
                return False
        cycles = trace_cycles(self.edges)
        return len(cycles) == 1

    def to_json(self) -> list:
        return [list(e) for e in self.key]


@dataclass(frozen=True)
class Cylinder:
    contour: GeometricContour
    sign: int
    intensity: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.intensity < 1:
            raise ValueError("intensity must be at least 1")

    @property
    def sort_key(self) -> tuple:
        return (self.contour.key, self.sign, self.intensity)

    def to_json(self) -> dict:
        return {"edges": self.contour.to_json(), "sign": self.sign, "intensity": self.intensity}

    @classmethod
    def from_json(cls, record: dict) -> "Cylinder":
        return cls(GeometricContour(frozenset(tuple(e) for e in record["edges"])),
                   int(record["sign"]), int(record["intensity"]))


@dataclass(frozen=True)
class CylinderSet:
    cylinders: tuple = ()

    @classmethod
    def of(cls, cylinders: Iterable[Cylinder]) -> "CylinderSet":
        return cls(tuple(sorted(cylinders, key=lambda c: c.sort_key)))

    def __len__(self) -> int:
        return len(self.cylinders)

    def __iter__(self):
        return iter(self.cylinders)

    def to_json(self) -> list:
        return [c.to_json() for c in self.cylinders]

    @classmethod
    def from_json(cls, records: list) -> "CylinderSet":
        return cls.of(Cylinder.from_json(r) for r in records)


def unit_square(site: Site) -> GeometricContour:
    x, y = site
    return GeometricContour(frozenset(edge_between(site, t) for t in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))))


def boundary_edges(sites: Iterable[Site]) -> set:
    """Dual edges separating a finite site set from its complement."""
    inside = set(sites)
    out = set()
    for x, y in inside:
        for t in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if t not in inside:
                out.add((x + t[0], y + t[1]))
    return out


def trace_cycles(edges: Iterable[Edge]) -> list[list[tuple[tuple[int, int], Edge]]]:
    """Split an edge set with even vertex degrees into cycles, resolving 4-vertices by the linking rule.

    Each cycle is returned as a list of (start vertex, edge) steps.
    """
    edges = set(edges)
    inc = defaultdict(dict)
    for e in edges:
        ex, ey = e
        if ex & 1:
            inc[(ex, ey - 1)][N] = e
            inc[(ex, ey + 1)][S] = e
        else:
            inc[(ex - 1, ey)][E] = e
            inc[(ex + 1, ey)][W] = e
    seen = set()
    cycles = []
    for e0 in sorted(edges):
        if e0 in seen:
            continue
        v0 = edge_endpoints(e0)[0]
        steps = []
        v, e = v0, e0
        while True:
            seen.add(e)
            steps.append((v, e))
            w = (2 * e[0] - v[0], 2 * e[1] - v[1])
            at = inc[w]
            d_in = _DIRECTION[(e[0] - w[0], e[1] - w[1])]
            if len(at) == 2:
                for d_out in at:
                    if d_out != d_in:
                        break
            elif len(at) == 4:
                d_out = _LINK_PARTNER[d_in]
            else:
                raise InvalidCollection(f"dual vertex {w} has odd degree {len(at)}")
            v, e = w, at[d_out]
            if e == e0 and v == v0:
                break
        cycles.append(steps)
    return cycles


def _signed_area(steps) -> int:
    area = 0
    for (v, e) in steps:
        w = (2 * e[0] - v[0], 2 * e[1] - v[1])
        area += v[0] * w[1] - w[0] * v[1]
    return area


def level_contours(finite_set: Iterable[Site]) -> list[tuple[GeometricContour, bool]]:
    """Contours of the boundary of a finite set, each flagged True when the set lies inside it."""
    finite_set = set(finite_set)
    out = []
    for steps in trace_cycles(boundary_edges(finite_set)):
        v, e = steps[0]
        a, b = edge_sites(e)
        # orient the first step; which site is on its left decides the relation to the set
        w = [p for p in edge_endpoints(e) if p != v][0]
        dx, dy = w[0] - v[0], w[1] - v[1]
        if e[0] % 2:  # vertical edge: a is west, b is east
            left = a if dy > 0 else b
        else:         # horizontal edge: a is south, b is north
            left = b if dx > 0 else a
        ccw = _signed_area(steps) > 0
        set_inside = (left in finite_set) == ccw
        out.append((GeometricContour(frozenset(e for _, e in steps)), set_inside))
    return out




@lru_cache(maxsize=256)
def _check_region(region: Region) -> None:
    if not is_simply_connected(region):
        raise UnsupportedRegion("contour decomposition needs a simply connected region")


def decompose(field: HeightField) -> CylinderSet:
    """Signed cylinders of a height field; identical contours on consecutive levels are merged."""
    region = field.region
    try:
        _check_region(region)
    except ValueError as exc:
        raise UnsupportedRegion(str(exc)) from exc
    n = field.boundary_level
    values = dict(zip(region.sites, field.heights))
    if not values:
        return CylinderSet()
    counts: Counter = Counter()
    lo, hi = min(field.heights), max(field.heights)
    for h in range(n + 1, hi + 1):
        upper = [s for s, v in values.items() if v >= h]
        for contour, inside in level_contours(upper):
            counts[(contour, 1 if inside else -1)] += 1
    for h in range(lo + 1, n + 1):
        lower = [s for s, v in values.items() if v < h]
        for contour, inside in level_contours(lower):
            counts[(contour, -1 if inside else 1)] += 1
    return CylinderSet.of(Cylinder(c, sgn, k) for (c, sgn), k in counts.items())


def _bbox_of(sites) -> tuple[int, int, int, int]:
    xs = [s[0] for s in sites]
    ys = [s[1] for s in sites]
    return min(xs), min(ys), max(xs), max(ys)


def _boxes_touch(a, b) -> bool:
    return not (a[2] + 1 < b[0] or b[2] + 1 < a[0] or a[3] + 1 < b[1] or b[3] + 1 < a[1])


def compatible(a: Cylinder, b: Cylinder) -> bool:
    """Pairwise compatibility of two signed cylinders."""
    ga, gb = a.contour, b.contour
    if ga.edges == gb.edges:
        return False
    ia, ib = ga.interior, gb.interior
    if not _boxes_touch(_bbox_of(ga.neighborhood), _bbox_of(gb.neighborhood)):
        return True
    common = ia & ib
    if common and not (common == ia or common == ib):
        return False
    if not common:
        if a.sign == b.sign:
            return not (ib & ga.outer) and not (ia & gb.outer)
        return True
    if a.sign != b.sign:
        outer, inner = (a, b) if common == ib else (b, a)
        return not (inner.contour.interior & outer.contour.inner)
    return True


def check_compatible(cylinders: Iterable[Cylinder]) -> None:
    cyl = list(cylinders)
    for i in range(len(cyl)):
        for j in range(i + 1, len(cyl)):
            if not compatible(cyl[i], cyl[j]):
                raise InvalidCollection(f"cylinders {i} and {j} are not compatible")


def reconstruct(cylinders: Iterable[Cylinder], region: Region, boundary_level: int = 0,
                check: bool = True) -> HeightField:
    """The height field n + sum of sign * intensity * indicator(interior)."""
    cyl = list(cylinders)
    if check:
        check_compatible(cyl)
    values = dict.fromkeys(region.sites, boundary_level)
    for c in cyl:
        for s in c.contour.interior:
            if s not in values:
                raise InvalidCollection(f"cylinder interior leaves the region at {s}")
            values[s] += c.sign * c.intensity
    return HeightField(region, tuple(values[s] for s in region.sites), boundary_level)


def contour_energy(cylinders: Iterable[Cylinder]) -> int:
    """Sum of length times intensity; equals the SOS energy of the reconstructed field."""
    return sum(c.contour.length * c.intensity for c in cylinders)


def intensity_of(field: HeightField, contour: GeometricContour, sign: int) -> int:
    """Largest k such that the signed cylinder of intensity k is present in the field (0 if absent)."""
    inner = [field.value(s) for s in contour.inner]
    outer = [field.value(s) for s in contour.outer]
    gap = min(inner) - max(outer) if sign > 0 else min(outer) - max(inner)
    return max(gap, 0)


# -- counting contours enclosing a marked site -------------------------------

MAX_ENUMERATION_LENGTH = 20


def enumerate_contours(marked: Site, max_length: int, length_budget: int = MAX_ENUMERATION_LENGTH) -> dict[int, int]:
    """Number of contours of each even length <= max_length enclosing ``marked``.

    Depth-first search over closed dual walks.  Every contour crosses the ray
    to the right of the site; the walk starts on its rightmost crossing,
    heading north, so each contour is produced once.
    """
    if max_length % 2:
        raise ValueError("max_length must be even")
    if max_length > length_budget:
        raise TooLarge(f"max_length {max_length} exceeds the enumeration budget {length_budget}")
    if max_length < 4:
        return {}
    mx, my = 2 * marked[0], 2 * marked[1]
    counts: Counter = Counter()
    used: set = set()
    pairs: dict = defaultdict(list)

    def crosses(e: Edge) -> bool:
        return e[0] % 2 == 1 and e[1] == my and e[0] > mx

    def dfs(v, d_in, start, e0, length, parity, ray_max):
        # v: current vertex; d_in: direction at v of the edge just used
        for d_out in (N, E, S, W):
            if d_out == d_in:
                continue
            e = _edge_at(v, d_out)
            at = pairs[v]
            if v == start and e == e0:
                # closing at the start vertex; an earlier pass there must be linked, and so must this pair
                if at and not (is_linked(*at[0]) and is_linked(d_in, d_out)):
                    continue
                if parity % 2 == 1:
                    counts[length] += 1
                continue
            if e in used:
                continue
            if crosses(e) and e[0] > ray_max:
                continue
            if v == start:
                # the opening edge already occupies N at the start vertex
                if {d_in, d_out} != {S, E}:
                    continue
                if at:
                    continue
            elif at:
                if len(at) > 1 or not is_linked(*at[0]) or not is_linked(d_in, d_out):
                    continue
            a, b = edge_endpoints(e)
            w = b if a == v else a
            if length + 1 + (abs(w[0] - start[0]) + abs(w[1] - start[1])) // 2 > max_length:
                continue
            used.add(e)
            at.append((d_in, d_out))
            dfs(w, direction_at(w, e), start, e0, length + 1, parity + crosses(e), ray_max)
            at.pop()
            used.discard(e)

    for i in range(max(0, max_length // 2 - 1)):
        ex = mx + 1 + 2 * i
        e0 = (ex, my)
        start = (ex, my - 1)
        top = (ex, my + 1)
        used.add(e0)
        dfs(top, S, start, e0, 1, 1, ex)
        used.discard(e0)
    return {L: counts[L] for L in range(4, max_length + 1, 2)}


@dataclass(frozen=True)
class PeierlsSum:
    beta: float
    max_length: int
    counts: dict
    partial_sum: float
    growth_rate: float

    def rows(self) -> list[dict]:
        return [{"length": L, "count": c, "weight": c * math.exp(-self.beta * L)} for L, c in self.counts.items()]


def peierls_sum(params: ModelParams | float, max_length: int) -> PeierlsSum:
    """Partial sum of count(l) exp(-beta l) over contours enclosing a site.

    The growth rate is exp of the least-squares slope of log count(l) against l
    over the three largest lengths.
    """
    beta = params.beta if isinstance(params, ModelParams) else float(params)
    counts = enumerate_contours((0, 0), max_length)
    total = sum(c * math.exp(-beta * L) for L, c in counts.items())
    top = [L for L in sorted(counts) if counts[L] > 0][-3:]
    if len(top) >= 2:
        xs = np.array(top, dtype=float)
        ys = np.log([counts[L] for L in top])
        growth = float(math.exp(np.polyfit(xs, ys, 1)[0]))
    else:
        growth = float("nan")
    return PeierlsSum(beta, max_length, counts, total, growth)
