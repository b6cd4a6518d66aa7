"""Finite subsets of Z^2: adjacency, external boundary, parity and connectivity.

Sites are plain ``(x, y)`` integer tuples.  Every set-valued result is emitted
in canonical order, lexicographic on ``(y, x)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

Site = tuple[int, int]

NEIGHBOR_OFFSETS: tuple[Site, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))


def site_key(s: Site) -> tuple[int, int]:
    return (s[1], s[0])


def canonical(sites: Iterable[Site]) -> tuple[Site, ...]:
    """Sorted, de-duplicated tuple of sites."""
    return tuple(sorted({(int(x), int(y)) for x, y in sites}, key=site_key))


def neighbors(s: Site) -> list[Site]:
    x, y = s
    return [(x + dx, y + dy) for dx, dy in NEIGHBOR_OFFSETS]


@dataclass(frozen=True)
class Region:
    """Immutable finite site set with cached adjacency and external boundary."""

    sites: tuple[Site, ...]
    site_set: frozenset = field(repr=False, compare=False)
    adjacency: dict = field(repr=False, compare=False)
    boundary: tuple[Site, ...] = field(repr=False, compare=False)

    @classmethod
    def from_sites(cls, sites: Iterable[Site]) -> "Region":
        ordered = canonical(sites)
        site_set = frozenset(ordered)
        adjacency = {s: tuple(sorted((t for t in neighbors(s) if t in site_set), key=site_key))
                     for s in ordered}
        outside = {t for s in ordered for t in neighbors(s) if t not in site_set}
        return cls(ordered, site_set, adjacency, canonical(outside))

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, s) -> bool:
        return tuple(s) in self.site_set

    def __iter__(self):
        return iter(self.sites)

    def boundary_degree(self, s: Site) -> int:
        """Number of edges from ``s`` to the external boundary."""
        return 4 - len(self.adjacency[s])

    def edges(self) -> list[tuple[Site, Site]]:
        """Internal nearest-neighbour edges, each listed once."""
        out = []
        for s in self.sites:
            for t in self.adjacency[s]:
                if site_key(s) < site_key(t):
                    out.append((s, t))
        return out

    def bbox(self) -> tuple[int, int, int, int]:
        xs = [s[0] for s in self.sites]
        ys = [s[1] for s in self.sites]
        return min(xs), min(ys), max(xs), max(ys)

    def to_json(self) -> str:
        return json.dumps([list(s) for s in self.sites])

    @classmethod
    def from_json(cls, text: str) -> "Region":
        return cls.from_sites(tuple(p) for p in json.loads(text))


def build_rect_region(width: int, height: int, x0: int = 1, y0: int = 1) -> Region:
    """The rectangle [x0, x0+width-1] x [y0, y0+height-1]."""
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise ValueError(f"rectangle dimensions must be positive integers, got {width}x{height}")
    return Region.from_sites((x, y) for y in range(y0, y0 + height) for x in range(x0, x0 + width))


def connected_components(sites: Iterable[Site]) -> list[frozenset]:
    """Maximal nearest-neighbour connected components, ordered by least site."""
    remaining = {tuple(s) for s in sites}
    comps = []
    while remaining:
        start = min(remaining, key=site_key)
        remaining.discard(start)
        comp = {start}
        stack = [start]
        while stack:
            for t in neighbors(stack.pop()):
                if t in remaining:
                    remaining.discard(t)
                    comp.add(t)
                    stack.append(t)
        comps.append(frozenset(comp))
    return comps


def is_connected(sites: Iterable[Site]) -> bool:
    sites = list(sites)
    return len(sites) > 0 and len(connected_components(sites)) == 1


def is_simply_connected(region: Region | Iterable[Site]) -> bool:
    """True iff the connected set has no holes.

    The complement inside a one-site margin around the bounding box must be a
    single nearest-neighbour component.
    """
    sites = region.site_set if isinstance(region, Region) else frozenset(tuple(s) for s in region)
    if not sites:
        raise ValueError("region is empty")
    if not is_connected(sites):
        raise ValueError("region is not connected")
    xs = [s[0] for s in sites]
    ys = [s[1] for s in sites]
    box = [(x, y) for y in range(min(ys) - 1, max(ys) + 2) for x in range(min(xs) - 1, max(xs) + 2)]
    return len(connected_components(s for s in box if s not in sites)) == 1


def parity_split(region: Region | Iterable[Site]) -> tuple[tuple[Site, ...], tuple[Site, ...]]:
    """(even sites, odd sites) according to the parity of x + y."""
    sites = region.sites if isinstance(region, Region) else canonical(region)
    even = tuple(s for s in sites if (s[0] + s[1]) % 2 == 0)
    odd = tuple(s for s in sites if (s[0] + s[1]) % 2 != 0)
    return even, odd


def distance_to_boundary(region: Region, s: Site) -> int:
    """l1 distance from ``s`` to the external boundary."""
    return min(abs(s[0] - b[0]) + abs(s[1] - b[1]) for b in region.boundary)


def central_sites(region: Region, count: int = 4) -> tuple[Site, ...]:
    """The ``count`` sites farthest from the boundary (ties broken canonically)."""
    ranked = sorted(region.sites, key=lambda s: (-distance_to_boundary(region, s), site_key(s)))
    return canonical(ranked[:count])


@dataclass(frozen=True)
class HeightField:
    """Integer heights on a region, with one boundary level applied to all of the external boundary."""

    region: Region
    heights: tuple[int, ...]
    boundary_level: int = 0

    def __post_init__(self):
        if len(self.heights) != len(self.region.sites):
            raise ValueError("heights must be given for exactly the region's sites")
        object.__setattr__(self, "heights", tuple(int(h) for h in self.heights))

    @classmethod
    def from_mapping(cls, region: Region, values: dict, boundary_level: int = 0) -> "HeightField":
        return cls(region, tuple(int(values.get(s, boundary_level)) for s in region.sites), boundary_level)

    @classmethod
    def flat(cls, region: Region, level: int = 0) -> "HeightField":
        return cls(region, (level,) * len(region.sites), level)

    @classmethod
    def from_array(cls, region: Region, array, boundary_level: int = 0) -> "HeightField":
        """From a (height, width) array indexed [y - y0, x - x0] over the region's bounding box."""
        x0, y0, _, _ = region.bbox()
        return cls(region, tuple(int(array[y - y0][x - x0]) for x, y in region.sites), boundary_level)

    def as_dict(self) -> dict:
        return dict(zip(self.region.sites, self.heights))

    def value(self, s: Site) -> int:
        """Height at ``s``, the boundary level outside the region."""
        try:
            return self.heights[self.region.sites.index(s)]
        except ValueError:
            return self.boundary_level

    def is_positive(self) -> bool:
        return all(h >= 0 for h in self.heights)

    def to_json(self) -> dict:
        return {"sites": [list(s) for s in self.region.sites], "heights": list(self.heights),
                "boundary_level": self.boundary_level}

    @classmethod
    def from_json(cls, record: dict) -> "HeightField":
        region = Region.from_sites(tuple(s) for s in record["sites"])
        values = {tuple(s): h for s, h in zip(record["sites"], record["heights"])}
        return cls.from_mapping(region, values, int(record.get("boundary_level", 0)))
