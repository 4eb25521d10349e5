"""Coverage regions and GPS-driven cloudlet association.

Geometry uses a flat-earth equirectangular approximation (scenarios span well
under 50 km): one degree of latitude is METERS_PER_DEG_LAT meters and one
degree of longitude scales by cos(latitude) at the region center.  Containment
is boundary-inclusive so gap-free tilings have no dead lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from .errors import ConfigError, EmptyPath, UnknownVehicle

METERS_PER_DEG_LAT = 111_320.0


@dataclass(frozen=True)
class RectRegion:
    cloudlet: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ConfigError(f"region {self.cloudlet}", "rectangle is degenerate")

    def contains(self, lat: float, lon: float) -> bool:
        return (
            self.lat_min <= lat <= self.lat_max
            and self.lon_min <= lon <= self.lon_max
        )


@dataclass(frozen=True)
class CircleRegion:
    cloudlet: str
    center_lat: float
    center_lon: float
    radius_m: float

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise ConfigError(f"region {self.cloudlet}", "radius must be positive")

    def _meters(self, lat: float, lon: float) -> tuple[float, float]:
        mlon = METERS_PER_DEG_LAT * math.cos(math.radians(self.center_lat))
        return (
            (lon - self.center_lon) * mlon,
            (lat - self.center_lat) * METERS_PER_DEG_LAT,
        )

    def contains(self, lat: float, lon: float) -> bool:
        x, y = self._meters(lat, lon)
        return x * x + y * y <= self.radius_m * self.radius_m


Region = Union[RectRegion, CircleRegion]


def region_from_config(entry: dict, path: str = "region") -> Region:
    shape = entry.get("shape", "rect")
    try:
        if shape == "rect":
            (lat_min, lat_max), (lon_min, lon_max) = entry["lat"], entry["lon"]
            return RectRegion(entry["cloudlet"], lat_min, lat_max, lon_min, lon_max)
        if shape == "circle":
            center_lat, center_lon = entry["center"]
            return CircleRegion(entry["cloudlet"], center_lat, center_lon, entry["radius_m"])
    except KeyError as exc:
        raise ConfigError(path, f"missing key {exc.args[0]!r}") from None
    raise ConfigError(f"{path}.shape", f"unknown shape {shape!r}")


def locate(lat: float, lon: float, regions: Sequence[Region]) -> set[str]:
    """All cloudlets whose region contains the point, boundary-inclusive."""
    return {r.cloudlet for r in regions if r.contains(lat, lon)}


@dataclass(frozen=True)
class ReassociationDelta:
    joined: frozenset[str]
    left: frozenset[str]
    coverage_gap: bool = False


class GeoAssociator:
    """Keeps each tracked vehicle's association equal to locate(position).

    When a position falls outside every region the previous associations are
    retained and the delta is flagged as a coverage gap, preserving the
    at-least-one-cloudlet guarantee (for vehicles that ever had coverage).
    Join callbacks fire before leave callbacks so handoffs never pass through
    an empty association set.
    """

    def __init__(
        self,
        regions: Sequence[Region],
        on_join: Optional[Callable[[str, str], None]] = None,
        on_leave: Optional[Callable[[str, str], None]] = None,
    ):
        self.regions = list(regions)
        self.on_join = on_join
        self.on_leave = on_leave
        self._current: dict[str, set[str]] = {}

    def track(self, vehicle: str) -> None:
        self._current.setdefault(vehicle, set())

    def associations(self, vehicle: str) -> frozenset[str]:
        if vehicle not in self._current:
            raise UnknownVehicle(f"{vehicle!r} is not tracked")
        return frozenset(self._current[vehicle])

    def update_position(self, vehicle: str, lat: float, lon: float) -> ReassociationDelta:
        if vehicle not in self._current:
            raise UnknownVehicle(f"{vehicle!r} is not tracked")
        current = self._current[vehicle]
        target = locate(lat, lon, self.regions)
        if not target:
            return ReassociationDelta(frozenset(), frozenset(), coverage_gap=True)
        joined = frozenset(target - current)
        left = frozenset(current - target)
        for tc in sorted(joined):
            if self.on_join:
                self.on_join(vehicle, tc)
        for tc in sorted(left):
            if self.on_leave:
                self.on_leave(vehicle, tc)
        self._current[vehicle] = set(target)
        return ReassociationDelta(joined, left)


# --- itinerary planning ----------------------------------------------------------


def plan_itinerary(
    waypoints: Sequence[tuple[float, float]], regions: Sequence[Region]
) -> list[str]:
    """Cloudlets whose regions the piecewise-linear path touches, in
    first-touch order.

    Simultaneous first touches (e.g. crossing a shared tiling boundary) break
    ties by region declaration order, matching a per-region containment scan.
    """
    if len(waypoints) < 2:
        raise EmptyPath("an itinerary needs at least two waypoints")
    touches: list[tuple[int, float, int]] = []  # (segment, t, region index)
    for seg, (start, end) in enumerate(zip(waypoints, waypoints[1:])):
        for idx, region in enumerate(regions):
            t = _segment_entry(start, end, region)
            if t is not None:
                touches.append((seg, t, idx))
    touches.sort()
    itinerary: list[str] = []
    seen: set[str] = set()
    for _, _, idx in touches:
        name = regions[idx].cloudlet
        if name not in seen:
            seen.add(name)
            itinerary.append(name)
    return itinerary


def _segment_entry(start, end, region: Region) -> Optional[float]:
    """Earliest t in [0, 1] at which the segment start→end is inside the
    region, or None if it never is."""
    if isinstance(region, RectRegion):
        return _rect_entry(start, end, region)
    return _circle_entry(start, end, region)


def _rect_entry(start, end, region: RectRegion) -> Optional[float]:
    # Liang-Barsky clipping with inclusive boundaries.
    t0, t1 = 0.0, 1.0
    for p, d, lo, hi in (
        (start[0], end[0] - start[0], region.lat_min, region.lat_max),
        (start[1], end[1] - start[1], region.lon_min, region.lon_max),
    ):
        if d == 0.0:
            if not (lo <= p <= hi):
                return None
            continue
        ta, tb = (lo - p) / d, (hi - p) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return t0


def _circle_entry(start, end, region: CircleRegion) -> Optional[float]:
    x0, y0 = region._meters(*start)
    x1, y1 = region._meters(*end)
    dx, dy = x1 - x0, y1 - y0
    a = dx * dx + dy * dy
    b = 2.0 * (x0 * dx + y0 * dy)
    c = x0 * x0 + y0 * y0 - region.radius_m * region.radius_m
    if c <= 0.0:
        return 0.0
    if a == 0.0:
        return None
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    sqrt_disc = math.sqrt(disc)
    t_lo = (-b - sqrt_disc) / (2.0 * a)
    t_hi = (-b + sqrt_disc) / (2.0 * a)
    if t_hi < 0.0 or t_lo > 1.0:
        return None
    return max(t_lo, 0.0)
