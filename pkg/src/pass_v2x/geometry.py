"""Coordinate mathematics: homographies, pixel to geodetic mapping, and
great-circle kinematics on a spherical earth."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateCorrespondence, PointAtInfinity, ZeroTimeDelta

EARTH_RADIUS_M = 6_371_000.0

_SINGULAR_RCOND = 1e-12
_AT_INFINITY = 1e-12
_STILL_M = 1e-6


@dataclass(frozen=True)
class PixelPoint:
    """Relative image coordinate; ``py`` grows downward."""

    px: float
    py: float

    def in_unit_square(self) -> bool:
        return 0.0 <= self.px <= 1.0 and 0.0 <= self.py <= 1.0


@dataclass(frozen=True)
class GeoPosition:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GeoBounds:
    """World coordinates of the top-left, top-right, bottom-right and
    bottom-left image corners. Assumed to describe a north-aligned patch."""

    w1: GeoPosition
    w2: GeoPosition
    w3: GeoPosition
    w4: GeoPosition

    def __post_init__(self):
        corners = [self.w1, self.w2, self.w3, self.w4]
        if len(set(corners)) != 4:
            raise ValueError("GeoBounds corners must be pairwise distinct")
        if self.lat_span == 0.0 or self.lon_span == 0.0:
            raise ValueError("GeoBounds must span a nonzero latitude and longitude range")

    @property
    def lat_span(self) -> float:
        # vertical image axis
        return self.w4.lat - self.w1.lat

    @property
    def lon_span(self) -> float:
        # horizontal image axis
        return self.w2.lon - self.w1.lon


class CardinalHeading(enum.IntEnum):
    """Four-way text heading; values are the wire codes."""

    EW = 0
    WE = 1
    NS = 2
    SN = 3

    @property
    def label(self) -> str:
        return {
            CardinalHeading.EW: "East-West",
            CardinalHeading.WE: "West-East",
            CardinalHeading.NS: "North-South",
            CardinalHeading.SN: "South-North",
        }[self]


@dataclass(frozen=True)
class Kinematics:
    distance_m: float
    velocity_mps: float
    heading_rad: float


class Homography:
    """3x3 projective transform, normalized so that ``m[2, 2] == 1`` unless that
    entry is (numerically) zero."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=float).reshape(3, 3)
        # scale-free test: a homography is only defined up to a factor
        if not np.all(np.isfinite(m)) or 1.0 / np.linalg.cond(m) < _SINGULAR_RCOND:
            raise DegenerateCorrespondence("homography matrix is singular")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        m.setflags(write=False)
        self.m = m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"


def _collinear(a: PixelPoint, b: PixelPoint, c: PixelPoint) -> bool:
    cross = (b.px - a.px) * (c.py - a.py) - (b.py - a.py) * (c.px - a.px)
    return abs(cross) < 1e-12


def _any_three_collinear(pts: Sequence[PixelPoint]) -> bool:
    n = len(pts)
    return any(
        _collinear(pts[i], pts[j], pts[k])
        for i in range(n)
        for j in range(i + 1, n)
        for k in range(j + 1, n)
    )


def homography_from_correspondences(
    src: Sequence[PixelPoint], dst: Sequence[PixelPoint]
) -> Homography:
    """Solve the 8 unknowns of a homography (with m22 fixed to 1) from four
    point pairs."""
    if len(src) != 4 or len(dst) != 4:
        raise ValueError("exactly four correspondences are required")
    if _any_three_collinear(src) or _any_three_collinear(dst):
        raise DegenerateCorrespondence("three of the four points are collinear")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, (s, d) in enumerate(zip(src, dst)):
        x, y, u, v = s.px, s.py, d.px, d.py
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v

    if 1.0 / np.linalg.cond(a) < _SINGULAR_RCOND:
        raise DegenerateCorrespondence("correspondence system is singular")
    h = np.linalg.solve(a, b)
    return Homography(np.append(h, 1.0))


def apply_homography(h: Homography, p: PixelPoint) -> PixelPoint:
    x, y, z = h.m @ np.array([p.px, p.py, 1.0])
    if abs(z) <= _AT_INFINITY:
        raise PointAtInfinity(f"{p} maps to the line at infinity")
    return PixelPoint(float(x / z), float(y / z))


def pixel_to_geo(bounds: GeoBounds, p: PixelPoint) -> GeoPosition:
    """Linear interpolation of a top-view pixel across the calibrated patch."""
    lat = bounds.lat_span * p.py + bounds.w1.lat
    lon = bounds.lon_span * p.px + bounds.w1.lon
    return GeoPosition(lat, lon)


def geo_to_pixel(bounds: GeoBounds, g: GeoPosition) -> PixelPoint:
    """Inverse of :func:`pixel_to_geo`."""
    return PixelPoint(
        (g.lon - bounds.w1.lon) / bounds.lon_span,
        (g.lat - bounds.w1.lat) / bounds.lat_span,
    )


def haversine_distance(l1: GeoPosition, l2: GeoPosition) -> float:
    phi1 = math.radians(l1.lat)
    phi2 = math.radians(l2.lat)
    dphi = phi2 - phi1
    dgamma = math.radians(l2.lon) - math.radians(l1.lon)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dgamma / 2) ** 2
    a = min(1.0, max(0.0, a))
    return EARTH_RADIUS_M * 2.0 * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))


def velocity(l1: GeoPosition, l2: GeoPosition, t1: int, t2: int) -> float:
    """Mean speed in m/s between two fixes stamped in epoch milliseconds."""
    if t1 == t2:
        raise ZeroTimeDelta("velocity needs two distinct timestamps")
    return haversine_distance(l1, l2) / (abs(t2 - t1) / 1000.0)


def heading(l1: GeoPosition, l2: GeoPosition) -> float:
    """``atan2(dlat, dlon)`` in radians: counter-clockwise from east.

    Coincident points give 0; callers treat that as "no displacement".
    """
    dphi = math.radians(l2.lat) - math.radians(l1.lat)
    dgamma = math.radians(l2.lon) - math.radians(l1.lon)
    h = math.atan2(dphi + 0.0, dgamma + 0.0)
    return math.pi if h == -math.pi else h


def kinematics(l1: GeoPosition, l2: GeoPosition, t1: int, t2: int) -> Kinematics:
    d = haversine_distance(l1, l2)
    return Kinematics(d, velocity(l1, l2, t1, t2), heading(l1, l2))


def classify_heading(
    l1: GeoPosition, l2: GeoPosition, previous: CardinalHeading
) -> CardinalHeading:
    phi1 = math.radians(l1.lat)
    d_north = EARTH_RADIUS_M * (math.radians(l2.lat) - phi1)
    d_east = EARTH_RADIUS_M * math.cos(phi1) * (math.radians(l2.lon) - math.radians(l1.lon))
    if abs(d_north) < _STILL_M and abs(d_east) < _STILL_M:
        return previous
    if abs(d_east) >= abs(d_north):
        return CardinalHeading.WE if d_east > 0 else CardinalHeading.EW
    return CardinalHeading.SN if d_north > 0 else CardinalHeading.NS
