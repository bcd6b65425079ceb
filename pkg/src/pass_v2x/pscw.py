"""Pedestrian-in-crosswalk warning: constant-velocity time-to-collision
between every pedestrian (PSM) and vehicle (BSM) pair."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import NonPositiveDeceleration, NonPositiveEpsilon, OutOfProjectionRange, PassError
from .geometry import EARTH_RADIUS_M, GeoPosition, haversine_distance
from .messages import Alert, Bsm, Psm, quantize_lat, quantize_lon, round_half_away

log = logging.getLogger(__name__)

TTC_HORIZON_S = 8.0
PROJECTION_RANGE_M = 2000.0
DEFAULT_VEHICLE_LENGTH_M = 5.0
_STATIONARY_A = 1e-9


@dataclass(frozen=True)
class KinematicState:
    """Position (m) and velocity (m/s) in a local east-north plane."""

    pos_m: tuple[float, float]
    vel_mps: tuple[float, float]


@dataclass(frozen=True)
class TtcResult:
    ttc_s: Optional[float]
    closest_approach_m: float

    @property
    def present(self) -> bool:
        return self.ttc_s is not None


def to_local(
    ref: GeoPosition, p: GeoPosition, speed_mps: float = 0.0, heading_deg: float = 0.0
) -> KinematicState:
    """Equirectangular projection about ``ref``; ``heading_deg`` is the wire
    convention (clockwise from north)."""
    if haversine_distance(ref, p) > PROJECTION_RANGE_M:
        raise OutOfProjectionRange(f"{p} is more than {PROJECTION_RANGE_M:g} m from {ref}")
    phi_ref = math.radians(ref.lat)
    east = EARTH_RADIUS_M * math.cos(phi_ref) * math.radians(p.lon - ref.lon)
    north = EARTH_RADIUS_M * math.radians(p.lat - ref.lat)
    h = math.radians(heading_deg)
    return KinematicState((east, north), (speed_mps * math.sin(h), speed_mps * math.cos(h)))


def from_local(ref: GeoPosition, east: float, north: float) -> GeoPosition:
    phi_ref = math.radians(ref.lat)
    return GeoPosition(
        ref.lat + math.degrees(north / EARTH_RADIUS_M),
        ref.lon + math.degrees(east / (EARTH_RADIUS_M * math.cos(phi_ref))),
    )


def ttc(ped: KinematicState, veh: KinematicState, epsilon_m: float) -> TtcResult:
    """Smallest t in [0, 8] s with |dp + dv*t| = epsilon, or absent."""
    if not epsilon_m > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon_m}")
    dx = ped.pos_m[0] - veh.pos_m[0]
    dy = ped.pos_m[1] - veh.pos_m[1]
    vx = ped.vel_mps[0] - veh.vel_mps[0]
    vy = ped.vel_mps[1] - veh.vel_mps[1]

    a = vx * vx + vy * vy
    b = 2.0 * (dx * vx + dy * vy)
    sep2 = dx * dx + dy * dy
    c = sep2 - epsilon_m * epsilon_m

    if a < _STATIONARY_A:
        t_close = 0.0
    else:
        t_close = min(TTC_HORIZON_S, max(0.0, -b / (2.0 * a)))
    closest = math.hypot(dx + vx * t_close, dy + vy * t_close)

    if c <= 0.0:
        return TtcResult(0.0, closest)
    if a < _STATIONARY_A or b >= 0.0:
        # not closing
        return TtcResult(None, closest)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return TtcResult(None, closest)
    # b < 0 here, so q > 0 and c/q is the smaller root without cancellation
    q = 0.5 * (-b + math.sqrt(disc))
    t = c / q
    if t > TTC_HORIZON_S:
        return TtcResult(None, closest)
    return TtcResult(t, closest)


def _latest(msgs: Iterable, key) -> dict:
    out: dict = {}
    for m in msgs:
        cur = out.get(key(m))
        if cur is None or m.timestamp_ms >= cur.timestamp_ms:
            out[key(m)] = m
    return out


def evaluate(
    psms: Iterable[Psm],
    bsms: Iterable[Bsm],
    ref: GeoPosition,
    now: int,
) -> list[Alert]:
    """One alert per colliding (pedestrian, vehicle) pair, earliest TTC first.

    Only the newest message per temp id takes part. A pair that cannot be
    projected is logged and skipped.
    """
    peds = _latest(psms, lambda m: m.temp_id)
    vehs = _latest(bsms, lambda m: m.temp_id)
    alerts = []
    for pid, psm in peds.items():
        for vid, bsm in vehs.items():
            try:
                p = to_local(ref, psm.position, psm.speed_mps, psm.heading_deg)
                v = to_local(ref, bsm.position, bsm.speed_mps, bsm.heading_deg)
                length = bsm.length_m if bsm.length_dm > 0 else DEFAULT_VEHICLE_LENGTH_M
                r = ttc(p, v, length / 2.0)
                if not r.present:
                    continue
                hit = from_local(
                    ref,
                    p.pos_m[0] + p.vel_mps[0] * r.ttc_s,
                    p.pos_m[1] + p.vel_mps[1] * r.ttc_s,
                )
                alerts.append(
                    Alert(
                        timestamp_ms=now,
                        pedestrian_temp_id=pid,
                        vehicle_temp_id=vid,
                        ttc_ms=min(8000, round_half_away(1000.0 * r.ttc_s)),
                        collision_lat_e7=quantize_lat(hit.lat),
                        collision_lon_e7=quantize_lon(hit.lon),
                    )
                )
            except PassError as exc:
                log.warning("skipping pair ped=%s veh=%s: %s", pid, vid, exc)
    alerts.sort(key=lambda a: (a.ttc_ms, a.pedestrian_temp_id, a.vehicle_temp_id))
    return alerts


class AlertCooldown:
    """Suppresses repeat alerts for the same pair within ``cooldown_ms``.

    Single-owner state; the evaluation loop is the only caller.
    """

    def __init__(self, cooldown_ms: int = 1000):
        self.cooldown_ms = cooldown_ms
        self._last: dict[tuple[int, int], int] = {}
        self.suppressed = 0

    def allow(self, alert: Alert) -> bool:
        pair = (alert.pedestrian_temp_id, alert.vehicle_temp_id)
        last = self._last.get(pair)
        if last is not None and alert.timestamp_ms - last < self.cooldown_ms:
            self.suppressed += 1
            return False
        self._last[pair] = alert.timestamp_ms
        return True


def stopping_distance(v0_mps: float, decel_mps2: float) -> float:
    if not decel_mps2 > 0:
        raise NonPositiveDeceleration(f"deceleration must be positive, got {decel_mps2}")
    if v0_mps < 0:
        raise ValueError("initial speed must be non-negative")
    return v0_mps * v0_mps / (2.0 * decel_mps2)
