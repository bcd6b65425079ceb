"""Safety message types, quantization to J2735-style units, and the
fixed-layout binary codec.

Frame layout (big-endian, no padding, first byte is the type tag)::

    PSM   0x20  34 bytes  >B B Q H B I i i H H H H B
    BSM   0x14  30 bytes  >B Q B I i i H H H H
    Alert 0x30  27 bytes  >B Q I I H i i

Elevation travels as an unsigned 16-bit value biased by +4096 so that the
full [-4095, 61439] decimeter range fits in two bytes. Positional accuracy
is carried in centimeters so a typical receiver figure such as 0.54 m
survives the round trip unchanged.

See docs/wire_format.md for field offsets.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from typing import ClassVar, Union

from .errors import (
    FieldOutOfRange,
    QuantizationOverflow,
    TruncatedFrame,
    UnknownMessageType,
)
from .geometry import CardinalHeading, GeoPosition
from .tracking import PedestrianTrack

PSM_TYPE = 0x20
BSM_TYPE = 0x14
ALERT_TYPE = 0x30

VRU_PEDESTRIAN = 1

# integer scale factors (units per SI unit)
LATLON_SCALE = 10_000_000  # 1e-7 degree
ELEV_SCALE = 10  # 0.1 m
ACCURACY_SCALE = 100  # 0.01 m
SPEED_SCALE = 50  # 0.02 m/s
HEADING_SCALE = 80  # 0.0125 degree
LENGTH_SCALE = 10  # 0.1 m

HEADING_UNITS = 360 * HEADING_SCALE  # 28800
MAX_TTC_MS = 8000

U8 = (0, 0xFF)
U16 = (0, 0xFFFF)
U32 = (0, 0xFFFF_FFFF)
U64 = (0, 0xFFFF_FFFF_FFFF_FFFF)
LAT_E7 = (-900_000_000, 900_000_000)
LON_E7 = (-1_800_000_000, 1_800_000_000)
ELEV_DM = (-4095, 61439)
SPEED_U = (0, 8191)
HEADING_U = (0, HEADING_UNITS - 1)
DSECOND = (0, 60999)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _clamp(v: int, bounds: tuple[int, int]) -> int:
    return max(bounds[0], min(bounds[1], v))


def quantize_lat(lat: float) -> int:
    q = round_half_away(lat * LATLON_SCALE)
    if not LAT_E7[0] <= q <= LAT_E7[1]:
        raise QuantizationOverflow(f"latitude {lat} out of range")
    return q


def quantize_lon(lon: float) -> int:
    q = round_half_away(lon * LATLON_SCALE)
    if not LON_E7[0] <= q <= LON_E7[1]:
        raise QuantizationOverflow(f"longitude {lon} out of range")
    return q


def quantize_elevation(m: float) -> int:
    return _clamp(round_half_away(m * ELEV_SCALE), ELEV_DM)


def quantize_accuracy(m: float) -> int:
    return _clamp(round_half_away(m * ACCURACY_SCALE), U16)


def quantize_speed(mps: float) -> int:
    return _clamp(round_half_away(mps * SPEED_SCALE), SPEED_U)


def quantize_heading_deg(deg_from_north: float) -> int:
    return round_half_away((deg_from_north % 360.0) * HEADING_SCALE) % HEADING_UNITS


def heading_to_wire(heading_rad: float) -> int:
    """Counter-clockwise-from-east radians to 0.0125 degree units clockwise
    from north."""
    return quantize_heading_deg((90.0 - math.degrees(heading_rad)) % 360.0)


def dsecond_of(timestamp_ms: int) -> int:
    return timestamp_ms % 60_000


ELEV_BIAS = 4096


class _Message:
    MSG_TYPE: ClassVar[int]
    FORMAT: ClassVar[struct.Struct]
    RANGES: ClassVar[dict[str, tuple[int, int]]]
    WIRE_BIAS: ClassVar[dict[str, int]] = {}

    def validate(self) -> None:
        for name, (lo, hi) in self.RANGES.items():
            v = getattr(self, name)
            if not isinstance(v, int) or not lo <= v <= hi:
                raise FieldOutOfRange(f"{type(self).__name__}.{name}={v!r} outside [{lo}, {hi}]")

    def wire_values(self) -> tuple:
        return tuple(getattr(self, f.name) + self.WIRE_BIAS.get(f.name, 0) for f in fields(self))

    @classmethod
    def from_wire(cls, values: tuple):
        names = [f.name for f in fields(cls)]
        return cls(*(v - cls.WIRE_BIAS.get(n, 0) for n, v in zip(names, values)))

    @property
    def position(self) -> GeoPosition:
        return GeoPosition(self.lat_e7 / LATLON_SCALE, self.lon_e7 / LATLON_SCALE)


@dataclass(frozen=True)
class Psm(_Message):
    MSG_TYPE: ClassVar[int] = PSM_TYPE
    FORMAT: ClassVar[struct.Struct] = struct.Struct(">BBQHBIiiHHHHB")
    WIRE_BIAS: ClassVar[dict] = {"elev_dm": ELEV_BIAS}

    device_user_type: int
    timestamp_ms: int
    dsecond: int
    msg_count: int
    temp_id: int
    lat_e7: int
    lon_e7: int
    elev_dm: int
    pos_accuracy_cm: int
    speed_u: int
    heading_u: int
    cardinal: int

    RANGES: ClassVar[dict] = {
        "device_user_type": (0, 4),
        "timestamp_ms": U64,
        "dsecond": DSECOND,
        "msg_count": (0, 127),
        "temp_id": U32,
        "lat_e7": LAT_E7,
        "lon_e7": LON_E7,
        "elev_dm": ELEV_DM,
        "pos_accuracy_cm": U16,
        "speed_u": SPEED_U,
        "heading_u": HEADING_U,
        "cardinal": (0, 3),
    }

    def validate(self) -> None:
        super().validate()
        # 60000..60999 flag a leap second; anything else must match the stamp
        if self.dsecond < 60_000 and self.dsecond != dsecond_of(self.timestamp_ms):
            raise FieldOutOfRange(
                f"dsecond {self.dsecond} inconsistent with timestamp {self.timestamp_ms}"
            )

    @property
    def speed_mps(self) -> float:
        return self.speed_u / SPEED_SCALE

    @property
    def heading_deg(self) -> float:
        return self.heading_u / HEADING_SCALE

    @property
    def elevation_m(self) -> float:
        return self.elev_dm / ELEV_SCALE

    @property
    def pos_accuracy_m(self) -> float:
        return self.pos_accuracy_cm / ACCURACY_SCALE

    @property
    def cardinal_heading(self) -> CardinalHeading:
        return CardinalHeading(self.cardinal)


@dataclass(frozen=True)
class Bsm(_Message):
    MSG_TYPE: ClassVar[int] = BSM_TYPE
    FORMAT: ClassVar[struct.Struct] = struct.Struct(">BQBIiiHHHH")
    WIRE_BIAS: ClassVar[dict] = {"elev_dm": ELEV_BIAS}

    timestamp_ms: int
    msg_count: int
    temp_id: int
    lat_e7: int
    lon_e7: int
    elev_dm: int
    speed_u: int
    heading_u: int
    length_dm: int = 50  # 5.0 m passenger car

    RANGES: ClassVar[dict] = {
        "timestamp_ms": U64,
        "msg_count": (0, 127),
        "temp_id": U32,
        "lat_e7": LAT_E7,
        "lon_e7": LON_E7,
        "elev_dm": ELEV_DM,
        "speed_u": SPEED_U,
        "heading_u": HEADING_U,
        "length_dm": (1, 0xFFFF),
    }

    @property
    def speed_mps(self) -> float:
        return self.speed_u / SPEED_SCALE

    @property
    def heading_deg(self) -> float:
        return self.heading_u / HEADING_SCALE

    @property
    def length_m(self) -> float:
        return self.length_dm / LENGTH_SCALE


@dataclass(frozen=True)
class Alert(_Message):
    MSG_TYPE: ClassVar[int] = ALERT_TYPE
    FORMAT: ClassVar[struct.Struct] = struct.Struct(">BQIIHii")

    timestamp_ms: int
    pedestrian_temp_id: int
    vehicle_temp_id: int
    ttc_ms: int
    collision_lat_e7: int
    collision_lon_e7: int

    RANGES: ClassVar[dict] = {
        "timestamp_ms": U64,
        "pedestrian_temp_id": U32,
        "vehicle_temp_id": U32,
        "ttc_ms": (0, MAX_TTC_MS),
        "collision_lat_e7": LAT_E7,
        "collision_lon_e7": LON_E7,
    }

    @property
    def ttc_s(self) -> float:
        return self.ttc_ms / 1000.0

    @property
    def position(self) -> GeoPosition:
        return GeoPosition(
            self.collision_lat_e7 / LATLON_SCALE, self.collision_lon_e7 / LATLON_SCALE
        )


Message = Union[Psm, Bsm, Alert]
_BY_TYPE = {cls.MSG_TYPE: cls for cls in (Psm, Bsm, Alert)}
FRAME_SIZES = {t: cls.FORMAT.size for t, cls in _BY_TYPE.items()}


def encode(msg: Message) -> bytes:
    msg.validate()
    return msg.FORMAT.pack(msg.MSG_TYPE, *msg.wire_values())


def decode(buf: bytes) -> Message:
    if not buf:
        raise TruncatedFrame("empty frame")
    cls = _BY_TYPE.get(buf[0])
    if cls is None:
        raise UnknownMessageType(f"unknown message type 0x{buf[0]:02x}")
    if len(buf) != cls.FORMAT.size:
        raise TruncatedFrame(
            f"{cls.__name__} frame is {cls.FORMAT.size} bytes, got {len(buf)}"
        )
    msg = cls.from_wire(cls.FORMAT.unpack(buf)[1:])
    msg.validate()
    return msg


@dataclass
class PsmConfig:
    elevation_m: float = 201.0
    positional_accuracy_m: float = 0.54
    device_user_type: int = VRU_PEDESTRIAN


def build_psm(track: PedestrianTrack, now: int, config: PsmConfig | None = None) -> Psm:
    cfg = config or PsmConfig()
    return Psm(
        device_user_type=cfg.device_user_type,
        timestamp_ms=now,
        dsecond=dsecond_of(now),
        msg_count=track.msg_count,
        temp_id=track.temp_id,
        lat_e7=quantize_lat(track.position.lat),
        lon_e7=quantize_lon(track.position.lon),
        elev_dm=quantize_elevation(cfg.elevation_m),
        pos_accuracy_cm=quantize_accuracy(cfg.positional_accuracy_m),
        speed_u=quantize_speed(track.velocity_mps),
        heading_u=heading_to_wire(track.heading_rad),
        cardinal=int(track.cardinal),
    )


def build_bsm(
    temp_id: int,
    position: GeoPosition,
    speed_mps: float,
    heading_deg: float,
    now: int,
    msg_count: int = 0,
    length_m: float = 5.0,
    elevation_m: float = 201.0,
) -> Bsm:
    """``heading_deg`` is clockwise from north, as carried on the wire."""
    return Bsm(
        timestamp_ms=now,
        msg_count=msg_count % 128,
        temp_id=temp_id,
        lat_e7=quantize_lat(position.lat),
        lon_e7=quantize_lon(position.lon),
        elev_dm=quantize_elevation(elevation_m),
        speed_u=quantize_speed(speed_mps),
        heading_u=quantize_heading_deg(heading_deg),
        length_dm=max(1, min(0xFFFF, round_half_away(length_m * LENGTH_SCALE))),
    )


def format_row(msg: Message) -> str:
    """One human-readable line per message, PSMs in the column order of a
    published PSM sample table."""
    if isinstance(msg, Psm):
        user = "VRU" if msg.device_user_type == VRU_PEDESTRIAN else str(msg.device_user_type)
        p = msg.position
        return (
            f"PSM\t{user}\t{msg.timestamp_ms}\t{msg.msg_count}\t{msg.temp_id}\t"
            f"{p.lat:.7f}\t{p.lon:.7f}\t{msg.elevation_m:g}\t{msg.pos_accuracy_m:g}\t"
            f"{msg.speed_mps:.2f}\t{msg.cardinal_heading.name}"
        )
    if isinstance(msg, Bsm):
        p = msg.position
        return (
            f"BSM\t{msg.timestamp_ms}\t{msg.msg_count}\t{msg.temp_id}\t{p.lat:.7f}\t"
            f"{p.lon:.7f}\t{msg.speed_mps:.2f}\t{msg.heading_deg:.4f}\t{msg.length_m:g}"
        )
    p = msg.position
    return (
        f"ALERT\t{msg.timestamp_ms}\tped={msg.pedestrian_temp_id}\t"
        f"veh={msg.vehicle_temp_id}\tttc={msg.ttc_s:.3f}\t{p.lat:.7f}\t{p.lon:.7f}"
    )
