"""Synthetic crosswalk encounter driven through the full pipeline.

A pedestrian and a vehicle move in a local east/north frame (meters) about
the intersection anchor. Each frame the pedestrian's true position is pushed
back through the calibration into a camera-image detection, the pipeline
turns it into PSMs, the vehicle's truth becomes a BSM, and the collision
warning logic runs on the decoded pair. Once the first alert arrives the
vehicle brakes at a constant rate.

Scenario file (JSON, version 1)::

    {
      "version": 1,
      "anchor": [34.679183, -82.847414],
      "start_ts": 1543609955382,
      "duration_s": 10.0,
      "frame_period_ms": 100,
      "seed": 0,
      "pixel_noise_sigma": 0.0,
      "patch_m": 40.0,
      "pedestrian": {"start_m": [0, 0], "speed_mps": 0.0, "heading_deg": 0.0},
      "vehicle": {"start_m": [0, -130.688], "speed_mps": 17.55, "heading_deg": 0.0,
                  "length_m": 5.0, "decel_mps2": 3.35}
    }

``pedestrian`` may be null (no hazard). Headings are clockwise from north.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..config import Calibration
from ..errors import ConfigError
from ..geometry import (
    GeoBounds,
    GeoPosition,
    PixelPoint,
    apply_homography,
    geo_to_pixel,
    haversine_distance,
)
from ..messages import Alert, build_bsm, decode, encode
from ..perception import Detection
from ..pipeline import Pipeline
from ..pscw import from_local, stopping_distance, to_local
from ..tracking import TrackerConfig

SCENARIO_VERSION = 1
VEHICLE_ID = 0x0000B5A1
# camera looks down the approach: the far edge of the ground patch is
# narrower in the image than the near edge
IMAGE_QUAD = (PixelPoint(0.3, 0.25), PixelPoint(0.7, 0.25), PixelPoint(1.0, 1.0), PixelPoint(0.0, 1.0))
TOP_QUAD = (PixelPoint(0, 0), PixelPoint(1, 0), PixelPoint(1, 1), PixelPoint(0, 1))
BOX_H, BOX_W = 0.12, 0.04


@dataclass
class PedestrianSpec:
    start_m: tuple[float, float] = (0.0, 0.0)
    speed_mps: float = 0.0
    heading_deg: float = 0.0


@dataclass
class VehicleSpec:
    start_m: tuple[float, float] = (0.0, -130.688)
    speed_mps: float = 17.55
    heading_deg: float = 0.0
    length_m: float = 5.0
    decel_mps2: float = 3.35


@dataclass
class ScenarioConfig:
    anchor: GeoPosition = GeoPosition(34.679183, -82.847414)
    start_ts: int = 1543609955382
    duration_s: float = 10.0
    frame_period_ms: int = 100
    seed: int = 0
    pixel_noise_sigma: float = 0.0
    patch_m: float = 40.0
    pedestrian: Optional[PedestrianSpec] = field(default_factory=PedestrianSpec)
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)

    def __post_init__(self):
        if not self.frame_period_ms > 0:
            raise ConfigError("field 'frame_period_ms' must be positive")
        if not self.duration_s > 0:
            raise ConfigError("field 'duration_s' must be positive")
        if not self.patch_m > 0:
            raise ConfigError("field 'patch_m' must be positive")
        if self.pixel_noise_sigma < 0:
            raise ConfigError("field 'pixel_noise_sigma' must be non-negative")
        if not self.vehicle.decel_mps2 > 0:
            raise ConfigError("field 'vehicle.decel_mps2' must be positive")
        if not self.vehicle.length_m > 0:
            raise ConfigError("field 'vehicle.length_m' must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor"] = [self.anchor.lat, self.anchor.lon]
        return {"version": SCENARIO_VERSION, **d}


def _section(doc: dict, key: str, cls):
    raw = doc.get(key)
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError(f"field '{key}' must be an object")
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"field '{key}.{sorted(extra)[0]}' is not recognized")
    kw = dict(raw)
    if "start_m" in kw:
        try:
            e, n = kw["start_m"]
            kw["start_m"] = (float(e), float(n))
        except (TypeError, ValueError):
            raise ConfigError(f"field '{key}.start_m' must be a pair of numbers") from None
    for k, v in kw.items():
        if k != "start_m" and not isinstance(v, (int, float)):
            raise ConfigError(f"field '{key}.{k}' must be a number")
    return cls(**kw)


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    if doc.get("version") != SCENARIO_VERSION:
        raise ConfigError(f"field 'version': unsupported scenario version {doc.get('version')!r}")
    known = set(ScenarioConfig.__dataclass_fields__) | {"version"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"field '{sorted(extra)[0]}' is not recognized")
    kw = {}
    if "anchor" in doc:
        try:
            lat, lon = doc["anchor"]
            kw["anchor"] = GeoPosition(float(lat), float(lon))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field 'anchor': {exc}") from None
    for k in ("start_ts", "seed", "frame_period_ms"):
        if k in doc:
            if not isinstance(doc[k], int):
                raise ConfigError(f"field '{k}' must be an integer")
            kw[k] = doc[k]
    for k in ("duration_s", "pixel_noise_sigma", "patch_m"):
        if k in doc:
            if not isinstance(doc[k], (int, float)):
                raise ConfigError(f"field '{k}' must be a number")
            kw[k] = float(doc[k])
    kw["pedestrian"] = _section(doc, "pedestrian", PedestrianSpec)
    if "vehicle" in doc:
        kw["vehicle"] = _section(doc, "vehicle", VehicleSpec) or VehicleSpec()
    return ScenarioConfig(**kw)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return scenario_from_dict(doc)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def synthetic_calibration(anchor: GeoPosition, patch_m: float) -> Calibration:
    """North-aligned square ground patch of half-width ``patch_m`` centred on
    the anchor, seen through a fixed perspective."""
    nw = from_local(anchor, -patch_m, patch_m)
    ne = from_local(anchor, patch_m, patch_m)
    se = from_local(anchor, patch_m, -patch_m)
    sw = from_local(anchor, -patch_m, -patch_m)
    return Calibration(
        image_width=1920,
        image_height=1080,
        image_points=list(IMAGE_QUAD),
        top_points=list(TOP_QUAD),
        bounds=GeoBounds(nw, ne, se, sw),
        anchor=anchor,
    )


def _unit(heading_deg: float) -> tuple[float, float]:
    h = math.radians(heading_deg)
    return math.sin(h), math.cos(h)


@dataclass(frozen=True)
class TrajectoryRow:
    t_ms: int
    actor: str
    source: str  # truth | estimate
    east_m: float
    north_m: float
    lat: float
    lon: float
    speed_mps: float


@dataclass
class ScenarioReport:
    frames: int
    alerts: list[Alert]
    first_alert_t_ms: Optional[int]
    first_alert_ttc_s: Optional[float]
    alert_position: Optional[GeoPosition]
    vehicle_at_alert_m: Optional[tuple[float, float]]
    vehicle_speed_at_alert: Optional[float]
    stop_distance_m: Optional[float]
    stop_position_m: Optional[tuple[float, float]]
    collision_point_m: Optional[tuple[float, float]]
    margin_m: Optional[float]
    halted_short: Optional[bool]
    max_localization_error_m: Optional[float]
    localization_rmse_m: Optional[float]
    vehicle_final_speed_mps: float
    trajectories: list[TrajectoryRow] = field(repr=False, default_factory=list)

    def summary(self) -> list[tuple[str, str]]:
        def f(x, spec=".4f"):
            if x is None:
                return ""
            if isinstance(x, bool):
                return str(x).lower()
            return format(x, spec)

        def pair(p):
            return "" if p is None else f"{p[0]:.4f} {p[1]:.4f}"

        ap = self.alert_position
        return [
            ("frames", str(self.frames)),
            ("alerts", str(len(self.alerts))),
            ("first_alert_t_ms", "" if self.first_alert_t_ms is None else str(self.first_alert_t_ms)),
            ("first_alert_ttc_s", f(self.first_alert_ttc_s, ".3f")),
            ("alert_lat", "" if ap is None else f"{ap.lat:.7f}"),
            ("alert_lon", "" if ap is None else f"{ap.lon:.7f}"),
            ("vehicle_at_alert_m", pair(self.vehicle_at_alert_m)),
            ("vehicle_speed_at_alert_mps", f(self.vehicle_speed_at_alert)),
            ("stop_distance_m", f(self.stop_distance_m)),
            ("stop_position_m", pair(self.stop_position_m)),
            ("collision_point_m", pair(self.collision_point_m)),
            ("margin_m", f(self.margin_m)),
            ("halted_short", f(self.halted_short)),
            ("max_localization_error_m", f(self.max_localization_error_m, ".6f")),
            ("localization_rmse_m", f(self.localization_rmse_m, ".6f")),
            ("vehicle_final_speed_mps", f(self.vehicle_final_speed_mps)),
        ]


class _Vehicle:
    """Constant speed until ``brake``, then constant deceleration to rest."""

    def __init__(self, spec: VehicleSpec):
        self.spec = spec
        self.ux, self.uy = _unit(spec.heading_deg)
        self.brake_at: Optional[float] = None
        self.brake_s0 = 0.0

    def _s_v(self, t: float) -> tuple[float, float]:
        v0, a = self.spec.speed_mps, self.spec.decel_mps2
        if self.brake_at is None or t <= self.brake_at:
            return v0 * t, v0
        tau = min(t - self.brake_at, v0 / a)
        return self.brake_s0 + v0 * tau - 0.5 * a * tau * tau, max(0.0, v0 - a * (t - self.brake_at))

    def state(self, t: float) -> tuple[tuple[float, float], float]:
        s, v = self._s_v(t)
        x0, y0 = self.spec.start_m
        return (x0 + self.ux * s, y0 + self.uy * s), v

    def brake(self, t: float) -> None:
        if self.brake_at is None:
            self.brake_s0 = self._s_v(t)[0]
            self.brake_at = t


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    cal = synthetic_calibration(cfg.anchor, cfg.patch_m)
    to_image = cal.homography.inverse()
    pipe = Pipeline(cal, TrackerConfig(seed=cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    veh = _Vehicle(cfg.vehicle)
    ped = cfg.pedestrian
    pux, puy = _unit(ped.heading_deg) if ped else (0.0, 0.0)

    n_frames = int(math.floor(cfg.duration_s * 1000 / cfg.frame_period_ms)) + 1
    rows: list[TrajectoryRow] = []
    alerts: list[Alert] = []
    first: Optional[Alert] = None
    first_t = None
    veh_at_alert = speed_at_alert = None
    loc_err: list[float] = []

    def row(t_ms, actor, source, g, speed):
        e, n = to_local(cfg.anchor, g).pos_m
        rows.append(TrajectoryRow(t_ms, actor, source, e, n, g.lat, g.lon, speed))

    for k in range(n_frames):
        t_ms = k * cfg.frame_period_ms
        t = t_ms / 1000.0
        now = cfg.start_ts + t_ms

        dets = []
        if ped is not None:
            pe = ped.start_m[0] + pux * ped.speed_mps * t
            pn = ped.start_m[1] + puy * ped.speed_mps * t
            truth = from_local(cfg.anchor, pe, pn)
            row(t_ms, "pedestrian", "truth", truth, ped.speed_mps)
            img = apply_homography(to_image, geo_to_pixel(cal.bounds, truth))
            if cfg.pixel_noise_sigma > 0:
                dx, dy = rng.normal(0.0, cfg.pixel_noise_sigma, 2)
                img = PixelPoint(img.px + dx, img.py + dy)
            dets.append(Detection(1, 0.9, img, BOX_H, BOX_W, now))

        result = pipe.process(now, dets)
        psms = [decode(encode(p)) for p in result.psms]
        if ped is not None:
            for p in psms:
                loc_err.append(haversine_distance(p.position, truth))
                row(t_ms, "pedestrian", "estimate", p.position, p.speed_mps)

        (ve, vn), vspeed = veh.state(t)
        vpos = from_local(cfg.anchor, ve, vn)
        row(t_ms, "vehicle", "truth", vpos, vspeed)
        bsm = decode(
            encode(
                build_bsm(VEHICLE_ID, vpos, vspeed, cfg.vehicle.heading_deg, now,
                          msg_count=k, length_m=cfg.vehicle.length_m)
            )
        )
        frame_alerts = pipe.alerts(psms, [bsm], now)
        alerts.extend(frame_alerts)
        if frame_alerts and first is None:
            first, first_t = frame_alerts[0], t_ms
            veh_at_alert, speed_at_alert = (ve, vn), vspeed
            veh.brake(t)

    (fe, fn), fspeed = veh.state(n_frames * cfg.frame_period_ms / 1000.0)
    report = ScenarioReport(
        frames=n_frames,
        alerts=alerts,
        first_alert_t_ms=first_t,
        first_alert_ttc_s=None if first is None else first.ttc_s,
        alert_position=None if first is None else first.position,
        vehicle_at_alert_m=veh_at_alert,
        vehicle_speed_at_alert=speed_at_alert,
        stop_distance_m=None,
        stop_position_m=None,
        collision_point_m=None,
        margin_m=None,
        halted_short=None,
        max_localization_error_m=max(loc_err) if loc_err else None,
        localization_rmse_m=math.sqrt(sum(e * e for e in loc_err) / len(loc_err)) if loc_err else None,
        vehicle_final_speed_mps=fspeed,
        trajectories=rows,
    )
    if first is not None:
        d = stopping_distance(speed_at_alert, cfg.vehicle.decel_mps2)
        ux, uy = veh.ux, veh.uy
        stop = (veh_at_alert[0] + ux * d, veh_at_alert[1] + uy * d)
        hit = to_local(cfg.anchor, first.position).pos_m
        # distance still to travel along the heading to reach the collision point
        ahead = (hit[0] - veh_at_alert[0]) * ux + (hit[1] - veh_at_alert[1]) * uy
        report.stop_distance_m = d
        report.stop_position_m = stop
        report.collision_point_m = hit
        report.margin_m = ahead - d
        report.halted_short = ahead - d > 0
    return report


def write_report(report: ScenarioReport, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep, traj = out / "report.csv", out / "trajectories.csv"
    with open(rep, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerows(report.summary())
    with open(traj, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "actor", "source", "east_m", "north_m", "lat", "lon", "speed_mps"])
        for r in report.trajectories:
            w.writerow([r.t_ms, r.actor, r.source, f"{r.east_m:.4f}", f"{r.north_m:.4f}",
                        f"{r.lat:.9f}", f"{r.lon:.9f}", f"{r.speed_mps:.4f}"])
    return rep, traj
