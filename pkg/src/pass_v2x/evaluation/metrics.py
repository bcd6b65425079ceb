"""Detection accuracy, location/velocity RMSE, and the sampling TTC oracle."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptySample, LengthMismatch, NonPositiveEpsilon
from ..geometry import CardinalHeading, GeoPosition, haversine_distance
from ..pscw import TTC_HORIZON_S, KinematicState, TtcResult

ORACLE_STEP_S = 0.001


def detection_accuracy(tp: int, fp: int) -> float:
    if tp + fp <= 0:
        raise EmptySample("accuracy needs at least one detection")
    return tp / (tp + fp)


def _check_pair(truth: Sequence, est: Sequence) -> None:
    if len(truth) != len(est):
        raise LengthMismatch(f"{len(truth)} truth samples vs {len(est)} estimates")
    if not truth:
        raise EmptySample("RMSE of an empty sample")


def rmse_location(truth: Sequence[GeoPosition], est: Sequence[GeoPosition]) -> float:
    """Root mean square of the ground distance (m) between aligned fixes."""
    _check_pair(truth, est)
    # hypot scales internally, so tiny residuals do not underflow to zero
    return math.hypot(*(haversine_distance(g, p) for g, p in zip(truth, est))) / math.sqrt(len(truth))


def rmse_velocity(truth: Sequence[float], est: Sequence[float]) -> float:
    _check_pair(truth, est)
    return math.hypot(*(g - p for g, p in zip(truth, est))) / math.sqrt(len(truth))


def ttc_oracle(ped: KinematicState, veh: KinematicState, epsilon_m: float) -> TtcResult:
    """Brute-force TTC: first 1 ms sample in [0, 8] s inside the encounter radius."""
    if not epsilon_m > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon_m}")
    n = int(round(TTC_HORIZON_S / ORACLE_STEP_S)) + 1
    t = np.arange(n) * ORACLE_STEP_S
    dp = np.subtract(ped.pos_m, veh.pos_m)
    dv = np.subtract(ped.vel_mps, veh.vel_mps)
    dist = np.hypot(dp[0] + dv[0] * t, dp[1] + dv[1] * t)
    inside = np.flatnonzero(dist <= epsilon_m)
    closest = float(dist.min())
    if inside.size == 0:
        return TtcResult(None, closest)
    return TtcResult(float(t[inside[0]]), closest)


# -- ground truth files ----------------------------------------------------------

GT_FIELDS = ["ts", "actor_id", "lat", "lon", "velocity_mps", "cardinal"]


@dataclass(frozen=True)
class GroundTruthRecord:
    ts: int
    actor_id: str
    position: GeoPosition
    velocity_mps: float
    cardinal: CardinalHeading


def read_ground_truth(path: str | Path) -> list[GroundTruthRecord]:
    """Read ``ts,actor_id,lat,lon,velocity_mps,cardinal`` rows (header required)."""
    out = []
    last_ts: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(GT_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            rec = GroundTruthRecord(
                ts=int(row["ts"]),
                actor_id=row["actor_id"],
                position=GeoPosition(float(row["lat"]), float(row["lon"])),
                velocity_mps=float(row["velocity_mps"]),
                cardinal=CardinalHeading[row["cardinal"].strip().upper()],
            )
            prev = last_ts.get(rec.actor_id)
            if prev is not None and rec.ts <= prev:
                raise ValueError(f"{path}: timestamps not increasing for actor {rec.actor_id}")
            last_ts[rec.actor_id] = rec.ts
            out.append(rec)
    return out


def write_ground_truth(records: Iterable[GroundTruthRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GT_FIELDS)
        for r in records:
            w.writerow(
                # repr round-trips floats exactly
                [r.ts, r.actor_id, repr(r.position.lat), repr(r.position.lon),
                 repr(r.velocity_mps), r.cardinal.name]
            )


@dataclass(frozen=True)
class MetricRow:
    group: str
    n: int
    rmse_location_m: float | None
    rmse_velocity_mps: float | None


def compare(
    truth: Sequence[GroundTruthRecord],
    est: Sequence[GroundTruthRecord],
    by_direction: bool = False,
) -> list[MetricRow]:
    """Index-aligned location and velocity RMSE, overall or one row per
    truth heading (EW, WE, NS, SN; empty groups report no value)."""
    _check_pair(truth, est)
    if not by_direction:
        groups = {"ALL": list(range(len(truth)))}
    else:
        groups = {c.name: [] for c in CardinalHeading}
        for i, r in enumerate(truth):
            groups[r.cardinal.name].append(i)
    rows = []
    for name, idx in groups.items():
        if not idx:
            rows.append(MetricRow(name, 0, None, None))
            continue
        rows.append(
            MetricRow(
                name,
                len(idx),
                rmse_location([truth[i].position for i in idx], [est[i].position for i in idx]),
                rmse_velocity([truth[i].velocity_mps for i in idx], [est[i].velocity_mps for i in idx]),
            )
        )
    return rows
