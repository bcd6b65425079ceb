"""Frame-to-frame pedestrian association and per-track kinematic state."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import NonMonotonicTimestamp
from .geometry import (
    CardinalHeading,
    GeoPosition,
    classify_heading,
    haversine_distance,
    heading,
    velocity,
)

MSG_COUNT_MOD = 128

# Eq.-9 convention (counter-clockwise from east) for each text heading.
CARDINAL_RAD = {
    CardinalHeading.WE: 0.0,
    CardinalHeading.SN: math.pi / 2,
    CardinalHeading.EW: math.pi,
    CardinalHeading.NS: -math.pi / 2,
}


@dataclass(frozen=True)
class PedestrianTrack:
    temp_id: int
    position: GeoPosition
    last_ts: int
    velocity_mps: float = 0.0
    heading_rad: float = 0.0
    cardinal: CardinalHeading = CardinalHeading.NS
    misses: int = 0
    msg_count: int = 0


@dataclass(frozen=True)
class FrameObservation:
    position: GeoPosition
    ts: int
    confidence: float = 1.0


@dataclass
class TrackerConfig:
    gate_m: float = 1.0
    max_misses: int = 5
    # Exponential smoothing weight on the newest velocity sample; None = raw.
    smoothing: float | None = None
    default_cardinal: CardinalHeading = CardinalHeading.NS
    seed: int | None = None


def associate(
    tracks: Sequence[PedestrianTrack],
    obs: Sequence[FrameObservation],
    gate_m: float,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Greedy nearest-first matching on ground distance.

    Returns ``(matches, unmatched_tracks, unmatched_obs)`` as index lists;
    each match is a ``(track_index, obs_index)`` pair.
    """
    if gate_m <= 0:
        raise ValueError("gate_m must be positive")
    candidates = sorted(
        (haversine_distance(t.position, o.position), ti, oi)
        for ti, t in enumerate(tracks)
        for oi, o in enumerate(obs)
    )
    used_t: set[int] = set()
    used_o: set[int] = set()
    matches = []
    for d, ti, oi in candidates:
        if d > gate_m:
            break
        if ti in used_t or oi in used_o:
            continue
        used_t.add(ti)
        used_o.add(oi)
        matches.append((ti, oi))
    return (
        matches,
        [i for i in range(len(tracks)) if i not in used_t],
        [i for i in range(len(obs)) if i not in used_o],
    )


class Tracker:
    """Owns the live track set. Not thread-safe; drive from one loop."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self._rng = random.Random(self.config.seed)
        self._issued: set[int] = set()
        self._tracks: list[PedestrianTrack] = []
        self._last_ts: int | None = None

    @property
    def live_tracks(self) -> list[PedestrianTrack]:
        return list(self._tracks)

    def _fresh_id(self) -> int:
        while True:
            tid = self._rng.getrandbits(32)
            if tid not in self._issued:
                self._issued.add(tid)
                return tid

    def _advance(self, track: PedestrianTrack, o: FrameObservation, ts: int) -> PedestrianTrack:
        prev, cur = track.position, o.position
        v = velocity(prev, cur, track.last_ts, ts)
        alpha = self.config.smoothing
        if alpha is not None:
            v = alpha * v + (1.0 - alpha) * track.velocity_mps
        moved = haversine_distance(prev, cur) > 0.0
        return replace(
            track,
            position=cur,
            last_ts=ts,
            velocity_mps=v,
            heading_rad=heading(prev, cur) if moved else track.heading_rad,
            cardinal=classify_heading(prev, cur, track.cardinal),
            misses=0,
            msg_count=(track.msg_count + 1) % MSG_COUNT_MOD,
        )

    def step(self, frame: Sequence[FrameObservation], ts: int) -> list[PedestrianTrack]:
        """Ingest one frame; return the tracks observed in it (updated and new).

        Tracks that go unobserved are kept internally for up to
        ``max_misses`` frames so they can be re-associated, but are not
        emitted for those frames.
        """
        if self._last_ts is not None and ts <= self._last_ts:
            raise NonMonotonicTimestamp(f"frame ts {ts} <= previous {self._last_ts}")
        self._last_ts = ts

        matches, lost, fresh = associate(self._tracks, frame, self.config.gate_m)
        emitted: list[PedestrianTrack] = []
        survivors: list[PedestrianTrack] = []
        for ti, oi in matches:
            t = self._advance(self._tracks[ti], frame[oi], ts)
            emitted.append(t)
            survivors.append(t)
        for ti in lost:
            t = self._tracks[ti]
            if t.misses + 1 <= self.config.max_misses:
                survivors.append(replace(t, misses=t.misses + 1))
        card = self.config.default_cardinal
        for oi in fresh:
            t = PedestrianTrack(
                temp_id=self._fresh_id(),
                position=frame[oi].position,
                last_ts=ts,
                velocity_mps=0.0,
                heading_rad=CARDINAL_RAD[card],
                cardinal=card,
            )
            emitted.append(t)
            survivors.append(t)
        self._tracks = survivors
        return emitted
