"""Real-time loopback run: synthetic pedestrians -> RSU -> in-process vehicle.

Frames are produced on a 100 ms grid by a stand-in detector that can hold
each frame for a fixed inference delay before releasing it. Everything runs
on one host clock, so every latency component is measured directly.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from ..config import Calibration
from ..geometry import GeoPosition, apply_homography, geo_to_pixel
from ..perception import Detection
from ..pipeline import Pipeline
from ..pscw import from_local
from ..rsu_net import (
    BroadcastConfig,
    Broadcaster,
    Clock,
    LatencyRecord,
    SendLedger,
    TickRecord,
    VehicleClient,
    percentile,
)
from ..runtime import RsuRuntime, RuntimeStats
from ..tracking import TrackerConfig
from .scenario import BOX_H, BOX_W, synthetic_calibration


def crowd_positions(n: int, t_s: float, spacing_m: float = 6.0, speed_mps: float = 0.5):
    """``n`` pedestrians on a two-row grid, all walking east in step, so no
    two ever come within a gate of each other."""
    cols = max(1, math.ceil(n / 2))
    out = []
    for i in range(n):
        r, c = divmod(i, cols)
        out.append((-spacing_m * cols / 2 + spacing_m * c + speed_mps * t_s, spacing_m * (r - 0.5)))
    return out


def crowd_detections(cal: Calibration, positions, frame_ts: int) -> list[Detection]:
    to_image = cal.homography.inverse()
    dets = []
    for e, n in positions:
        g = from_local(cal.anchor, e, n)
        img = apply_homography(to_image, geo_to_pixel(cal.bounds, g))
        dets.append(Detection(1, 0.9, img, BOX_H, BOX_W, frame_ts))
    return dets


def live_crowd_frames(
    cal: Calibration,
    n_tracks: int,
    clock: Clock,
    duration_s: float,
    period_ms: float = 100.0,
    detector_delay_ms: float = 0.0,
    stop: threading.Event | None = None,
) -> Iterator[tuple[int, list[Detection]]]:
    start = clock.now_ms()
    k = 0
    while k * period_ms <= duration_s * 1000.0:
        if not clock.sleep_until(start + k * period_ms, stop):
            return
        frame_ts = int(math.floor(clock.now_ms()))
        dets = crowd_detections(cal, crowd_positions(n_tracks, k * period_ms / 1000.0), frame_ts)
        if detector_delay_ms > 0 and not clock.sleep_until(frame_ts + detector_delay_ms, stop):
            return
        yield frame_ts, dets
        k += 1


@dataclass
class LoopbackResult:
    records: list[LatencyRecord]
    ticks: list[TickRecord]
    psms_sent: int
    queue_drops: int
    runtime: RuntimeStats
    decode_errors: int

    @property
    def unmatched(self) -> int:
        """Received datagrams whose bytes match nothing that was sent."""
        return sum(r.sent_ts is None for r in self.records)

    def psm_records(self) -> list[LatencyRecord]:
        return [r for r in self.records if r.kind == "PSM"]

    def mean_period_ms(self, skip: int = 1) -> float:
        t = [k.started_ms for k in self.ticks[skip:]]
        return (t[-1] - t[0]) / (len(t) - 1)

    def lateness_ms(self) -> np.ndarray:
        return np.array([k.started_ms - k.deadline_ms for k in self.ticks])

    def drift_ms_per_tick(self) -> float:
        """Least-squares slope of tick lateness against tick index."""
        late = self.lateness_ms()
        return float(np.polyfit(np.arange(late.size), late, 1)[0])

    def p99_end_to_end_ms(self) -> float:
        return percentile([r.end_to_end_ms for r in self.psm_records()], 99)


def run_loopback(
    n_tracks: int = 10,
    duration_s: float = 30.0,
    detector_delay_ms: float = 0.0,
    period_ms: float = 100.0,
    tick_guard_ms: float = 10.0,
    tick_hook: Callable[[int], None] | None = None,
    anchor: GeoPosition = GeoPosition(34.679183, -82.847414),
) -> LoopbackResult:
    cal = synthetic_calibration(anchor, 40.0)
    clock = Clock()
    ledger = SendLedger()
    client = VehicleClient(0, "127.0.0.1", clock=clock, ledger=ledger)
    cfg = BroadcastConfig(
        psm_period_ms=period_ms, host="127.0.0.1", port=client.port, tick_guard_ms=tick_guard_ms
    )
    bc = Broadcaster(cfg, clock=clock, ledger=ledger, tick_hook=tick_hook)
    rt = RsuRuntime(Pipeline(cal, TrackerConfig(seed=1)), bc)

    records: list[LatencyRecord] = []
    done = threading.Event()

    def receive():
        for msg, rec in client.listen(stop=done):
            records.append(rec)

    rx = threading.Thread(target=receive, name="vehicle", daemon=True)
    rx.start()
    frames = live_crowd_frames(
        cal, n_tracks, clock, duration_s, period_ms, detector_delay_ms, rt.stop_event
    )
    rt.run(frames, linger_s=2 * period_ms / 1000.0)
    done.set()
    rx.join()
    client.close()
    return LoopbackResult(
        records=records,
        ticks=list(bc.ticks),
        psms_sent=bc.stats.psms_sent,
        queue_drops=bc.stats.queue_drops,
        runtime=rt.stats,
        decode_errors=client.decode_errors,
    )
