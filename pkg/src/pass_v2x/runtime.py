"""Live RSU process: ingestion, pipeline and broadcaster contexts.

Ingestion reads frames from a source and hands them to the pipeline thread
through a bounded drop-oldest queue; the pipeline hands track snapshots and
alerts to the :class:`~pass_v2x.rsu_net.Broadcaster`. Nothing on the
pipeline side ever blocks on the network.
"""

from __future__ import annotations

import collections
import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

from .errors import NonMonotonicTimestamp, PassError
from .messages import Bsm
from .perception import Detection
from .pipeline import Pipeline
from .rsu_net import Broadcaster, BsmListener, Clock, Snapshot, VirtualClock

log = logging.getLogger(__name__)

Frame = tuple[int, list[Detection]]


@dataclass
class RuntimeStats:
    frames_in: int = 0
    frames_dropped: int = 0
    frames_rejected: int = 0
    live_tracks: int = 0


class FrameQueue:
    """Bounded single-consumer handoff that drops the oldest frame on overflow."""

    def __init__(self, maxlen: int = 4):
        self._q: collections.deque = collections.deque()
        self._maxlen = maxlen
        self._cv = threading.Condition()
        self._closed = False
        self.dropped = 0

    def put(self, item) -> None:
        with self._cv:
            if len(self._q) >= self._maxlen:
                self._q.popleft()
                self.dropped += 1
            self._q.append(item)
            self._cv.notify()

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()

    def get(self, timeout: float | None = None):
        """Next item, or None once closed and drained (or on timeout)."""
        with self._cv:
            if not self._q and not self._closed:
                self._cv.wait(timeout)
            if self._q:
                return self._q.popleft()
            return None

    @property
    def closed(self) -> bool:
        with self._cv:
            return self._closed and not self._q


def paced(frames: Iterable[Frame], clock: Clock, stop: threading.Event | None = None) -> Iterator[Frame]:
    """Replay at the recorded rate, re-stamping frames onto ``clock`` so
    latency is measured from the replayed capture instant."""
    t0 = base = None
    for ts, dets in frames:
        if t0 is None:
            t0, base = ts, clock.now_ms()
        if not clock.sleep_until(base + (ts - t0), stop):
            return
        yield int(math.floor(base + (ts - t0))), dets


class RsuRuntime:
    def __init__(
        self,
        pipeline: Pipeline,
        broadcaster: Broadcaster,
        bsms: Optional[BsmListener] = None,
        bsm_max_age_ms: float = 1000.0,
        queue_size: int = 4,
    ):
        self.pipeline = pipeline
        self.broadcaster = broadcaster
        self.clock = broadcaster.clock
        self.bsms = bsms
        self.bsm_max_age_ms = bsm_max_age_ms
        self.stats = RuntimeStats()
        self.frames = FrameQueue(queue_size)
        self._last_ts: int | None = None
        self.stop_event = threading.Event()

    def _bsm_snapshot(self, now: float) -> list[Bsm]:
        if self.bsms is None:
            return []
        return self.bsms.snapshot(now, self.bsm_max_age_ms)

    def handle_frame(self, frame_ts: int, dets: list[Detection]) -> None:
        """Pipeline step for one frame: PSM snapshot to the tick, alerts out now."""
        if frame_ts < 0:
            frame_ts = int(math.floor(self.clock.now_ms()))
        if self._last_ts is not None and frame_ts <= self._last_ts:
            self.stats.frames_rejected += 1
            log.warning("frame %d is not after %d; skipped", frame_ts, self._last_ts)
            return
        try:
            result = self.pipeline.process(frame_ts, dets)
        except NonMonotonicTimestamp as exc:
            self.stats.frames_rejected += 1
            log.warning("%s", exc)
            return
        self._last_ts = frame_ts
        built = self.clock.now_ms()
        self.stats.live_tracks = len(result.tracks)
        self.broadcaster.submit(Snapshot(frame_ts, built, result.psms))
        bsms = self._bsm_snapshot(built)
        if bsms and result.psms:
            for alert in self.pipeline.alerts(result.psms, bsms, frame_ts):
                self.broadcaster.send_alert(alert)

    # -- virtual clock replay -------------------------------------------------

    def replay_fast(self, frames: Iterable[Frame]) -> None:
        """Single-threaded replay on a virtual clock; ticks fire at the
        deadlines the frame stamps pass."""
        if not isinstance(self.clock, VirtualClock):
            raise TypeError("fast replay needs a VirtualClock broadcaster")
        last = None
        for ts, dets in frames:
            self.stats.frames_in += 1
            self.broadcaster.advance(ts)
            self.clock.advance_to(ts)
            self.handle_frame(ts, dets)
            last = ts
        if last is not None:
            # flush the tick that carries the final frame
            self.broadcaster.advance(last + self.broadcaster.config.psm_period_ms)

    # -- threaded live run ----------------------------------------------------

    def _ingest(self, frames: Iterable[Frame]) -> None:
        try:
            for item in frames:
                if self.stop_event.is_set():
                    break
                self.stats.frames_in += 1
                self.frames.put(item)
        except (OSError, ValueError, PassError) as exc:
            log.error("frame source failed: %s", exc)
        finally:
            self.frames.close()

    def _process(self) -> None:
        while not self.stop_event.is_set():
            item = self.frames.get(timeout=0.1)
            if item is None:
                if self.frames.closed:
                    return
                continue
            self.handle_frame(*item)
        self.stats.frames_dropped = self.frames.dropped

    def run(
        self,
        frames: Iterable[Frame],
        duration_s: float | None = None,
        on_stats: Callable[["RsuRuntime"], None] | None = None,
        stats_interval_s: float = 5.0,
        linger_s: float = 0.0,
    ) -> None:
        """Run until the source ends (plus ``linger_s``), ``duration_s``
        elapses, or ``stop_event`` is set."""
        ingest = threading.Thread(target=self._ingest, args=(frames,), name="ingest", daemon=True)
        work = threading.Thread(target=self._process, name="pipeline", daemon=True)
        self.broadcaster.start()
        ingest.start()
        work.start()
        start = time.monotonic()
        next_stats = start + stats_interval_s
        try:
            while not self.stop_event.is_set():
                if duration_s is not None and time.monotonic() - start >= duration_s:
                    break
                if not work.is_alive():
                    if linger_s > 0:
                        self.stop_event.wait(linger_s)
                    break
                if on_stats is not None and time.monotonic() >= next_stats:
                    on_stats(self)
                    next_stats += stats_interval_s
                self.stop_event.wait(0.05)
        finally:
            self.stop_event.set()
            self.frames.close()
            work.join()
            self.broadcaster.stop()
            self.stats.frames_dropped = self.frames.dropped
            # the source may be blocked on I/O; it is a daemon thread
            ingest.join(timeout=1.0)
