"""Simulated roadside unit transport over UDP.

One message per datagram. PSMs go out on absolute 100 ms deadlines; alerts
go out as soon as they are produced. A shared :class:`SendLedger` lets an
in-process vehicle client join receive stamps with build/send stamps to
split latency into compute and network parts.
"""

from __future__ import annotations

import collections
import csv
import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .errors import DecodeError, EmptySample, FieldOutOfRange, QuantizationOverflow
from .messages import Alert, Bsm, Message, Psm, decode, encode
from .pscw import AlertCooldown

log = logging.getLogger(__name__)

MAX_DATAGRAM = 64


class Clock:
    """Epoch-aligned milliseconds driven by the monotonic clock."""

    def __init__(self):
        self._epoch_ms = time.time() * 1000.0
        self._mono = time.monotonic()

    def now_ms(self) -> float:
        return self._epoch_ms + (time.monotonic() - self._mono) * 1000.0

    def sleep_until(self, t_ms: float, stop: threading.Event | None = None) -> bool:
        """Block until ``t_ms``; returns False if ``stop`` fired first."""
        while True:
            left = (t_ms - self.now_ms()) / 1000.0
            if left <= 0:
                return True
            if stop is not None:
                if stop.wait(left):
                    return False
            else:
                time.sleep(left)


class VirtualClock(Clock):
    """Clock driven by frame stamps, for as-fast-as-possible replay."""

    def __init__(self, start_ms: float = 0.0):
        self._now = float(start_ms)

    def now_ms(self) -> float:
        return self._now

    def advance_to(self, t_ms: float) -> None:
        self._now = max(self._now, float(t_ms))

    def sleep_until(self, t_ms: float, stop: threading.Event | None = None) -> bool:
        self.advance_to(t_ms)
        return stop is None or not stop.is_set()


@dataclass(frozen=True)
class LatencyRecord:
    kind: str  # "PSM" or "ALERT"
    frame_ts: int
    received_ts: float
    psm_built_ts: Optional[float] = None
    sent_ts: Optional[float] = None

    @property
    def compute_ms(self) -> Optional[float]:
        return None if self.psm_built_ts is None else self.psm_built_ts - self.frame_ts

    @property
    def network_ms(self) -> Optional[float]:
        return None if self.sent_ts is None else self.received_ts - self.sent_ts

    @property
    def end_to_end_ms(self) -> float:
        return self.received_ts - self.frame_ts


@dataclass
class BroadcastConfig:
    psm_period_ms: float = 100.0
    host: str = "127.0.0.1"  # subscriber address (unicast, loopback or broadcast)
    port: int = 5900
    bind: str = ""
    broadcast: bool = False  # SO_BROADCAST, for subnet broadcast addresses
    alert_cooldown_ms: int = 1000
    queue_size: int = 8
    # first tick waits for the first snapshot, then fires this much later, so
    # the tick grid sits just behind the frame grid
    tick_guard_ms: float = 10.0
    phase_lock: bool = True

    def __post_init__(self):
        if not self.psm_period_ms > 0:
            raise ValueError("psm_period_ms must be positive")
        if self.queue_size < 1:
            raise ValueError("queue_size must be at least 1")


@dataclass(frozen=True)
class Snapshot:
    """PSMs built from one camera frame."""

    frame_ts: int
    built_ts: float
    psms: tuple[Psm, ...]


@dataclass
class BroadcastStats:
    ticks: int = 0
    skipped_ticks: int = 0
    idle_ticks: int = 0  # no new snapshot since the previous tick
    psms_sent: int = 0
    alerts_sent: int = 0
    alerts_suppressed: int = 0
    queue_drops: int = 0
    send_errors: int = 0
    encode_errors: int = 0


@dataclass(frozen=True)
class TickRecord:
    deadline_ms: float
    started_ms: float
    sent: int


class SendLedger:
    """Frame bytes -> (built_ts, sent_ts) for in-process latency joins."""

    def __init__(self, maxlen: int = 100_000):
        self._lock = threading.Lock()
        self._entries: dict[bytes, collections.deque] = {}
        self._order: collections.deque = collections.deque()
        self._maxlen = maxlen

    def record(self, frame: bytes, built_ts: float, sent_ts: float) -> None:
        with self._lock:
            self._entries.setdefault(frame, collections.deque()).append((built_ts, sent_ts))
            self._order.append(frame)
            while len(self._order) > self._maxlen:
                old = self._order.popleft()
                q = self._entries.get(old)
                if q:
                    q.popleft()
                    if not q:
                        del self._entries[old]

    def claim(self, frame: bytes) -> Optional[tuple[float, float]]:
        with self._lock:
            q = self._entries.get(frame)
            if not q:
                return None
            out = q.popleft()
            if not q:
                del self._entries[frame]
            return out


def _udp_socket(bind: str = "", port: int = 0, broadcast: bool = False) -> socket.socket:
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if broadcast:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
    s.bind((bind, port))
    return s


class Broadcaster:
    """Owns the send socket. ``submit`` and ``send_alert`` may be called from
    any thread; the PSM tick runs on its own thread after ``start``."""

    def __init__(
        self,
        config: BroadcastConfig | None = None,
        clock: Clock | None = None,
        ledger: SendLedger | None = None,
        tick_hook: Callable[[int], None] | None = None,
    ):
        self.config = config or BroadcastConfig()
        self.clock = clock or Clock()
        self.ledger = ledger
        self.tick_hook = tick_hook
        self.stats = BroadcastStats()
        self.ticks: list[TickRecord] = []
        self._dest = (self.config.host, self.config.port)
        self._sock = _udp_socket(self.config.bind, 0, broadcast=self.config.broadcast)
        self._send_lock = threading.Lock()
        self._queue: collections.deque[Snapshot] = collections.deque()
        self._queue_lock = threading.Lock()
        self._arrived = threading.Event()
        self._first_arrival: float | None = None
        self._next_deadline: float | None = None  # manual driving only
        self._cooldown = AlertCooldown(self.config.alert_cooldown_ms)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # -- producer side --------------------------------------------------------

    def submit(self, snap: Snapshot) -> None:
        """Hand over the newest track snapshot; never blocks."""
        with self._queue_lock:
            if len(self._queue) >= self.config.queue_size:
                self._queue.popleft()
                self.stats.queue_drops += 1
            self._queue.append(snap)
            if self._first_arrival is None:
                self._first_arrival = self.clock.now_ms()
        self._arrived.set()

    def send_alert(self, alert: Alert, built_ts: float | None = None) -> bool:
        """Send immediately unless the pair is cooling down."""
        allowed = self._cooldown.allow(alert)
        self.stats.alerts_suppressed = self._cooldown.suppressed
        if not allowed:
            return False
        try:
            frame = encode(alert)
        except (FieldOutOfRange, QuantizationOverflow) as exc:
            self.stats.encode_errors += 1
            log.warning("alert not encodable: %s", exc)
            return False
        if self._send(frame, self.clock.now_ms() if built_ts is None else built_ts):
            self.stats.alerts_sent += 1
            return True
        return False

    # -- tick side ------------------------------------------------------------

    def _send(self, frame: bytes, built_ts: float) -> bool:
        with self._send_lock:
            sent = self.clock.now_ms()
            if self.ledger is not None:
                self.ledger.record(frame, built_ts, sent)
            try:
                self._sock.sendto(frame, self._dest)
            except OSError as exc:
                self.stats.send_errors += 1
                log.warning("send failed: %s", exc)
                return False
        return True

    def _take_fresh(self) -> Snapshot | None:
        with self._queue_lock:
            if not self._queue:
                return None
            snap = self._queue.pop()
            self.stats.queue_drops += len(self._queue)
            self._queue.clear()
        return snap

    def tick(self, now_ms: float) -> int:
        """Send one PSM per track in the newest unsent snapshot. A snapshot
        goes out once; re-sending it would repeat its stamp and msgCnt.
        Returns the number of PSMs sent."""
        snap = self._take_fresh()
        if snap is None:
            self.stats.idle_ticks += 1
            return 0
        n = 0
        for psm in snap.psms:
            try:
                frame = encode(psm)
            except (FieldOutOfRange, QuantizationOverflow) as exc:
                self.stats.encode_errors += 1
                log.warning("PSM %s skipped: %s", psm.temp_id, exc)
                continue
            if self._send(frame, snap.built_ts):
                n += 1
        self.stats.psms_sent += n
        return n

    def _fire(self, deadline: float) -> None:
        started = self.clock.now_ms()
        if self.tick_hook is not None:
            self.tick_hook(self.stats.ticks)
        sent = self.tick(started)
        self.ticks.append(TickRecord(deadline, started, sent))
        self.stats.ticks += 1

    def advance(self, now_ms: float) -> int:
        """Drive ticks by hand (no thread): fire every deadline up to
        ``now_ms``. Used with a virtual clock. Returns ticks fired."""
        if self._next_deadline is None:
            if self._first_arrival is None:
                return 0
            self._next_deadline = self._first_arrival + self.config.tick_guard_ms
        fired = 0
        while self._next_deadline <= now_ms:
            if isinstance(self.clock, VirtualClock):
                self.clock.advance_to(self._next_deadline)
            self._fire(self._next_deadline)
            self._next_deadline += self.config.psm_period_ms
            fired += 1
        return fired

    def _loop(self) -> None:
        period = self.config.psm_period_ms
        if self.config.phase_lock:
            while not self._arrived.wait(0.05):
                if self._stop.is_set():
                    return
            deadline = self._first_arrival + self.config.tick_guard_ms
        else:
            deadline = self.clock.now_ms() + period
        while self.clock.sleep_until(deadline, self._stop):
            self._fire(deadline)
            deadline += period
            # fell more than a whole period behind: drop the missed slots but
            # stay on the original grid
            now = self.clock.now_ms()
            if now > deadline + period:
                missed = math.floor((now - deadline) / period)
                deadline += missed * period
                self.stats.skipped_ticks += missed

    def start(self) -> "Broadcaster":
        self._thread = threading.Thread(target=self._loop, name="psm-tick", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sock.close()

    def __enter__(self) -> "Broadcaster":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class VehicleClient:
    """Receives RSU datagrams, decodes them and stamps latency records."""

    def __init__(
        self,
        port: int = 0,
        bind: str = "127.0.0.1",
        clock: Clock | None = None,
        ledger: SendLedger | None = None,
    ):
        self.clock = clock or Clock()
        self.ledger = ledger
        self.sock = _udp_socket(bind, port)
        self.port = self.sock.getsockname()[1]
        self.decode_errors = 0
        self.received = 0

    def receive(self, timeout_s: float | None = None) -> Optional[tuple[Message, LatencyRecord]]:
        """One decoded message, or None on timeout. Malformed datagrams are
        counted and skipped."""
        self.sock.settimeout(timeout_s)
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        while True:
            try:
                data, _ = self.sock.recvfrom(2048)
            except (socket.timeout, BlockingIOError):
                return None
            rx = self.clock.now_ms()
            self.received += 1
            try:
                msg = decode(data)
            except DecodeError as exc:
                self.decode_errors += 1
                log.debug("dropping datagram: %s", exc)
                if deadline is not None:
                    left = deadline - time.monotonic()
                    if left <= 0:
                        return None
                    self.sock.settimeout(left)
                continue
            stamps = self.ledger.claim(data) if self.ledger is not None else None
            built, sent = stamps if stamps is not None else (None, None)
            kind = type(msg).__name__.upper()
            return msg, LatencyRecord(kind, msg.timestamp_ms, rx, built, sent)

    def listen(
        self, duration_s: float | None = None, stop: threading.Event | None = None
    ) -> Iterator[tuple[Message, LatencyRecord]]:
        end = None if duration_s is None else time.monotonic() + duration_s
        while stop is None or not stop.is_set():
            left = 0.1 if end is None else min(0.1, end - time.monotonic())
            if left <= 0:
                return
            got = self.receive(left)
            if got is not None:
                yield got

    def send_bsm(self, bsm: Bsm, dest: tuple[str, int]) -> None:
        self.sock.sendto(encode(bsm), dest)

    def close(self) -> None:
        self.sock.close()


class BsmListener:
    """Collects the newest BSM per vehicle on a background thread."""

    def __init__(self, port: int = 0, bind: str = "127.0.0.1"):
        self.sock = _udp_socket(bind, port)
        self.port = self.sock.getsockname()[1]
        self.sock.settimeout(0.1)
        self.decode_errors = 0
        self._latest: dict[int, Bsm] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="bsm-rx", daemon=True)

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, _ = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                msg = decode(data)
            except DecodeError:
                self.decode_errors += 1
                continue
            if not isinstance(msg, Bsm):
                continue
            with self._lock:
                cur = self._latest.get(msg.temp_id)
                if cur is None or msg.timestamp_ms >= cur.timestamp_ms:
                    self._latest[msg.temp_id] = msg

    def snapshot(self, now_ms: float | None = None, max_age_ms: float = 1000.0) -> list[Bsm]:
        with self._lock:
            bsms = list(self._latest.values())
        if now_ms is None:
            return bsms
        return [b for b in bsms if now_ms - b.timestamp_ms <= max_age_ms]

    def start(self) -> "BsmListener":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join()
        self.sock.close()


# -- reporting -------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyStat:
    kind: str
    n: int
    min_ms: float
    max_ms: float
    mean_ms: float


@dataclass
class LatencyReport:
    rows: list[LatencyStat]
    histogram: dict[int, int] = field(default_factory=dict)

    def row(self, kind: str) -> LatencyStat:
        return next(r for r in self.rows if r.kind == kind)


def _stat(kind: str, values: Sequence[float]) -> LatencyStat:
    return LatencyStat(kind, len(values), min(values), max(values), sum(values) / len(values))


def latency_report(records: Iterable[LatencyRecord]) -> LatencyReport:
    """Min/max/mean per latency type plus a 1 ms end-to-end histogram."""
    recs = list(records)
    if not recs:
        raise EmptySample("latency report needs at least one record")
    rows = []
    compute = [r.compute_ms for r in recs if r.compute_ms is not None]
    network = [r.network_ms for r in recs if r.network_ms is not None]
    e2e = [r.end_to_end_ms for r in recs]
    if compute:
        rows.append(_stat("compute", compute))
    if network:
        rows.append(_stat("network", network))
    rows.append(_stat("end_to_end", e2e))
    hist = collections.Counter(math.floor(v) for v in e2e)
    return LatencyReport(rows, dict(sorted(hist.items())))


def fraction_within(records: Iterable[LatencyRecord], lo_ms: float, hi_ms: float) -> float:
    vals = [r.end_to_end_ms for r in records]
    if not vals:
        raise EmptySample("no records")
    return sum(lo_ms <= v <= hi_ms for v in vals) / len(vals)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile, ``q`` in (0, 100]."""
    if not values:
        raise EmptySample("no values")
    s = sorted(values)
    k = max(1, math.ceil(q / 100.0 * len(s)))
    return s[k - 1]


def write_latency_report(report: LatencyReport, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, hist = out / "latency.csv", out / "histogram.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["type", "min_ms", "max_ms", "mean_ms"])
        for r in report.rows:
            w.writerow([r.kind, f"{r.min_ms:.3f}", f"{r.max_ms:.3f}", f"{r.mean_ms:.3f}"])
    with open(hist, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_start_ms", "count"])
        for b, c in report.histogram.items():
            w.writerow([b, c])
    return summary, hist
