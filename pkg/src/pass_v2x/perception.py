"""Detector output ingestion, duplicate suppression, and road-mask filtering."""

from __future__ import annotations

import math
import socket
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ZeroAreaBox
from .geometry import PixelPoint

PEDESTRIAN = 1
DEFAULT_MIN_CONFIDENCE = 0.25
DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    """One detector box. ``anchor`` is the bottom-center (foot) point, so the
    box covers ``[px - w/2, px + w/2] x [py - h, py]`` in relative units."""

    class_flag: int
    confidence: float
    anchor: PixelPoint
    box_h: float
    box_w: float
    frame_ts: int = 0

    @property
    def is_pedestrian(self) -> bool:
        return self.class_flag == PEDESTRIAN

    def extent(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1), clipped to the image."""
        x0 = max(0.0, self.anchor.px - self.box_w / 2)
        x1 = min(1.0, self.anchor.px + self.box_w / 2)
        y0 = max(0.0, self.anchor.py - self.box_h)
        y1 = min(1.0, self.anchor.py)
        return x0, y0, x1, y1

    def area(self) -> float:
        x0, y0, x1, y1 = self.extent()
        return max(0.0, x1 - x0) * max(0.0, y1 - y0)


@dataclass(frozen=True)
class RoadMask:
    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if bits.size != self.width * self.height:
            raise ValueError(
                f"mask has {bits.size} entries, expected {self.width}x{self.height}"
            )
        if np.any(bits > 1):
            raise ValueError("mask entries must be 0 or 1")
        bits = bits.reshape(self.height, self.width).copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, width: int = 1, height: int = 1) -> "RoadMask":
        return cls(width, height, np.ones(width * height, dtype=np.uint8))

    def at(self, p: PixelPoint) -> int:
        # cell i covers [i/dim, (i+1)/dim); 1.0 lands on the last cell
        col = min(math.floor(p.px * self.width), self.width - 1)
        row = min(math.floor(p.py * self.height), self.height - 1)
        if not (0 <= col < self.width and 0 <= row < self.height):
            return 0
        return int(self.bits[row, col])


def iou(a: Detection, b: Detection) -> float:
    area_a, area_b = a.area(), b.area()
    if area_a == 0.0 or area_b == 0.0:
        raise ZeroAreaBox("IoU is undefined for a zero-area box")
    ax0, ay0, ax1, ay1 = a.extent()
    bx0, by0, bx1, by1 = b.extent()
    w = min(ax1, bx1) - max(ax0, bx0)
    h = min(ay1, by1) - max(ay0, by0)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    inter = w * h
    return inter / (area_a + area_b - inter)


def _rank_key(d: Detection):
    return (-d.confidence, d.anchor.px, d.anchor.py)


def nms(dets: Iterable[Detection], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> list[Detection]:
    """Greedy non-max suppression, highest confidence first."""
    remaining = sorted(dets, key=_rank_key)
    kept: list[Detection] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [d for d in remaining if iou(best, d) <= iou_threshold]
    return kept


def mask_filter(dets: Iterable[Detection], mask: RoadMask) -> list[Detection]:
    return [d for d in dets if mask.at(d.anchor) == 1]


def prepare(
    dets: Iterable[Detection],
    mask: RoadMask | None = None,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[Detection]:
    """Full per-frame perception pass: class and score gating, degenerate box
    culling, NMS, then the road mask."""
    keep = [
        d
        for d in dets
        if d.is_pedestrian and d.confidence >= min_confidence and d.area() > 0.0
    ]
    keep = nms(keep, iou_threshold)
    if mask is not None:
        keep = mask_filter(keep, mask)
    return keep


# -- file formats ------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        tokens.append(int(data[i:j]))
        i = j
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def load_mask(path: str | Path) -> RoadMask:
    """Read a binary PGM (P5); values >= half of maxval are road."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (width, height, maxval), offset = _pgm_tokens(data[2:], 3)
    offset += 2
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    threshold = 128 if maxval == 255 else (maxval + 1) // 2
    return RoadMask(width, height, (raster >= threshold).astype(np.uint8))


def save_mask(mask: RoadMask, path: str | Path) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode()
    Path(path).write_bytes(header + (mask.bits.astype(np.uint8) * 255).tobytes())


def parse_detection_line(line: str) -> Detection:
    """``frame_ts,class_flag,confidence,px,py,ph,pw``"""
    parts = line.strip().split(",")
    if len(parts) != 7:
        raise ValueError(f"expected 7 fields, got {len(parts)}: {line!r}")
    ts, cls, conf, px, py, ph, pw = parts
    return Detection(
        class_flag=int(cls),
        confidence=float(conf),
        anchor=PixelPoint(float(px), float(py)),
        box_h=float(ph),
        box_w=float(pw),
        frame_ts=int(ts),
    )


def format_detection_line(d: Detection) -> str:
    return (
        f"{d.frame_ts},{d.class_flag},{d.confidence:.6g},{d.anchor.px:.9g},"
        f"{d.anchor.py:.9g},{d.box_h:.6g},{d.box_w:.6g}"
    )


def read_replay(path: str | Path) -> Iterator[tuple[int, list[Detection]]]:
    """Yield ``(frame_ts, detections)`` grouped by consecutive identical stamps."""
    with open(path) as fh:
        dets = (
            parse_detection_line(line)
            for line in fh
            if line.strip() and not line.lstrip().startswith("#")
        )
        for ts, group in groupby(dets, key=lambda d: d.frame_ts):
            yield ts, list(group)


def write_replay(frames: Iterable[Iterable[Detection]], path: str | Path) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            for d in frame:
                fh.write(format_detection_line(d) + "\n")


def read_socket_frames(conn: socket.socket) -> Iterator[tuple[int, list[Detection]]]:
    """Frames from a live stream: one detection per line, blank line ends a frame.

    A frame with no detections is an empty line alone and yields ``(-1, [])``
    since it carries no timestamp.
    """
    buf: list[Detection] = []
    with conn.makefile("r", encoding="ascii", newline="\n") as fh:
        for line in fh:
            if line.strip():
                buf.append(parse_detection_line(line))
                continue
            yield (buf[0].frame_ts if buf else -1), buf
            buf = []
    if buf:
        yield buf[0].frame_ts, buf
