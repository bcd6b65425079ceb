"""Per-frame composition: detections -> ground positions -> tracks -> PSMs,
and PSM/BSM pairs -> alerts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .config import Calibration
from .errors import PointAtInfinity
from .geometry import GeoPosition, apply_homography, pixel_to_geo
from .messages import Alert, Bsm, Psm, PsmConfig, build_psm
from .perception import DEFAULT_IOU_THRESHOLD, DEFAULT_MIN_CONFIDENCE, Detection, prepare
from .pscw import evaluate
from .tracking import FrameObservation, PedestrianTrack, Tracker, TrackerConfig

log = logging.getLogger(__name__)


@dataclass
class PipelineStats:
    frames: int = 0
    detections: int = 0
    kept: int = 0
    off_plane: int = 0  # rectified anchor fell outside the calibrated patch
    psms: int = 0
    alerts: int = 0


@dataclass(frozen=True)
class FrameResult:
    frame_ts: int
    observations: tuple[FrameObservation, ...]
    tracks: tuple[PedestrianTrack, ...]
    psms: tuple[Psm, ...]


@dataclass
class Pipeline:
    calibration: Calibration
    tracker_config: TrackerConfig = field(default_factory=TrackerConfig)
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    iou_threshold: float = DEFAULT_IOU_THRESHOLD

    def __post_init__(self):
        cal = self.calibration
        self.tracker = Tracker(self.tracker_config)
        self.psm_config = PsmConfig(
            elevation_m=cal.elevation_m, positional_accuracy_m=cal.positional_accuracy_m
        )
        self.stats = PipelineStats()

    def localize(self, dets: Iterable[Detection], frame_ts: int) -> list[FrameObservation]:
        """Gate, de-duplicate and mask detections, then map anchors to the ground."""
        dets = list(dets)
        kept = prepare(dets, self.calibration.mask, self.min_confidence, self.iou_threshold)
        self.stats.detections += len(dets)
        self.stats.kept += len(kept)
        out = []
        for d in kept:
            try:
                top = apply_homography(self.calibration.homography, d.anchor)
            except PointAtInfinity:
                self.stats.off_plane += 1
                continue
            if not top.in_unit_square():
                self.stats.off_plane += 1
                continue
            out.append(FrameObservation(pixel_to_geo(self.calibration.bounds, top), frame_ts, d.confidence))
        return out

    def process(self, frame_ts: int, dets: Iterable[Detection]) -> FrameResult:
        """One camera frame. PSMs carry the capture stamp so latency can be
        measured from capture at the receiver."""
        obs = self.localize(dets, frame_ts)
        tracks = self.tracker.step(obs, frame_ts)
        psms = tuple(build_psm(t, frame_ts, self.psm_config) for t in tracks)
        self.stats.frames += 1
        self.stats.psms += len(psms)
        return FrameResult(frame_ts, tuple(obs), tuple(tracks), psms)

    def alerts(self, psms: Sequence[Psm], bsms: Sequence[Bsm], now: int) -> list[Alert]:
        out = evaluate(psms, bsms, self.calibration.anchor, now)
        self.stats.alerts += len(out)
        return out

    @property
    def anchor(self) -> GeoPosition:
        return self.calibration.anchor
