"""Versioned JSON calibration files.

Layout (version 1)::

    {
      "version": 1,
      "image": {"width": 1920, "height": 1080},
      "correspondences": [
        {"image": [px, py], "top": [u, v]},      # four entries
        ...
      ],
      "bounds": {"w1": [lat, lon], "w2": [...], "w3": [...], "w4": [...]},
      "mask": "road.pgm",                        # optional; relative to this file
      "elevation_m": 201.0,
      "positional_accuracy_m": 0.54,
      "anchor": [lat, lon]
    }

``image`` points are relative camera-image coordinates, ``top`` points are
relative coordinates in the rectified top view whose corners are the
``bounds`` corners (top-left, top-right, bottom-right, bottom-left).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, DegenerateCorrespondence
from .geometry import GeoBounds, GeoPosition, Homography, PixelPoint, homography_from_correspondences
from .perception import RoadMask, load_mask

CALIBRATION_VERSION = 1


def _get(doc: dict, key: str, where: str = "") -> Any:
    name = f"{where}.{key}" if where else key
    if not isinstance(doc, dict) or key not in doc:
        raise ConfigError(f"missing field '{name}'")
    return doc[key]


def _pair(value: Any, name: str) -> tuple[float, float]:
    try:
        a, b = value
        return float(a), float(b)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}' must be a pair of numbers, got {value!r}") from None


def _number(value: Any, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}' must be a number, got {value!r}") from None


def _geo(value: Any, name: str) -> GeoPosition:
    lat, lon = _pair(value, name)
    try:
        return GeoPosition(lat, lon)
    except ValueError as exc:
        raise ConfigError(f"field '{name}': {exc}") from None


@dataclass
class Calibration:
    image_width: int
    image_height: int
    image_points: list[PixelPoint]
    top_points: list[PixelPoint]
    bounds: GeoBounds
    anchor: GeoPosition
    mask_path: Optional[Path] = None
    elevation_m: float = 201.0
    positional_accuracy_m: float = 0.54
    homography: Homography = field(init=False, repr=False)
    mask: Optional[RoadMask] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("field 'image' must have positive width and height")
        if len(self.image_points) != 4 or len(self.top_points) != 4:
            raise ConfigError("field 'correspondences' must hold exactly four entries")
        try:
            self.homography = homography_from_correspondences(self.image_points, self.top_points)
        except DegenerateCorrespondence as exc:
            raise ConfigError(f"field 'correspondences': {exc}") from None
        if self.mask_path is not None:
            if not self.mask_path.is_file():
                raise ConfigError(f"field 'mask': file not found: {self.mask_path}")
            try:
                self.mask = load_mask(self.mask_path)
            except (ValueError, OSError) as exc:
                raise ConfigError(f"field 'mask': cannot read {self.mask_path}: {exc}") from None

    def to_dict(self, base: Path | None = None) -> dict:
        mask = None
        if self.mask_path is not None:
            mask = str(self.mask_path)
            if base is not None:
                try:
                    mask = str(self.mask_path.resolve().relative_to(base.resolve()))
                except ValueError:
                    pass
        b = self.bounds
        return {
            "version": CALIBRATION_VERSION,
            "image": {"width": self.image_width, "height": self.image_height},
            "correspondences": [
                {"image": [s.px, s.py], "top": [d.px, d.py]}
                for s, d in zip(self.image_points, self.top_points)
            ],
            "bounds": {k: [getattr(b, k).lat, getattr(b, k).lon] for k in ("w1", "w2", "w3", "w4")},
            "mask": mask,
            "elevation_m": self.elevation_m,
            "positional_accuracy_m": self.positional_accuracy_m,
            "anchor": [self.anchor.lat, self.anchor.lon],
        }


def calibration_from_dict(doc: dict, base: Path | None = None) -> Calibration:
    version = _get(doc, "version")
    if version != CALIBRATION_VERSION:
        raise ConfigError(f"field 'version': unsupported calibration version {version!r}")
    image = _get(doc, "image")
    width = int(_number(_get(image, "width", "image"), "image.width"))
    height = int(_number(_get(image, "height", "image"), "image.height"))

    corr = _get(doc, "correspondences")
    if not isinstance(corr, list):
        raise ConfigError("field 'correspondences' must be a list")
    src, dst = [], []
    for i, c in enumerate(corr):
        where = f"correspondences[{i}]"
        src.append(PixelPoint(*_pair(_get(c, "image", where), f"{where}.image")))
        dst.append(PixelPoint(*_pair(_get(c, "top", where), f"{where}.top")))

    raw = _get(doc, "bounds")
    corners = [_geo(_get(raw, k, "bounds"), f"bounds.{k}") for k in ("w1", "w2", "w3", "w4")]
    try:
        bounds = GeoBounds(*corners)
    except ValueError as exc:
        raise ConfigError(f"field 'bounds': {exc}") from None

    mask = doc.get("mask")
    mask_path = None
    if mask is not None:
        mask_path = Path(mask)
        if base is not None and not mask_path.is_absolute():
            mask_path = base / mask_path

    return Calibration(
        image_width=width,
        image_height=height,
        image_points=src,
        top_points=dst,
        bounds=bounds,
        anchor=_geo(_get(doc, "anchor"), "anchor"),
        mask_path=mask_path,
        elevation_m=_number(doc.get("elevation_m", 201.0), "elevation_m"),
        positional_accuracy_m=_number(doc.get("positional_accuracy_m", 0.54), "positional_accuracy_m"),
    )


def load_calibration(path: str | Path) -> Calibration:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"calibration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return calibration_from_dict(doc, base=path.parent)


def save_calibration(cal: Calibration, path: str | Path) -> None:
    path = Path(path)
    path.write_text(json.dumps(cal.to_dict(base=path.parent), indent=2) + "\n")
