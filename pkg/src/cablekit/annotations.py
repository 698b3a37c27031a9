"""Annotation schema, validation and rasterization.

Cables are open polylines, pylons and exclusion areas are axis-aligned boxes.
All geometry is in full-resolution pixel coordinates with the origin at the
top-left corner; pixel ``(i, j)`` has its center at ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class AnnotationError(ValueError):
    """Base class for annotation problems."""


class ParseError(AnnotationError):
    """The document does not follow the annotation schema."""


class ValidationError(AnnotationError):
    """Geometry violates an invariant of its image."""


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width: int
    height: int
    recording_id: str = ""
    location_group: str = ""


@dataclass(frozen=True)
class Polyline:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class AnnotationSet:
    meta: ImageMeta
    cables: tuple[Polyline, ...] = ()
    pylons: tuple[BBox, ...] = ()
    exclusions: tuple[BBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cables", tuple(self.cables))
        object.__setattr__(self, "pylons", tuple(self.pylons))
        object.__setattr__(self, "exclusions", tuple(self.exclusions))

    @property
    def image_id(self) -> str:
        return self.meta.image_id


@dataclass(frozen=True)
class Dataset:
    items: tuple[AnnotationSet, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def by_id(self) -> dict[str, AnnotationSet]:
        return {a.image_id: a for a in self.items}


# ---------------------------------------------------------------------------
# validation


def validate_annotation_set(a: AnnotationSet) -> None:
    m = a.meta
    if not isinstance(m.width, int) or not isinstance(m.height, int) or m.width < 1 or m.height < 1:
        raise ValidationError(f"{m.image_id}: image dimensions must be positive integers, got {m.width}x{m.height}")
    for k, line in enumerate(a.cables):
        if len(line.points) < 2:
            raise ValidationError(f"{m.image_id}: cables[{k}] has {len(line.points)} point(s), need at least 2")
        for n, (x, y) in enumerate(line.points):
            if not (np.isfinite(x) and np.isfinite(y)) or not (0 <= x <= m.width and 0 <= y <= m.height):
                raise ValidationError(
                    f"{m.image_id}: cables[{k}] point {n} ({x}, {y}) outside [0, {m.width}] x [0, {m.height}]"
                )
    for kind in ("pylons", "exclusions"):
        for k, b in enumerate(getattr(a, kind)):
            if not all(np.isfinite(v) for v in b.as_tuple()):
                raise ValidationError(f"{m.image_id}: {kind}[{k}] has non-finite coordinates")
            if not (b.x_min < b.x_max and b.y_min < b.y_max):
                raise ValidationError(f"{m.image_id}: {kind}[{k}] {b.as_tuple()} is degenerate")
            if b.x_max <= 0 or b.y_max <= 0 or b.x_min >= m.width or b.y_min >= m.height:
                raise ValidationError(f"{m.image_id}: {kind}[{k}] {b.as_tuple()} does not intersect the image")


def validate_dataset(ds: Dataset) -> None:
    seen = set()
    for a in ds.items:
        if a.image_id in seen:
            raise ValidationError(f"duplicate image_id {a.image_id!r}")
        seen.add(a.image_id)
        validate_annotation_set(a)


# ---------------------------------------------------------------------------
# JSON document


def _box(rec, where):
    try:
        x0, y0, x1, y1 = (float(v) for v in rec)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected [x_min, y_min, x_max, y_max], got {rec!r}") from None
    return BBox(x0, y0, x1, y1)


def _polyline(rec, where):
    try:
        pts = tuple((float(p[0]), float(p[1])) for p in rec if len(p) == 2)
        if len(pts) != len(rec):
            raise ValueError
    except (TypeError, ValueError, IndexError):
        raise ParseError(f"{where}: expected a list of [x, y] points, got {rec!r}") from None
    return Polyline(pts)


def _image_record(rec, idx) -> AnnotationSet:
    where = f"images[{idx}]"
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected an object")
    try:
        image_id = rec["image_id"]
        width = rec["width"]
        height = rec["height"]
    except KeyError as e:
        raise ParseError(f"{where}: missing key {e.args[0]!r}") from None
    if not isinstance(image_id, str):
        raise ParseError(f"{where}: image_id must be a string")
    where = f"images[{idx}] ({image_id})"
    if isinstance(width, bool) or isinstance(height, bool) or not isinstance(width, int) or not isinstance(height, int):
        raise ParseError(f"{where}: width/height must be integers")
    meta = ImageMeta(
        image_id=image_id,
        width=width,
        height=height,
        recording_id=str(rec.get("recording_id", image_id)),
        location_group=str(rec.get("location_group", rec.get("recording_id", image_id))),
    )
    lists = {}
    for key in ("cables", "pylons", "exclusions"):
        val = rec.get(key, [])
        if not isinstance(val, list):
            raise ParseError(f"{where}: {key} must be a list")
        lists[key] = val
    cables = [_polyline(c, f"{where} cables[{k}]") for k, c in enumerate(lists["cables"])]
    pylons = [_box(b, f"{where} pylons[{k}]") for k, b in enumerate(lists["pylons"])]
    exclusions = [_box(b, f"{where} exclusions[{k}]") for k, b in enumerate(lists["exclusions"])]
    return AnnotationSet(meta, cables, pylons, exclusions)


def parse_annotations(text: str | bytes) -> Dataset:
    """Parse and validate an annotation document (see README for the schema)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise ParseError("top level must be an object with an 'images' list")
    ds = Dataset(tuple(_image_record(rec, k) for k, rec in enumerate(doc["images"])))
    validate_dataset(ds)
    return ds


def load_annotations(path) -> Dataset:
    with open(path, "rb") as f:
        return parse_annotations(f.read())


def dataset_to_dict(ds: Dataset) -> dict:
    images = []
    for a in ds.items:
        m = a.meta
        images.append(
            {
                "image_id": m.image_id,
                "width": m.width,
                "height": m.height,
                "recording_id": m.recording_id,
                "location_group": m.location_group,
                "cables": [[list(p) for p in c.points] for c in a.cables],
                "pylons": [list(b.as_tuple()) for b in a.pylons],
                "exclusions": [list(b.as_tuple()) for b in a.exclusions],
            }
        )
    return {"images": images}


def dump_annotations(ds: Dataset) -> str:
    return json.dumps(dataset_to_dict(ds), indent=1)


# ---------------------------------------------------------------------------
# rasterization


def _check_dims(width, height):
    if int(width) < 1 or int(height) < 1:
        raise ValueError(f"mask dimensions must be positive, got {width}x{height}")


def segment_distance_sq(px, py, ax, ay, bx, by):
    """Squared distance from points ``(px, py)`` to the segment ``a-b`` (broadcasting)."""
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return (px - ax) ** 2 + (py - ay) ** 2
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / den, 0.0, 1.0)
    qx = px - (ax + t * dx)
    qy = py - (ay + t * dy)
    return qx * qx + qy * qy


def rasterize_cables(cables: Sequence[Polyline], width: int, height: int, thickness: int = 5) -> np.ndarray:
    """Thick-line raster: pixels whose center is within ``(thickness - 1) / 2`` of a segment."""
    _check_dims(width, height)
    if thickness < 1 or thickness % 2 == 0:
        raise ValueError(f"thickness must be odd and >= 1, got {thickness}")
    out = np.zeros((height, width), dtype=bool)
    r = (thickness - 1) / 2.0
    r2 = r * r
    for line in cables:
        pts = line.as_array()
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            # only pixel centers inside the segment's r-padded bounding box can qualify
            j0 = max(int(np.floor(min(ax, bx) - r - 0.5)), 0)
            j1 = min(int(np.ceil(max(ax, bx) + r - 0.5)), width - 1)
            i0 = max(int(np.floor(min(ay, by) - r - 0.5)), 0)
            i1 = min(int(np.ceil(max(ay, by) + r - 0.5)), height - 1)
            if j0 > j1 or i0 > i1:
                continue
            cy = np.arange(i0, i1 + 1, dtype=np.float64)[:, None] + 0.5
            cx = np.arange(j0, j1 + 1, dtype=np.float64)[None, :] + 0.5
            hit = segment_distance_sq(cx, cy, ax, ay, bx, by) <= r2
            out[i0 : i1 + 1, j0 : j1 + 1] |= hit
    return out


def rasterize_boxes(boxes: Iterable[BBox], width: int, height: int) -> np.ndarray:
    """Pixels whose center lies in any box, half-open on the max side."""
    _check_dims(width, height)
    out = np.zeros((height, width), dtype=bool)
    for b in boxes:
        # x_min <= j + 0.5 < x_max  <=>  ceil(x_min - 0.5) <= j < ceil(x_max - 0.5)
        j0 = max(int(np.ceil(b.x_min - 0.5)), 0)
        j1 = min(int(np.ceil(b.x_max - 0.5)), width)
        i0 = max(int(np.ceil(b.y_min - 0.5)), 0)
        i1 = min(int(np.ceil(b.y_max - 0.5)), height)
        if j0 < j1 and i0 < i1:
            out[i0:i1, j0:j1] = True
    return out


def rasterize_pylons(pylons: Iterable[BBox], width: int, height: int) -> np.ndarray:
    return rasterize_boxes(pylons, width, height)


def rasterize_exclusions(exclusions: Iterable[BBox], width: int, height: int) -> np.ndarray:
    return rasterize_boxes(exclusions, width, height)


def hflip_annotations(a: AnnotationSet) -> AnnotationSet:
    w = a.meta.width

    def flip_box(b):
        return BBox(w - b.x_max, b.y_min, w - b.x_min, b.y_max)

    return AnnotationSet(
        a.meta,
        [Polyline([(w - x, y) for x, y in c.points]) for c in a.cables],
        [flip_box(b) for b in a.pylons],
        [flip_box(b) for b in a.exclusions],
    )
