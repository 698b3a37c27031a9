"""Seeded synthetic scenes: smooth cable polylines, pylons at cable ends, distractor boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import AnnotationSet, BBox, Dataset, ImageMeta, Polyline, validate_dataset


@dataclass(frozen=True)
class SynthOptions:
    n_images: int = 10
    width: int = 512
    height: int = 384
    images_per_recording: int = 2
    n_locations: int = 4
    max_cables: int = 3
    step: float = 24.0
    max_turn: float = 0.12
    exclusion_prob: float = 0.3

    def __post_init__(self):
        if self.n_images < 0 or self.width < 8 or self.height < 8:
            raise ValueError("n_images must be >= 0 and images at least 8x8")
        if self.images_per_recording < 1 or self.n_locations < 1 or self.max_cables < 1:
            raise ValueError("images_per_recording, n_locations and max_cables must be >= 1")


def _cable(rng, w, h, step, max_turn):
    # start on the left or top border and walk with bounded heading change
    if rng.random() < 0.5:
        p = np.array([0.0, rng.uniform(0.1, 0.9) * h])
        heading = rng.uniform(-0.4, 0.4)
    else:
        p = np.array([rng.uniform(0.1, 0.9) * w, 0.0])
        heading = np.pi / 2 + rng.uniform(-0.4, 0.4)
    turn = rng.uniform(-max_turn, max_turn)
    pts = [tuple(p)]
    n_steps = int(rng.integers(4, 4 + 2 * (w + h) / step))
    for _ in range(n_steps):
        turn = float(np.clip(turn + rng.normal(0.0, max_turn / 3), -max_turn, max_turn))
        heading += turn
        q = p + step * np.array([np.cos(heading), np.sin(heading)])
        if not (0 <= q[0] <= w and 0 <= q[1] <= h):
            break
        pts.append((float(q[0]), float(q[1])))
        p = q
    if len(pts) < 2:
        # first step left the frame; fall back to a short inward segment
        q = np.clip(p + step * np.array([np.cos(heading), abs(np.sin(heading))]), 0, [w, h])
        pts.append((float(q[0]), float(q[1])))
    return Polyline(pts)


def _box_at(rng, x, y, w, h, bw, bh):
    x0 = float(np.clip(x - bw / 2, 0, w - bw))
    y0 = float(np.clip(y - bh * 0.8, 0, h - bh))
    return BBox(x0, y0, x0 + bw, y0 + bh)


def synth_image(rng: np.random.Generator, meta: ImageMeta, opts: SynthOptions) -> AnnotationSet:
    w, h = meta.width, meta.height
    cables = [_cable(rng, w, h, opts.step, opts.max_turn) for _ in range(int(rng.integers(1, opts.max_cables + 1)))]
    pylons = []
    for c in cables:
        for end in (c.points[0], c.points[-1]):
            if rng.random() < 0.5:
                bw, bh = rng.uniform(6, 20), rng.uniform(20, 60)
                pylons.append(_box_at(rng, end[0], end[1], w, h, min(bw, w / 2), min(bh, h / 2)))
    exclusions = []
    if rng.random() < opts.exclusion_prob:
        bw, bh = rng.uniform(8, 24), rng.uniform(30, 80)
        exclusions.append(_box_at(rng, rng.uniform(0, w), rng.uniform(0, h), w, h, min(bw, w / 2), min(bh, h / 2)))
    return AnnotationSet(meta, cables, pylons, exclusions)


def synthesize(opts: SynthOptions = SynthOptions(), seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    items = []
    for k in range(opts.n_images):
        rec = k // opts.images_per_recording
        meta = ImageMeta(
            image_id=f"img{k:04d}",
            width=opts.width,
            height=opts.height,
            recording_id=f"rec{rec:03d}",
            location_group=f"loc{rec % opts.n_locations:02d}",
        )
        items.append(synth_image(rng, meta, opts))
    ds = Dataset(items)
    validate_dataset(ds)
    return ds
