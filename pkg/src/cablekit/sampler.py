"""Object-centred training patch sampling with positional jitter."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .annotations import AnnotationSet, rasterize_cables, rasterize_pylons
from .targets import DistanceMask, edt_sq

CLASSES = ("cables", "pylons")


@dataclass(frozen=True)
class SampleSpec:
    patch_size: int = 1024
    max_center_distance: float = 128.0
    target_classes: tuple = ("cables",)
    seed: int = 0
    count: int = 1
    thickness: int = 5

    def __post_init__(self):
        object.__setattr__(self, "target_classes", tuple(self.target_classes))
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.max_center_distance < 0:
            raise ValueError(f"max_center_distance must be >= 0, got {self.max_center_distance}")
        if not self.target_classes or any(c not in CLASSES for c in self.target_classes):
            raise ValueError(f"target_classes must be a nonempty subset of {CLASSES}, got {self.target_classes}")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")


@dataclass(frozen=True)
class Patch:
    x0: int
    y0: int
    size: int

    @property
    def center(self):
        return self.x0 + self.size // 2, self.y0 + self.size // 2


def object_raster(a: AnnotationSet, classes, thickness: int = 5) -> np.ndarray:
    w, h = a.meta.width, a.meta.height
    out = np.zeros((h, w), dtype=bool)
    if "cables" in classes:
        out |= rasterize_cables(a.cables, w, h, thickness)
    if "pylons" in classes:
        out |= rasterize_pylons(a.pylons, w, h)
    return out


def candidate_region(a: AnnotationSet, spec: SampleSpec) -> np.ndarray:
    """Pixels within ``max_center_distance`` of a selected-class object."""
    objects = object_raster(a, spec.target_classes, spec.thickness)
    if not objects.any():
        return objects
    # compare squared integer distances to avoid sqrt rounding at the radius
    return edt_sq(objects) <= spec.max_center_distance**2


def _rng(seed: int, image_id: str) -> np.random.Generator:
    # counter-based generator keyed by (seed, image) so images can be sampled in any order
    key = int.from_bytes(hashlib.blake2b(image_id.encode(), digest_size=8).digest(), "little")
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), key]))


def sample_patches(a: AnnotationSet, spec: SampleSpec) -> list[Patch]:
    w, h, s = a.meta.width, a.meta.height, spec.patch_size
    if w < s or h < s:
        raise ValueError(f"{a.image_id}: image {w}x{h} smaller than patch {s}")
    region = candidate_region(a, spec)
    half = s // 2
    # centers with x0 = cx - half in [0, W - s]
    valid = np.zeros_like(region)
    valid[half : h - s + half + 1, half : w - s + half + 1] = True
    flat = np.flatnonzero(region & valid)
    if flat.size == 0 or spec.count == 0:
        return []
    picks = flat[_rng(spec.seed, a.image_id).integers(0, flat.size, size=spec.count)]
    cy, cx = np.divmod(picks, w)
    return [Patch(int(x - half), int(y - half), s) for x, y in zip(cx, cy)]


def crop_mask(grid, p: Patch, factor: int = 1):
    """Sub-grid covered by a patch; coarse grids need factor-aligned patches."""
    if p.x0 % factor or p.y0 % factor or p.size % factor:
        raise ValueError(f"patch {p} not aligned to factor {factor}")
    i0, j0, n = p.y0 // factor, p.x0 // factor, p.size // factor
    if isinstance(grid, DistanceMask):
        return DistanceMask(grid.values[i0 : i0 + n, j0 : j0 + n].copy(), grid.d_max, grid.factor)
    return np.asarray(grid)[i0 : i0 + n, j0 : j0 + n].copy()
