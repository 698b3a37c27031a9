"""Distance-mask regression targets and coarse labels.

A distance mask stores ``min(d, d_max) / d_max`` where ``d`` is the Euclidean
distance in input pixels to the closest object pixel: 0 on the object, 1 at
``d_max`` or further.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .annotations import AnnotationSet, rasterize_cables, rasterize_pylons

D_MAX = 128
FACTOR = 16

_NO_SITE = np.iinfo(np.int64).max


@dataclass
class DistanceMask:
    values: np.ndarray
    d_max: int = D_MAX
    factor: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"distance mask must be 2D, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


def as_values(x) -> np.ndarray:
    """Plain float array from a DistanceMask or anything array-like."""
    if isinstance(x, DistanceMask):
        return x.values
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# exact Euclidean distance transform


@numba.njit(cache=True)
def _column_pass(fg):
    h, w = fg.shape
    g = np.empty((h, w), dtype=np.int64)
    for j in range(w):
        last = -1
        for i in range(h):
            if fg[i, j]:
                last = i
            g[i, j] = i - last if last >= 0 else -1
        last = -1
        for i in range(h - 1, -1, -1):
            if fg[i, j]:
                last = i
            if last >= 0 and (g[i, j] < 0 or last - i < g[i, j]):
                g[i, j] = last - i
    return g


@numba.njit(cache=True)
def _row_envelope(g, no_site):
    # Lower envelope of parabolas (x - q)^2 + g[q]^2 per row; columns without a
    # foreground cell (g < 0) contribute no parabola.
    h, w = g.shape
    out = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w + 1, dtype=np.float64)
    f = np.empty(w, dtype=np.int64)
    for i in range(h):
        for q in range(w):
            f[q] = g[i, q] * g[i, q] if g[i, q] >= 0 else -1
        k = -1
        for q in range(w):
            if f[q] < 0:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        if k < 0:
            for x in range(w):
                out[i, x] = no_site
            continue
        k = 0
        for x in range(w):
            while z[k + 1] < x:
                k += 1
            d = x - v[k]
            out[i, x] = d * d + f[v[k]]
    return out


def edt_sq(mask) -> np.ndarray:
    """Exact squared distances (int64) to the nearest foreground cell.

    Cells of an all-background mask hold ``np.iinfo(np.int64).max``.
    """
    fg = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    if fg.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {fg.shape}")
    if fg.size == 0:
        return np.zeros(fg.shape, dtype=np.int64)
    return _row_envelope(_column_pass(fg), _NO_SITE)


def edt(mask) -> np.ndarray:
    """Euclidean distance (pixels) to the nearest foreground cell; +inf if there is none."""
    sq = edt_sq(mask)
    out = np.sqrt(sq.astype(np.float64))
    out[sq == _NO_SITE] = np.inf
    return out


# ---------------------------------------------------------------------------
# normalization and resampling


def clamp_normalize(dist, d_max: int = D_MAX) -> DistanceMask:
    if d_max < 1:
        raise ValueError(f"d_max must be >= 1, got {d_max}")
    d = np.asarray(dist, dtype=np.float64)
    return DistanceMask(np.minimum(d, d_max) / d_max, d_max=d_max)


def pad_to_multiple(values: np.ndarray, factor: int, fill: float = 1.0) -> np.ndarray:
    h, w = values.shape
    ph, pw = -h % factor, -w % factor
    if ph == 0 and pw == 0:
        return values
    return np.pad(values, ((0, ph), (0, pw)), constant_values=fill)


def minpool(dm, factor: int = FACTOR, crop: bool = False) -> DistanceMask:
    """Block minimum over ``factor x factor`` cells.

    Dimensions that are not a multiple of ``factor`` are padded right/bottom
    with 1.0; ``crop=True`` then drops the partial coarse row/column so the
    result is ``floor(H / factor) x floor(W / factor)``.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    src = dm if isinstance(dm, DistanceMask) else DistanceMask(dm)
    v = pad_to_multiple(src.values, factor, 1.0)
    h, w = v.shape
    pooled = v.reshape(h // factor, factor, w // factor, factor).min(axis=(1, 3))
    if crop:
        pooled = pooled[: src.height // factor, : src.width // factor]
    return DistanceMask(pooled, d_max=src.d_max, factor=src.factor * factor)


def binarize(dm, threshold: float, d_max: int | None = None) -> np.ndarray:
    """Foreground where the distance in pixels is strictly below ``threshold``."""
    if isinstance(dm, DistanceMask):
        d_max = dm.d_max if d_max is None else d_max
    d_max = D_MAX if d_max is None else d_max
    if not (0 < threshold <= d_max):
        raise ValueError(f"threshold must be in (0, {d_max}], got {threshold}")
    return as_values(dm) * d_max < threshold


def downsample_segmentation(mask, n: int) -> np.ndarray:
    """Coarse cell is foreground iff one of the 2x2 center pixels of its block is."""
    if n < 2 or n % 2:
        raise ValueError(f"block size must be even and >= 2, got {n}")
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    if h % n or w % n:
        raise ValueError(f"mask shape {m.shape} not divisible by {n}")
    c = n // 2
    blocks = m.reshape(h // n, n, w // n, n)
    return blocks[:, c - 1 : c + 1, :, c - 1 : c + 1].any(axis=(1, 3))


def distance_target(object_mask, d_max: int = D_MAX, factor: int = FACTOR, crop: bool = True) -> DistanceMask:
    return minpool(clamp_normalize(edt(object_mask), d_max), factor, crop=crop)


def gt_targets(
    a: AnnotationSet, d_max: int = D_MAX, factor: int = FACTOR, thickness: int = 5, crop: bool = True
) -> tuple[DistanceMask, DistanceMask]:
    """Coarse cable and pylon distance masks for one annotated image."""
    w, h = a.meta.width, a.meta.height
    cables = distance_target(rasterize_cables(a.cables, w, h, thickness), d_max, factor, crop)
    pylons = distance_target(rasterize_pylons(a.pylons, w, h), d_max, factor, crop)
    return cables, pylons
