"""Simulator of the onboard inference pipeline.

Per frame: pad and split into non-overlapping patches, predict coarse distance
masks per patch in batches, stitch them into a full-frame coarse map, fuse it
with the flow-warped fused map of the previous frame, threshold and upscale.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .sampler import Patch
from .targets import D_MAX, DistanceMask, as_values, binarize, pad_to_multiple

CLASSES = ("cables", "pylons")


@dataclass(frozen=True)
class PipelineConfig:
    patch: int = 1024
    batch: int = 4
    out_factor: int = 32
    fuse_weight: float = 0.5
    threshold: float = 32.0
    d_max: int = D_MAX
    flow_block: int = 8
    flow_radius: int = 4

    def __post_init__(self):
        if self.patch < 1 or self.out_factor < 1 or self.patch % self.out_factor:
            raise ValueError(f"patch {self.patch} must be a positive multiple of out_factor {self.out_factor}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not 0.0 <= self.fuse_weight <= 1.0:
            raise ValueError(f"fuse_weight must be in [0, 1], got {self.fuse_weight}")
        if not 0 < self.threshold <= self.d_max:
            raise ValueError(f"threshold must be in (0, {self.d_max}], got {self.threshold}")
        if self.flow_block < 1 or self.flow_radius < 0:
            raise ValueError("flow_block must be >= 1 and flow_radius >= 0")

    @property
    def coarse_patch(self) -> int:
        return self.patch // self.out_factor


@dataclass(frozen=True)
class Layout:
    width: int
    height: int
    patch: int
    cols: int
    rows: int
    pad_right: int
    pad_bottom: int
    patches: tuple

    @property
    def padded_shape(self):
        return self.rows * self.patch, self.cols * self.patch


@dataclass
class FlowField:
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        if self.dx.shape != self.dy.shape:
            raise ValueError(f"flow planes differ in shape: {self.dx.shape} vs {self.dy.shape}")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise ValueError("flow contains non-finite values")

    @property
    def shape(self):
        return self.dx.shape

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class PipelineState:
    prev_fused: dict = field(default_factory=dict)
    frame_index: int = 0


def pad_split(w: int, h: int, patch: int) -> Layout:
    if w < 1 or h < 1:
        raise ValueError(f"frame dimensions must be positive, got {w}x{h}")
    cols, rows = -(-w // patch), -(-h // patch)
    patches = tuple(Patch(c * patch, r * patch, patch) for r in range(rows) for c in range(cols))
    return Layout(w, h, patch, cols, rows, cols * patch - w, rows * patch - h, patches)


def pad_frame(image: np.ndarray, layout: Layout) -> np.ndarray:
    """Edge-replicate an image to the padded layout size."""
    pad = ((0, layout.pad_bottom), (0, layout.pad_right)) + ((0, 0),) * (image.ndim - 2)
    return np.pad(image, pad, mode="edge")


def stitch(patch_outputs: Sequence, layout: Layout, crop_to=None, out_factor: int = 32) -> DistanceMask:
    """Assemble row-major coarse patch outputs and crop to ``floor(frame / out_factor)``."""
    if len(patch_outputs) != len(layout.patches):
        raise ValueError(f"expected {len(layout.patches)} patch outputs, got {len(patch_outputs)}")
    grids = [as_values(p) for p in patch_outputs]
    rows = [np.concatenate(grids[r * layout.cols : (r + 1) * layout.cols], axis=1) for r in range(layout.rows)]
    full = np.concatenate(rows, axis=0)
    w, h = crop_to if crop_to is not None else (layout.width, layout.height)
    d_max = patch_outputs[0].d_max if isinstance(patch_outputs[0], DistanceMask) else D_MAX
    return DistanceMask(full[: h // out_factor, : w // out_factor], d_max=d_max, factor=out_factor)


def split_coarse(coarse, layout: Layout, out_factor: int, fill: float = 1.0) -> list:
    """Inverse of ``stitch``: cut a full-frame coarse map into per-patch grids."""
    v = as_values(coarse)
    n = layout.patch // out_factor
    canvas = np.full((layout.rows * n, layout.cols * n), fill)
    canvas[: v.shape[0], : v.shape[1]] = v[: layout.rows * n, : layout.cols * n]
    return [canvas[r * n : (r + 1) * n, c * n : (c + 1) * n].copy() for r in range(layout.rows) for c in range(layout.cols)]


# ---------------------------------------------------------------------------
# motion


def _block_match(prev, cur, block, radius):
    h, w = cur.shape
    nby, nbx = max(h // block, 1), max(w // block, 1)
    shifts = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], d),
    )
    out = np.zeros((nby, nbx, 2))
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = by * block, bx * block
            y1, x1 = min(y0 + block, h), min(x0 + block, w)
            ref = cur[y0:y1, x0:x1]
            best, best_d = np.inf, (0, 0)
            for dy, dx in shifts:
                sy0, sx0 = y0 - dy, x0 - dx
                if sy0 < 0 or sx0 < 0 or sy0 + (y1 - y0) > h or sx0 + (x1 - x0) > w:
                    continue
                sad = np.abs(ref - prev[sy0 : sy0 + (y1 - y0), sx0 : sx0 + (x1 - x0)]).sum()
                # shifts are visited by increasing length, so ties keep the shortest
                if sad < best:
                    best, best_d = sad, (dy, dx)
            out[by, bx] = best_d
    return out


def estimate_flow(prev_frame, cur_frame, cfg: PipelineConfig, out_shape=None) -> FlowField:
    """Block-matching stand-in for a dense optical-flow estimator.

    Each ``flow_block`` block of ``cur_frame`` is matched against ``prev_frame``
    over integer shifts within ``flow_radius`` by sum of absolute differences.
    Block displacements are converted to cells of ``out_shape`` and bilinearly
    resampled to that grid (defaults to the frame grid). The convention matches
    :func:`warp`: content at ``p - flow(p)`` in the previous frame is at ``p`` now.
    """
    prev = np.asarray(prev_frame, dtype=np.float64)
    cur = np.asarray(cur_frame, dtype=np.float64)
    if prev.shape != cur.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {cur.shape}")
    if prev.ndim == 3:
        prev, cur = prev.mean(axis=2), cur.mean(axis=2)
    h, w = cur.shape
    out_shape = (h, w) if out_shape is None else tuple(out_shape)
    blocks = _block_match(prev, cur, cfg.flow_block, cfg.flow_radius)
    sy, sx = out_shape[0] / h, out_shape[1] / w
    # block centres and output cell centres in frame pixel coordinates
    oy = (np.arange(out_shape[0]) + 0.5) / sy
    ox = (np.arange(out_shape[1]) + 0.5) / sx
    by = oy / cfg.flow_block - 0.5
    bx = ox / cfg.flow_block - 0.5
    gy, gx = np.meshgrid(by, bx, indexing="ij")
    dy = ndimage.map_coordinates(blocks[..., 0], [gy, gx], order=1, mode="nearest") * sy
    dx = ndimage.map_coordinates(blocks[..., 1], [gy, gx], order=1, mode="nearest") * sx
    return FlowField(dx, dy)


def warp(prev, flow: FlowField, fill: float = 1.0) -> DistanceMask:
    """Backward bilinear warp ``out(p) = prev(p - flow(p))``; off-grid taps read ``fill``."""
    src = prev if isinstance(prev, DistanceMask) else DistanceMask(prev)
    v = src.values
    if flow.shape != v.shape:
        raise ValueError(f"flow shape {flow.shape} != mask shape {v.shape}")
    h, w = v.shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    y = ii - flow.dy
    x = jj - flow.dx
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    fy = y - y0
    fx = x - x0
    padded = np.pad(v, 1, constant_values=fill)

    def tap(yy, xx):
        # anything off the grid lands on the fill border
        return padded[np.clip(yy, -1, h) + 1, np.clip(xx, -1, w) + 1]

    out = (
        tap(y0, x0) * ((1 - fy) * (1 - fx))
        + tap(y0, x0 + 1) * ((1 - fy) * fx)
        + tap(y0 + 1, x0) * (fy * (1 - fx))
        + tap(y0 + 1, x0 + 1) * (fy * fx)
    )
    return DistanceMask(out, src.d_max, src.factor)


def temporal_fuse(warped_prev, current, fuse_weight: float = 0.5) -> DistanceMask:
    cur = current if isinstance(current, DistanceMask) else DistanceMask(current)
    if warped_prev is None:
        return DistanceMask(cur.values.copy(), cur.d_max, cur.factor)
    pv = as_values(warped_prev)
    if pv.shape != cur.shape:
        raise ValueError(f"shapes differ: {pv.shape} vs {cur.shape}")
    if fuse_weight == 0.0:
        out = cur.values.copy()
    else:
        out = fuse_weight * pv + (1.0 - fuse_weight) * cur.values
    return DistanceMask(out, cur.d_max, cur.factor)


def threshold_upscale(fused, threshold: float, target_w: int, target_h: int, out_factor: int = 32, d_max=None) -> np.ndarray:
    """Binarize then paint each coarse cell over its ``out_factor`` block.

    Remainder pixels past the last full block take the nearest edge cell.
    """
    fg = binarize(fused, threshold, d_max)
    ch, cw = fg.shape
    if target_h < ch or target_w < cw:
        raise ValueError(f"target {target_w}x{target_h} smaller than coarse {cw}x{ch}")
    rows = np.minimum(np.arange(target_h) // out_factor, ch - 1)
    cols = np.minimum(np.arange(target_w) // out_factor, cw - 1)
    return fg[rows[:, None], cols[None, :]]


# ---------------------------------------------------------------------------
# stream driver


@dataclass
class Frame:
    """One frame of a stream.

    ``image`` is the (downsampled) camera frame used for the built-in flow
    estimator; ``data`` carries whatever the predictor needs (for example the
    ground-truth coarse masks for the degraded oracle).
    """

    index: int
    width: int
    height: int
    image: Optional[np.ndarray] = None
    data: dict = field(default_factory=dict)


# predictor(frame, patches) -> one {class: coarse grid} dict per patch
Predictor = Callable[[Frame, Sequence[Patch]], Sequence[dict]]


@dataclass
class FrameResult:
    index: int
    fused: dict
    masks: dict
    stitched: dict
    timings: dict


def predict_frame(frame: Frame, predictor: Predictor, layout: Layout, cfg: PipelineConfig) -> dict:
    n = cfg.coarse_patch
    outputs = {c: [] for c in CLASSES}
    for b0 in range(0, len(layout.patches), cfg.batch):
        batch = layout.patches[b0 : b0 + cfg.batch]
        result = list(predictor(frame, batch))
        if len(result) != len(batch):
            raise ValueError(f"frame {frame.index}: predictor returned {len(result)} outputs for {len(batch)} patches")
        for k, (p, out) in enumerate(zip(batch, result)):
            for c in CLASSES:
                grid = as_values(out[c])
                if grid.shape != (n, n):
                    raise ValueError(
                        f"frame {frame.index}, patch {b0 + k} at ({p.x0}, {p.y0}): {c} output shape {grid.shape}, expected {(n, n)}"
                    )
                outputs[c].append(grid)
    return {
        c: stitch([DistanceMask(g, cfg.d_max) for g in outputs[c]], layout, (frame.width, frame.height), cfg.out_factor)
        for c in CLASSES
    }


def run_stream(frames, predictor: Predictor, cfg: PipelineConfig = PipelineConfig(), flows="builtin", state=None):
    """Run the pipeline over an ordered stream, yielding one FrameResult per frame.

    ``flows`` is ``"builtin"`` (block matching on ``Frame.image``; zero flow when
    images are missing), ``"zero"``, or a sequence with one FlowField (or None
    for zero flow) per frame.
    """
    state = PipelineState() if state is None else state
    prev_image = None
    size = None
    for t, frame in enumerate(frames):
        if size is None:
            size = (frame.width, frame.height)
        elif (frame.width, frame.height) != size:
            raise ValueError(f"frame {frame.index}: size {(frame.width, frame.height)} differs from stream size {size}")
        t0 = time.perf_counter()
        layout = pad_split(frame.width, frame.height, cfg.patch)
        stitched = predict_frame(frame, predictor, layout, cfg)
        t1 = time.perf_counter()
        coarse_shape = stitched[CLASSES[0]].shape

        flow = None
        if state.prev_fused:
            if isinstance(flows, str):
                if flows == "builtin" and prev_image is not None and frame.image is not None:
                    flow = estimate_flow(prev_image, frame.image, cfg, coarse_shape)
                elif flows not in ("builtin", "zero"):
                    raise ValueError(f"unknown flow source {flows!r}")
            else:
                flow = flows[t]
            if flow is None:
                flow = FlowField.zeros(coarse_shape)
        t2 = time.perf_counter()

        fused, masks = {}, {}
        for c in CLASSES:
            prev = state.prev_fused.get(c)
            warped = warp(prev, flow) if prev is not None else None
            fused[c] = temporal_fuse(warped, stitched[c], cfg.fuse_weight)
            masks[c] = threshold_upscale(fused[c], cfg.threshold, frame.width, frame.height, cfg.out_factor, cfg.d_max)
        t3 = time.perf_counter()

        state.prev_fused = fused
        state.frame_index += 1
        prev_image = frame.image
        yield FrameResult(
            frame.index,
            fused,
            masks,
            stitched,
            {"predict_s": t1 - t0, "flow_s": t2 - t1, "fuse_s": t3 - t2},
        )


# ---------------------------------------------------------------------------
# synthetic predictors


def _seeded_rng(seed: int, *words: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), hash_words(*words)]))


def hash_words(*words) -> int:
    text = "|".join(str(w) for w in words)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def degraded_oracle(gt, noise_sigma: float = 0.0, dropout: float = 0.0, seed: int = 0, key="") -> DistanceMask:
    """Ground truth with clamped Gaussian noise and randomly erased object cells."""
    src = gt if isinstance(gt, DistanceMask) else DistanceMask(gt)
    if noise_sigma < 0 or not 0.0 <= dropout <= 1.0:
        raise ValueError("noise_sigma must be >= 0 and dropout in [0, 1]")
    v = src.values
    if noise_sigma == 0.0 and dropout == 0.0:
        return DistanceMask(v.copy(), src.d_max, src.factor)
    rng = _seeded_rng(seed, key)
    noise = rng.standard_normal(v.shape)
    erase = rng.random(v.shape) < dropout
    out = np.clip(v + noise_sigma * noise, 0.0, 1.0)
    out[(v == 0.0) & erase] = 1.0
    return DistanceMask(out, src.d_max, src.factor)


def oracle_predictor(noise_sigma: float = 0.0, dropout: float = 0.0, seed: int = 0, cfg: PipelineConfig = PipelineConfig()) -> Predictor:
    """Predictor that degrades the full-frame coarse masks in ``frame.data`` and crops per patch.

    ``frame.data[class]`` holds the frame's coarse ground truth; cells beyond it
    (frame padding) read 1.0.
    """
    cache = {}

    def predict(frame: Frame, patches):
        key = frame.index
        if key not in cache:
            cache.clear()
            degraded = {}
            for c in CLASSES:
                gt = frame.data[c]
                degraded[c] = pad_to_multiple(
                    degraded_oracle(gt, noise_sigma, dropout, seed, f"{frame.index}:{c}").values, cfg.coarse_patch, 1.0
                )
            cache[key] = degraded
        grids = cache[key]
        n, f = cfg.coarse_patch, cfg.out_factor
        out = []
        for p in patches:
            i0, j0 = p.y0 // f, p.x0 // f
            item = {}
            for c in CLASSES:
                g = grids[c]
                tile = np.ones((n, n))
                part = g[i0 : i0 + n, j0 : j0 + n]
                tile[: part.shape[0], : part.shape[1]] = part
                item[c] = tile
            out.append(item)
        return out

    return predict


def constant_predictor(value: float, cfg: PipelineConfig = PipelineConfig()) -> Predictor:
    n = cfg.coarse_patch

    def predict(frame, patches):
        return [{c: np.full((n, n), value) for c in CLASSES} for _ in patches]

    return predict
