"""File formats: mask PNGs with JSON sidecars, raw flow files, atomic writes."""

from __future__ import annotations

import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .pipeline import FlowField
from .targets import DistanceMask

U16 = 65535


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode())


def read_json(path):
    with open(path, "rb") as f:
        return json.load(f)


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = _io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def write_distance_mask(path, dm: DistanceMask) -> Path:
    """16-bit PNG with value ``round(v * 65535)`` plus ``{d_max, factor}`` sidecar."""
    q = np.rint(np.clip(dm.values, 0.0, 1.0) * U16).astype(np.uint16)
    atomic_write_bytes(path, _png_bytes(q))
    write_json(sidecar_path(path), {"d_max": int(dm.d_max), "factor": int(dm.factor)})
    return Path(path)


def read_distance_mask(path) -> DistanceMask:
    path = Path(path)
    if path.suffix == ".npy":
        meta = read_json(sidecar_path(path)) if sidecar_path(path).exists() else {}
        return DistanceMask(np.load(path), meta.get("d_max", 128), meta.get("factor", 1))
    with Image.open(path) as im:
        raw = np.asarray(im)
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image, got shape {raw.shape}")
    meta = read_json(sidecar_path(path))
    d_max = int(meta["d_max"])
    return DistanceMask(decode_u16(raw, d_max), d_max, int(meta["factor"]))


def decode_u16(raw: np.ndarray, d_max: int) -> np.ndarray:
    """Invert ``round(v * 65535)``, restoring whole-pixel distances ``k / d_max`` exactly.

    Without the snap an integer distance t >= 65 decodes slightly below t and
    flips a strict ``< t`` threshold.
    """
    raw = raw.astype(np.int64)
    k = np.rint(raw * d_max / U16)
    exact = np.rint(k / d_max * U16) == raw
    return np.where(exact, k / d_max, raw / U16)


def write_binary_mask(path, mask) -> Path:
    return atomic_write_bytes(path, _png_bytes(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)))


def read_binary_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def read_image_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def write_flow(path, flow: FlowField) -> Path:
    """``<ii`` width, height header then float32 dx and dy planes, little-endian, row-major."""
    h, w = flow.shape
    body = struct.pack("<ii", w, h) + flow.dx.astype("<f4").tobytes() + flow.dy.astype("<f4").tobytes()
    return atomic_write_bytes(path, body)


def read_flow(path) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated flow header")
    w, h = struct.unpack_from("<ii", data, 0)
    n = w * h
    if w < 1 or h < 1 or len(data) != 8 + 8 * n:
        raise ValueError(f"{path}: size {len(data)} does not match a {w}x{h} two-plane flow")
    planes = np.frombuffer(data, dtype="<f4", offset=8).astype(np.float64)
    return FlowField(planes[:n].reshape(h, w), planes[n:].reshape(h, w))
