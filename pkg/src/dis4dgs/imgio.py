"""Frame export/import: 8-bit PNG (fixed gamma 2.2), .flo flow, PFM depth."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

GAMMA = 2.2


def encode_u8(color: np.ndarray) -> np.ndarray:
    """Linear [0,1] -> 8-bit with gamma 2.2; shared by PNG and wire frames."""
    c = np.clip(np.asarray(color, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * c ** (1.0 / GAMMA)).astype(np.uint8)


def decode_u8(img_u8: np.ndarray) -> np.ndarray:
    return (np.asarray(img_u8, dtype=np.float64) / 255.0) ** GAMMA


def save_png(color: np.ndarray, path) -> None:
    Image.fromarray(encode_u8(color), mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    """PNG -> linear float image in [0,1]."""
    img = np.asarray(Image.open(path).convert("RGB"))
    return decode_u8(img)


def save_flo(flow: np.ndarray, path) -> None:
    """Middlebury .flo: 'PIEH' magic, int32 width/height, float32 uv pairs."""
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PIEH")
        f.write(struct.pack("<ii", w, h))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def load_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != b"PIEH":
            raise ValueError(f"{path}: bad .flo magic {magic!r}")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(w * h * 2 * 4), dtype="<f4")
    return data.reshape(h, w, 2).copy()


def save_pfm(depth: np.ndarray, path) -> None:
    """Grayscale PFM, little-endian (negative scale), bottom-to-top rows."""
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].copy()
