"""16-bit PNG image I/O.

All in-memory images are (H, W, 3) float RGB in [0, 1].  On disk they are
16-bit PNGs, quantized with round(x * 65535), so a write/read roundtrip is
exact to within half a quantization step (~7.6e-6).
"""

import os

import cv2
import numpy as np

from mb2d.errors import DataError

QUANT = 65535


def write_image16(path: str, img: np.ndarray):
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    u16 = np.round(np.clip(img, 0.0, 1.0) * QUANT).astype(np.uint16)
    ok = cv2.imwrite(path, cv2.cvtColor(u16, cv2.COLOR_RGB2BGR))
    if not ok:
        raise DataError(f"failed to write image: {path}")


def read_image16(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise DataError(f"image not found: {path}")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"failed to read image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    scale = QUANT if raw.dtype == np.uint16 else 255
    return (raw.astype(np.float32) / scale).astype(np.float32)
