"""Shared test utilities: batch encode/decode between pixel stacks and
coefficient activations, and reference JPEG decoding via Pillow."""

import io

import numpy as np
from PIL import Image

from jdrn import CoefficientTensor, QuantTable
from jdrn.jpeg_transform import (
    PlaneGeometry,
    build_transform_pair,
    decode_blocks,
    encode_plane,
)
from jdrn.tensor_core import DenseTensor


def encode_batch(pixels, quant: QuantTable) -> CoefficientTensor:
    """(batch, channels, h, w) float pixels -> float64 activations, no rounding."""
    pixels = np.asarray(pixels, dtype=np.float64)
    batch, channels, h, w = pixels.shape
    pair = build_transform_pair(PlaneGeometry(h, w), quant)
    out = np.empty((batch, channels, h // 8, w // 8, 64))
    for b in range(batch):
        for c in range(channels):
            out[b, c] = encode_plane(pixels[b, c], pair, round=False)
    return CoefficientTensor(DenseTensor(out), quant)


def decode_batch(ct: CoefficientTensor) -> np.ndarray:
    """CoefficientTensor -> (batch, channels, h, w) float64 pixels."""
    data = ct.data.data
    batch, channels, by, bx, _ = data.shape
    blocks = decode_blocks(data.reshape(-1, 64), ct.quant)
    blocks = blocks.reshape(batch, channels, by, bx, 8, 8)
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, by * 8, bx * 8)


def reference_planes(data: bytes) -> list[np.ndarray]:
    """Reference decoder output as float planes, in the file's native
    color space (L for grayscale, raw YCbCr for color)."""
    im = Image.open(io.BytesIO(data))
    if im.mode == "L":
        return [np.asarray(im).astype(np.float64)]
    im.draft("YCbCr", im.size)
    arr = np.asarray(im).astype(np.float64)
    return [arr[:, :, i] for i in range(arr.shape[2])]


def component_pixels(comp) -> np.ndarray:
    """Reconstruct one parsed component: dequantize, inverse transform,
    undo the level shift, round and clamp to the 8-bit pixel range."""
    blocks = decode_blocks(comp.coefficients.astype(np.float64), comp.quant)
    by, bx = comp.coefficients.shape[:2]
    plane = blocks.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)
    plane = np.clip(np.round(plane + 128.0), 0, 255)
    return plane[:comp.height, :comp.width]
