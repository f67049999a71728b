"""The JPEG coding pipeline as explicit linear maps.

JPEG's lossy core (split into 8x8 blocks, 2-D DCT, zigzag scan, quantizer
scaling) is a composition of linear maps. This module builds each factor
as a dense tensor and composes them into a forward map J (pixels to
quantized coefficients) and an inverse map J~ (coefficients to pixels).
Encoding a plane is then one contraction, and every network operation
downstream can be conjugated by these maps.

Layout convention: block axes are ordered (block-row, block-col), i.e. a
pixel (h, w) lands in block (h//8, w//8). Coefficient planes have shape
(blocks_y, blocks_x, 64) and composed maps have shape
(blocks_y, blocks_x, 64, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, GeometryError
from .tensor_core import DenseTensor, contract

# Scan order of the zigzag walk: entry k is the raster index 8*alpha + beta
# of the k-th coefficient visited.
ZIGZAG_ORDER = (
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
)

# ITU T.81 Annex K reference tables, raster order.
_LUMA_TABLE = (
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
)
_CHROMA_TABLE = (
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
)


@dataclass(frozen=True)
class QuantTable:
    """64 integer quantization divisors in zigzag order."""

    q: tuple[int, ...]

    def __post_init__(self):
        if len(self.q) != 64:
            raise ConfigError(f"quantization table needs 64 entries, got {len(self.q)}")
        for v in self.q:
            if not (1 <= int(v) <= 255):
                raise ConfigError(f"quantization divisor {v} outside [1, 255]")
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))

    @classmethod
    def from_raster(cls, raster) -> "QuantTable":
        flat = np.asarray(raster).reshape(64)
        return cls(tuple(int(flat[r]) for r in ZIGZAG_ORDER))

    @classmethod
    def builtin(cls, name: str) -> "QuantTable":
        if name == "ones":
            return cls((1,) * 64)
        if name == "luma":
            return cls.from_raster(_LUMA_TABLE)
        if name == "chroma":
            return cls.from_raster(_CHROMA_TABLE)
        raise ConfigError(f"unknown builtin quantization table {name!r}")

    def as_vector(self) -> np.ndarray:
        return np.array(self.q, dtype=np.float64)

    def raster(self) -> np.ndarray:
        out = np.zeros((8, 8), dtype=np.int64)
        out.flat[list(ZIGZAG_ORDER)] = self.q
        return out


@dataclass(frozen=True)
class PlaneGeometry:
    """Pixel dimensions of one plane; both must be multiples of 8."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise GeometryError(f"plane {self.height}x{self.width} smaller than one block")
        if self.height % 8 or self.width % 8:
            raise GeometryError(f"plane {self.height}x{self.width} not divisible by 8")

    @property
    def blocks_y(self) -> int:
        return self.height // 8

    @property
    def blocks_x(self) -> int:
        return self.width // 8


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (JPEG codec convention)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def build_blocking(geometry: PlaneGeometry) -> DenseTensor:
    """0/1 tensor (H, W, blocks_y, blocks_x, 8, 8) routing pixel (h, w) to
    block (h//8, w//8) offset (h%8, w%8)."""
    gh, gw = geometry.height, geometry.width
    b = np.zeros((gh, gw, geometry.blocks_y, geometry.blocks_x, 8, 8))
    h = np.arange(gh)[:, None]
    w = np.arange(gw)[None, :]
    b[h, w, h // 8, w // 8, h % 8, w % 8] = 1.0
    return DenseTensor(b)


def build_dct_basis() -> DenseTensor:
    """Orthonormal 2-D DCT basis (m, n, alpha, beta) for 8x8 blocks."""
    m = np.arange(8)
    alpha = np.arange(8)
    cos = np.cos((2 * m[:, None] + 1) * alpha[None, :] * np.pi / 16)
    v = np.where(alpha == 0, 1 / np.sqrt(2), 1.0)
    axis = cos * v[None, :]  # axis[m, alpha]
    d = 0.25 * np.einsum("ma,nb->mnab", axis, axis)
    return DenseTensor(d)


def dct_basis_1d() -> np.ndarray:
    """Orthonormal 8-point DCT matrix T[alpha, m]; rows are basis vectors."""
    m = np.arange(8)
    alpha = np.arange(8)
    v = np.where(alpha == 0, 1 / np.sqrt(2), 1.0)
    return 0.5 * v[:, None] * np.cos((2 * m[None, :] + 1) * alpha[:, None] * np.pi / 16)


def build_zigzag() -> DenseTensor:
    """0/1 permutation (alpha, beta, k) sending raster position to scan position."""
    z = np.zeros((8, 8, 64))
    for k, r in enumerate(ZIGZAG_ORDER):
        z[r // 8, r % 8, k] = 1.0
    return DenseTensor(z)


def build_quant_scale(quant: QuantTable) -> tuple[DenseTensor, DenseTensor]:
    """Diagonal pair (S, S_inv): S divides position k by q_k, S_inv multiplies."""
    q = quant.as_vector()
    return DenseTensor(np.diag(1.0 / q)), DenseTensor(np.diag(q))


@lru_cache(maxsize=32)
def _block_maps(quant: QuantTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-block composites: analysis (m, n, k) incl. 1/q_k and synthesis
    (k, m, n) incl. q_k. All plane-level maps are these plus blocking."""
    dz = contract(build_dct_basis(), build_zigzag(), [(2, 0), (3, 1)]).data  # (m, n, k)
    q = quant.as_vector()
    analysis = dz / q
    synthesis = np.ascontiguousarray((dz * q).transpose(2, 0, 1))
    analysis.flags.writeable = False
    synthesis.flags.writeable = False
    return analysis, synthesis


def encode_blocks(blocks, quant: QuantTable, round: bool = False) -> np.ndarray:
    """Batched single-block encode: (..., 8, 8) spatial -> (..., 64) coefficients."""
    blocks = np.asarray(blocks, dtype=np.float64)
    analysis, _ = _block_maps(quant)
    coeffs = np.tensordot(blocks, analysis, [(-2, -1), (0, 1)])
    if round:
        coeffs = round_half_away(coeffs)
    return coeffs


def decode_blocks(coeffs, quant: QuantTable) -> np.ndarray:
    """Batched single-block decode: (..., 64) coefficients -> (..., 8, 8) spatial."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    _, synthesis = _block_maps(quant)
    return np.tensordot(coeffs, synthesis, [(-1,), (0,)])


def compose_forward(geometry: PlaneGeometry, quant: QuantTable) -> DenseTensor:
    """Composite J of shape (blocks_y, blocks_x, 64, H, W): contracting its
    last two axes with a plane yields quantized (unrounded) coefficients.

    Dense in the plane size; intended for small geometries (tests, building
    convolution maps). encode_plane applies the same map blockwise.
    """
    b = build_blocking(geometry)
    bd = contract(b, build_dct_basis(), [(4, 0), (5, 1)])
    bdz = contract(bd, build_zigzag(), [(4, 0), (5, 1)])
    s, _ = build_quant_scale(quant)
    j = contract(bdz, s, [(4, 0)])  # (H, W, BY, BX, 64)
    return DenseTensor(j.data.transpose(2, 3, 4, 0, 1))


def compose_inverse(geometry: PlaneGeometry, quant: QuantTable) -> DenseTensor:
    """Composite J~ of shape (blocks_y, blocks_x, 64, H, W): contracting its
    first three axes with coefficients yields the reconstructed plane."""
    b = build_blocking(geometry)
    bd = contract(b, build_dct_basis(), [(4, 0), (5, 1)])
    bdz = contract(bd, build_zigzag(), [(4, 0), (5, 1)])
    _, s_inv = build_quant_scale(quant)
    j = contract(bdz, s_inv, [(4, 0)])
    return DenseTensor(j.data.transpose(2, 3, 4, 0, 1))


class JpegTransformPair:
    """Forward and inverse maps for one (geometry, table) pair.

    The dense composites are built lazily on first access: encode/decode
    run blockwise and never need them, and for large planes the dense form
    is prohibitively big.
    """

    def __init__(self, geometry: PlaneGeometry, quant: QuantTable):
        self.geometry = geometry
        self.quant = quant
        self._analysis, self._synthesis = _block_maps(quant)
        self._forward = None
        self._inverse = None

    @property
    def forward(self) -> DenseTensor:
        if self._forward is None:
            self._forward = compose_forward(self.geometry, self.quant)
        return self._forward

    @property
    def inverse(self) -> DenseTensor:
        if self._inverse is None:
            self._inverse = compose_inverse(self.geometry, self.quant)
        return self._inverse


@lru_cache(maxsize=32)
def build_transform_pair(geometry: PlaneGeometry, quant: QuantTable) -> JpegTransformPair:
    return JpegTransformPair(geometry, quant)


def _to_blocks(plane: np.ndarray, geometry: PlaneGeometry) -> np.ndarray:
    return plane.reshape(geometry.blocks_y, 8, geometry.blocks_x, 8).swapaxes(1, 2)


def encode_plane(plane, pair: JpegTransformPair, round: bool = True) -> np.ndarray:
    """Plane (H, W) -> quantized coefficients (blocks_y, blocks_x, 64).

    With round=True each coefficient is rounded to the nearest integer,
    ties away from zero; round=False keeps the exact linear image (the
    lossless setting used by the equivalence experiments).
    """
    plane = np.asarray(plane, dtype=np.float64)
    geo = pair.geometry
    if plane.shape != (geo.height, geo.width):
        raise GeometryError(f"plane shape {plane.shape} does not match {geo}")
    coeffs = np.tensordot(_to_blocks(plane, geo), pair._analysis, [(2, 3), (0, 1)])
    if round:
        coeffs = round_half_away(coeffs)
    return coeffs


def decode_plane(coeffs, pair: JpegTransformPair) -> np.ndarray:
    """Coefficients (blocks_y, blocks_x, 64) -> plane (H, W); never rounds."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    geo = pair.geometry
    if coeffs.shape != (geo.blocks_y, geo.blocks_x, 64):
        raise GeometryError(f"coefficient shape {coeffs.shape} does not match {geo}")
    blocks = np.tensordot(coeffs, pair._synthesis, [(2,), (0,)])
    return blocks.swapaxes(1, 2).reshape(geo.height, geo.width)
