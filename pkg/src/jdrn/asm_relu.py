"""ReLu on JPEG coefficients by approximated spatial masking.

ReLu is piecewise linear: r(x) = nnm(x) * x, where nnm is the indicator
of positive values. The mask is cheap to approximate from a few low
frequencies, and once the mask is fixed the operation is linear, so it
can be applied to the full-precision coefficients through a precomputed
harmonic mixing tensor H without reconstructing pixels. The ASM variant
does exactly that; the APX baseline instead applies ReLu to the
low-frequency reconstruction itself and re-encodes, losing exact values
even where the mask is right.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, QuantMismatch
from .jpeg_ops import CoefficientTensor
from .jpeg_transform import ZIGZAG_ORDER, QuantTable, _block_maps, encode_blocks
from .tensor_core import DenseTensor

# Spatial-frequency diagonal (alpha + beta) of each zigzag position.
_DIAGONAL = tuple((r // 8) + (r % 8) for r in ZIGZAG_ORDER)

# Blocks per slice when streaming the H contraction; bounds scratch at
# roughly chunk * 4096 float64 values.
_CHUNK_BLOCKS = 8192


@dataclass(frozen=True)
class FrequencyBudget:
    """Number of spatial-frequency diagonals kept for mask estimation.

    Budget n selects every coefficient whose position (alpha, beta)
    satisfies alpha + beta <= n - 1. An 8x8 block has 15 diagonals, so
    n_freqs=15 keeps all 64 coefficients and the mask becomes exact.
    """

    n_freqs: int

    def __post_init__(self):
        if not (1 <= self.n_freqs <= 15):
            raise ConfigError(f"frequency budget {self.n_freqs} outside [1, 15]")

    def positions(self) -> np.ndarray:
        """Zigzag positions selected by this budget, ascending."""
        return np.array([k for k in range(64) if _DIAGONAL[k] <= self.n_freqs - 1])

    @property
    def count(self) -> int:
        return len(self.positions())


@dataclass(frozen=True)
class HarmonicMixingTensor:
    """Operator H (64, 8, 8, 64): contracting a coefficient block against
    axes 0 and a spatial mask against axes (1, 2) yields the coefficients
    of the pixelwise-masked block, quantizer scaling included."""

    h: DenseTensor
    quant: QuantTable


@lru_cache(maxsize=32)
def build_harmonic_mixing(quant: QuantTable) -> HarmonicMixingTensor:
    """H[k, m, n, k'] = q_k D[m, n, zz(k)] D[m, n, zz(k')] / q_k'.

    Composition of dequantize, un-zigzag, synthesis at pixel (m, n),
    analysis back, zigzag, quantize; the blocking map drops out because
    masking acts within each block.
    """
    analysis, synthesis = _block_maps(quant)  # (m, n, k') and (k, m, n)
    h = np.einsum("kmn,mnl->kmnl", synthesis, analysis)
    return HarmonicMixingTensor(DenseTensor(h), quant)


def apply_mask(h: HarmonicMixingTensor, coeffs, mask) -> np.ndarray:
    """Multiply a spatial 0/1 mask into coefficient blocks via H.

    coeffs: (..., 64); mask: (..., 8, 8) or a single (8, 8) broadcast to
    all blocks. Returns masked coefficients, shape (..., 64).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), coeffs.shape[:-1] + (8, 8))
    flat = coeffs.reshape(-1, 64)
    mflat = mask.reshape(-1, 64)
    mixed = (flat @ h.h.data.reshape(64, 64 * 64)).reshape(-1, 64, 64)
    out = np.einsum("bsk,bs->bk", mixed, mflat)
    return out.reshape(coeffs.shape)


def approx_spatial(coeffs, budget: FrequencyBudget, quant: QuantTable) -> np.ndarray:
    """Reconstruct pixels from the budget's low frequencies only.

    coeffs: (..., 64) -> (..., 8, 8). At n_freqs=15 this is the full
    inverse transform; below that it is the least-squares-optimal
    truncated reconstruction.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    pos = budget.positions()
    _, synthesis = _block_maps(quant)
    return np.tensordot(coeffs[..., pos], synthesis[pos], [(-1,), (0,)])


def nnm_mask(spatial) -> np.ndarray:
    """Nonnegative mask: 1 where value > 0, else 0 (0 at exactly 0)."""
    return (np.asarray(spatial) > 0).astype(np.float64)


def _relu_blocks(flat: np.ndarray, budget: FrequencyBudget,
                 h: HarmonicMixingTensor | None, quant: QuantTable) -> np.ndarray:
    """Shared streaming loop: ASM when h is given, APX otherwise."""
    out = np.empty_like(flat)
    for lo in range(0, flat.shape[0], _CHUNK_BLOCKS):
        chunk = flat[lo:lo + _CHUNK_BLOCKS]
        approx = approx_spatial(chunk, budget, quant)
        if h is not None:
            out[lo:lo + _CHUNK_BLOCKS] = apply_mask(h, chunk, nnm_mask(approx))
        else:
            out[lo:lo + _CHUNK_BLOCKS] = encode_blocks(np.maximum(approx, 0.0), quant)
    return out


def asm_relu(coeffs: CoefficientTensor, budget: FrequencyBudget,
             h: HarmonicMixingTensor) -> CoefficientTensor:
    """ReLu with an approximated mask but exact linear pieces.

    Per block: estimate the mask from the budget's low frequencies, then
    apply it to the full-precision coefficients through H. Pixels whose
    mask bit is correct come out exactly; only mask errors differ from
    true ReLu.
    """
    if h.quant != coeffs.quant:
        raise QuantMismatch("mixing tensor built for a different quantization table")
    flat = coeffs.data.data.astype(np.float64).reshape(-1, 64)
    out = _relu_blocks(flat, budget, h, coeffs.quant)
    out = out.reshape(coeffs.data.shape)
    return CoefficientTensor(DenseTensor(out, dtype=coeffs.data.dtype), coeffs.quant)


def apx_relu(coeffs: CoefficientTensor, budget: FrequencyBudget,
             quant: QuantTable) -> CoefficientTensor:
    """Baseline: ReLu applied to the low-frequency reconstruction itself.

    Exact only at full budget; below that even pixels with a correct mask
    bit lose their values to the truncation.
    """
    if quant != coeffs.quant:
        raise QuantMismatch("requested table differs from the activation table")
    flat = coeffs.data.data.astype(np.float64).reshape(-1, 64)
    out = _relu_blocks(flat, budget, None, quant)
    out = out.reshape(coeffs.data.shape)
    return CoefficientTensor(DenseTensor(out, dtype=coeffs.data.dtype), coeffs.quant)


def generate_test_blocks(count: int, seed: int) -> np.ndarray:
    """Random low-detail test blocks: uniform [-1, 1] 4x4 patterns upsampled
    to 8x8 with a box filter, so every 2x2 tile is constant. (count, 8, 8)."""
    if count < 1:
        raise ConfigError(f"block count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-1.0, 1.0, size=(count, 4, 4))
    return np.repeat(np.repeat(coarse, 2, axis=1), 2, axis=2)
