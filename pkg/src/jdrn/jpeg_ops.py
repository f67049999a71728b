"""Residual-network building blocks applied to JPEG coefficients.

Convolution, batch normalization, residual addition and global average
pooling all act on activations of shape (batch, channels, blocks_y,
blocks_x, 64) without ever reconstructing pixels:

  * convolution is conjugated by the transform maps into one precomputed
    linear operator per layer (decode, convolve, re-encode fused into Xi);
  * batch norm reads channel means from DC coefficients and channel
    variances from sums of squared dequantized coefficients (Parseval);
  * addition is elementwise by linearity of the transform;
  * global average pooling is a scaled read of DC coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, QuantMismatch, ShapeMismatch, StrideUnsupported
from .jpeg_transform import PlaneGeometry, QuantTable, build_transform_pair
from .tensor_core import DenseTensor, contract, reshape

# Cap on transient f64 scratch during ConvMap construction (elements per
# intermediate); keeps peak memory bounded while leaving GEMMs large.
_BUILD_CHUNK_ELEMS = 24_000_000


@dataclass(frozen=True)
class CoefficientTensor:
    """Network activations: (batch, channels, blocks_y, blocks_x, 64) plus
    the quantization table the coefficients are scaled by."""

    data: DenseTensor
    quant: QuantTable

    def __post_init__(self):
        if not isinstance(self.data, DenseTensor):
            object.__setattr__(self, "data", DenseTensor(self.data))
        if self.data.rank != 5 or self.data.shape[4] != 64:
            raise ShapeMismatch(
                f"coefficient tensor needs shape (batch, channels, by, bx, 64), got {self.data.shape}"
            )

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def blocks_y(self) -> int:
        return self.data.shape[2]

    @property
    def blocks_x(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class ConvMap:
    """Precomputed JPEG-domain convolution operator.

    xi has shape (in_ch, in_by, in_bx, 64, out_ch, out_by, out_bx, 64);
    contracting its first four axes with an activation applies
    decode -> spatial cross-correlation (same padding) -> encode in one
    step. The source kernel is kept for inspection only.
    """

    xi: DenseTensor
    stride: int
    kernel_size: tuple[int, int]
    kernel: np.ndarray
    in_geometry: PlaneGeometry
    out_geometry: PlaneGeometry
    in_quant: QuantTable
    out_quant: QuantTable

    @property
    def in_channels(self) -> int:
        return self.xi.shape[0]

    @property
    def out_channels(self) -> int:
        return self.xi.shape[4]


@dataclass
class BatchNormParams:
    """Per-channel affine normalization state; train mode mutates the
    running statistics in place."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        shapes = {a.shape for a in (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ShapeMismatch("batch norm parameter vectors must share one 1-D shape")
        if np.any(self.running_var < 0):
            raise ShapeMismatch("running variance must be nonnegative")
        if self.epsilon <= 0:
            raise ShapeMismatch("epsilon must be positive")

    @classmethod
    def identity(cls, channels: int) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels))


def explode_decoder(pair) -> DenseTensor:
    """Reshape the inverse map into a stack of single-channel basis images,
    one per coefficient: (blocks_y * blocks_x * 64, 1, height, width)."""
    geo = pair.geometry
    n = geo.blocks_y * geo.blocks_x * 64
    return reshape(pair.inverse, (n, 1, geo.height, geo.width))


def _shifted_basis(basis: np.ndarray, kh: int, kw: int, stride: int,
                   out_h: int, out_w: int) -> np.ndarray:
    """All kernel-offset views of the basis stack under same padding.

    Returns (kh*kw, n_basis, out_h, out_w) with entry [di*kw+dj, b, oi, oj]
    = basis[b, oi*stride + di - kh//2, oj*stride + dj - kw//2] (0 outside).
    """
    n, h, w = basis.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((n, h + 2 * ph, w + 2 * pw))
    padded[:, ph:ph + h, pw:pw + w] = basis
    shifts = np.empty((kh * kw, n, out_h, out_w))
    for di in range(kh):
        for dj in range(kw):
            view = padded[:, di::stride, dj::stride]
            shifts[di * kw + dj] = view[:, :out_h, :out_w]
    return shifts


def build_conv_map(kernel, in_geometry: PlaneGeometry, stride: int,
                   in_quant: QuantTable, out_quant: QuantTable,
                   dtype=np.float64) -> ConvMap:
    """Fuse decode -> cross-correlation(kernel, stride, same padding) ->
    encode into a single tensor Xi.

    Every coefficient basis image of the input decoder is convolved once
    per kernel tap, and the results are re-encoded with the forward map of
    the output geometry. Built in float64 and stored as `dtype`; output
    channels are processed in chunks to bound scratch memory.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ShapeMismatch(f"kernel must be (out_ch, in_ch, kh, kw), got {kernel.shape}")
    out_ch, in_ch, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise GeometryError(f"kernel {kh}x{kw} must have odd sides for same padding")
    if stride not in (1, 2):
        raise StrideUnsupported(f"stride {stride} not in {{1, 2}}")
    if in_geometry.height % stride or in_geometry.width % stride:
        raise GeometryError("input dimensions not divisible by stride")
    out_geometry = PlaneGeometry(in_geometry.height // stride, in_geometry.width // stride)

    in_pair = build_transform_pair(in_geometry, in_quant)
    out_pair = build_transform_pair(out_geometry, out_quant)
    n_in = in_geometry.blocks_y * in_geometry.blocks_x * 64
    n_out = out_geometry.blocks_y * out_geometry.blocks_x * 64
    oh, ow = out_geometry.height, out_geometry.width

    basis = explode_decoder(in_pair).data.reshape(n_in, in_geometry.height, in_geometry.width)
    shifts = _shifted_basis(basis, kh, kw, stride, oh, ow).reshape(kh * kw, n_in * oh * ow)
    # (n_out, oh*ow), transposed view feeds the re-encode GEMM
    j_out = out_pair.forward.data.reshape(n_out, oh * ow)

    xi = np.empty((in_ch, n_in, out_ch, n_out), dtype=dtype)
    per_oc = in_ch * n_in * max(oh * ow, n_out)
    oc_step = max(1, _BUILD_CHUNK_ELEMS // per_oc)
    for oc0 in range(0, out_ch, oc_step):
        oc1 = min(oc0 + oc_step, out_ch)
        taps = kernel[oc0:oc1].reshape((oc1 - oc0) * in_ch, kh * kw)
        spatial = taps @ shifts  # (oc*in_ch, n_in*oh*ow)
        spatial = spatial.reshape((oc1 - oc0), in_ch, n_in, oh * ow)
        chunk = spatial.reshape(-1, oh * ow) @ j_out.T
        chunk = chunk.reshape((oc1 - oc0), in_ch, n_in, n_out)
        xi[:, :, oc0:oc1, :] = chunk.transpose(1, 2, 0, 3)

    shape = (in_ch, in_geometry.blocks_y, in_geometry.blocks_x, 64,
             out_ch, out_geometry.blocks_y, out_geometry.blocks_x, 64)
    return ConvMap(DenseTensor(xi.reshape(shape), dtype=dtype), stride, (kh, kw), kernel,
                   in_geometry, out_geometry, in_quant, out_quant)


def apply_conv(conv: ConvMap, x: CoefficientTensor) -> CoefficientTensor:
    """Contract activations with Xi over (channel, block, coefficient)."""
    if x.quant != conv.in_quant:
        raise QuantMismatch("activation table differs from the map's input table")
    expected = (conv.in_channels, conv.in_geometry.blocks_y, conv.in_geometry.blocks_x, 64)
    if x.data.shape[1:] != expected:
        raise ShapeMismatch(f"activation shape {x.data.shape[1:]} does not match map input {expected}")
    out = contract(x.data, conv.xi, [(1, 0), (2, 1), (3, 2), (4, 3)])
    return CoefficientTensor(out, conv.out_quant)


def _dc_scale(quant: QuantTable) -> float:
    # dequantized DC = 8 * block mean in the orthonormal basis
    return quant.q[0] / 8.0


def jpeg_batchnorm(x: CoefficientTensor, params: BatchNormParams,
                   mode: str = "eval") -> CoefficientTensor:
    """Per-channel batch normalization without leaving coefficient space.

    Channel means live in the DC coefficients; channel variances follow
    from the mean squared dequantized coefficients of the centered tensor
    (energy preservation of the orthonormal basis). train mode uses batch
    statistics and updates the running ones; eval mode uses the stored
    running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if params.gamma.shape[0] != x.channels:
        raise ShapeMismatch(f"{params.gamma.shape[0]} channels of parameters for {x.channels} channels of data")
    dc = _dc_scale(x.quant)
    q = x.quant.as_vector()
    data = x.data.data.astype(np.float64)

    if mode == "train":
        mean = data[..., 0].mean(axis=(0, 2, 3)) * dc
        data[..., 0] -= mean[:, None, None] / dc
        dequant = data * q
        var = np.square(dequant).sum(axis=4).mean(axis=(0, 2, 3)) / 64.0
        m = params.momentum
        params.running_mean += m * (mean - params.running_mean)
        params.running_var += m * (var - params.running_var)
    else:
        mean, var = params.running_mean, params.running_var
        data[..., 0] -= mean[:, None, None] / dc

    scale = params.gamma / np.sqrt(var + params.epsilon)
    data *= scale[:, None, None, None]
    data[..., 0] += params.beta[:, None, None] / dc
    return CoefficientTensor(DenseTensor(data, dtype=x.data.dtype), x.quant)


def rescale_coefficients(x: CoefficientTensor, quant: QuantTable) -> CoefficientTensor:
    """Re-express activations under another quantization table.

    c' = c * q_old / q_new preserves every dequantized value exactly, so
    decode(rescale(x)) == decode(x); only the integer-ness of stored
    values is lost.
    """
    if quant == x.quant:
        return x
    ratio = x.quant.as_vector() / quant.as_vector()
    return CoefficientTensor(DenseTensor(x.data.data * ratio, dtype=x.data.dtype), quant)


def jpeg_add(a: CoefficientTensor, b: CoefficientTensor) -> CoefficientTensor:
    """Elementwise sum; valid because encoding is linear."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"addend shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.quant != b.quant:
        raise QuantMismatch("addends quantized with different tables")
    return CoefficientTensor(DenseTensor(a.data.data + b.data.data, dtype=a.data.dtype), a.quant)


def global_avg_pool(x: CoefficientTensor) -> np.ndarray:
    """Per-channel spatial mean, read directly off DC coefficients: (batch, channels)."""
    return x.data.data[..., 0].mean(axis=(2, 3)) * _dc_scale(x.quant)
