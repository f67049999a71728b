"""Plain pixel-domain reference network.

Textbook implementations of every operation the coefficient-domain
pipeline claims to reproduce. Everything runs in float64 with the most
direct formulation available; this module is the ground truth the
equivalence tests compare against, so clarity wins over speed.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .jpeg_ops import BatchNormParams
from .model import ModelWeights, NetworkSpec, extract_block, validate_weights


def spatial_relu(x) -> np.ndarray:
    """max(x, 0) elementwise."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def spatial_conv(x, kernel, stride: int = 1) -> np.ndarray:
    """Cross-correlation with zero "same" padding.

    x: (batch, in_ch, h, w); kernel: (out_ch, in_ch, kh, kw);
    out[b,o,i,j] = sum over (c,di,dj) of kernel[o,c,di,dj] *
    x[b,c, i*stride+di-kh//2, j*stride+dj-kw//2], zeros outside.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch("spatial_conv expects 4-D input and kernel")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    batch, _, h, w = x.shape
    out_ch, in_ch, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    oh, ow = h // stride, w // stride
    padded = np.zeros((batch, in_ch, h + 2 * ph, w + 2 * pw))
    padded[:, :, ph:ph + h, pw:pw + w] = x
    out = np.zeros((batch, out_ch, oh, ow))
    for di in range(kh):
        for dj in range(kw):
            window = padded[:, :, di::stride, dj::stride][:, :, :oh, :ow]
            out += np.einsum("oc,bchw->bohw", kernel[:, :, di, dj], window)
    return out


def spatial_batchnorm(x, params: BatchNormParams, mode: str = "eval") -> np.ndarray:
    """Per-channel normalization over (batch, height, width).

    train mode uses population statistics of the batch and updates the
    running ones with the momentum rule; eval mode applies the stored
    running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params.gamma.shape[0]:
        raise ShapeMismatch(f"{params.gamma.shape[0]} channels of parameters for {x.shape[1]} channels of data")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = params.momentum
        params.running_mean += m * (mean - params.running_mean)
        params.running_var += m * (var - params.running_var)
    else:
        mean, var = params.running_mean, params.running_var
    scale = params.gamma / np.sqrt(var + params.epsilon)
    return (x - mean[None, :, None, None]) * scale[None, :, None, None] + params.beta[None, :, None, None]


def spatial_gap(x) -> np.ndarray:
    """Global average pool: (batch, channels, h, w) -> (batch, channels)."""
    return np.asarray(x, dtype=np.float64).mean(axis=(2, 3))


def spatial_forward(weights: ModelWeights, pixels, spec: NetworkSpec | None = None) -> np.ndarray:
    """Reference forward pass on raw pixels; (batch, classes) logits.

    Applies the container's input normalization, then per block:
    conv -> batch norm (eval) -> ReLu -> conv -> batch norm -> residual
    add (1x1 projection on the skip when shape changes) -> ReLu; finally
    global average pooling and the fully connected head.
    """
    if spec is None:
        spec = weights.spec()
    validate_weights(weights, spec)
    norm = weights.metadata.get("normalization", {"mean": 0.0, "scale": 1.0})
    x = (np.asarray(pixels, dtype=np.float64) - norm["mean"]) * norm["scale"]
    if x.ndim != 4:
        raise ShapeMismatch(f"pixel input must be (batch, channels, h, w), got {x.shape}")
    for i, stride in enumerate(spec.strides, start=1):
        blk = extract_block(weights, spec, i)
        out = spatial_conv(x, blk.conv1, stride)
        out = spatial_batchnorm(out, blk.bn1, "eval")
        out = spatial_relu(out)
        out = spatial_conv(out, blk.conv2, 1)
        out = spatial_batchnorm(out, blk.bn2, "eval")
        skip = x if blk.proj is None else spatial_conv(x, blk.proj, stride)
        x = spatial_relu(out + skip)
    pooled = spatial_gap(x)
    return pooled @ weights.tensors["fc.weight"].T + weights.tensors["fc.bias"]
