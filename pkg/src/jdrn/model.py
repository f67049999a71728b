"""Residual classifier in both domains: assembly, conversion, inference, serialization.

A model is three residual blocks (the last two downsampling by stride 2)
followed by global average pooling and a fully connected head. Spatial
weights are the source of truth; convert_model rebuilds every convolution
as a precomputed JPEG-domain operator and binds ReLu to approximated
spatial masking, so the same weights run in either domain and can be
compared logit for logit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .asm_relu import FrequencyBudget, HarmonicMixingTensor, asm_relu, build_harmonic_mixing
from .errors import CorruptFile, GeometryError, QuantMismatch, ShapeMismatch, VersionMismatch
from .jpeg_ops import (
    BatchNormParams,
    CoefficientTensor,
    ConvMap,
    apply_conv,
    build_conv_map,
    global_avg_pool,
    jpeg_add,
    jpeg_batchnorm,
)
from .jpeg_transform import PlaneGeometry, QuantTable, build_transform_pair, encode_plane
from .tensor_core import DenseTensor

_MAGIC = b"JDRN"
_FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture plan: input plane, channel widths, per-block strides."""

    geometry: PlaneGeometry = PlaneGeometry(32, 32)
    in_channels: int = 1
    channel_plan: tuple[int, ...] = (16, 32, 64)
    strides: tuple[int, ...] = (1, 2, 2)
    num_classes: int = 10
    kernel_size: int = 3
    budget: FrequencyBudget = FrequencyBudget(15)

    def __post_init__(self):
        if len(self.channel_plan) != len(self.strides):
            raise ShapeMismatch("channel plan and stride list must have equal length")
        h, w = self.geometry.height, self.geometry.width
        for s in self.strides:
            if s not in (1, 2):
                raise ShapeMismatch(f"stride {s} not in {{1, 2}}")
            h, w = h // s, w // s
        # classifier head reads one DC per channel
        if h != 8 or w != 8:
            raise GeometryError(
                f"strides must reduce the plane to a single 8x8 block, got {h}x{w}"
            )

    def stage_geometries(self) -> list[tuple[PlaneGeometry, PlaneGeometry]]:
        """(input, output) plane geometry of each residual block."""
        out = []
        geo = self.geometry
        for s in self.strides:
            nxt = PlaneGeometry(geo.height // s, geo.width // s)
            out.append((geo, nxt))
            geo = nxt
        return out


@dataclass(frozen=True)
class ResidualBlockWeights:
    """Spatial weights of one block; proj is the 1x1 skip kernel or None."""

    conv1: np.ndarray
    bn1: BatchNormParams
    conv2: np.ndarray
    bn2: BatchNormParams
    proj: np.ndarray | None


@dataclass
class ModelWeights:
    """Ordered named tensors plus descriptive metadata.

    metadata keys: domain ("spatial" or "jpeg"), quant (64 divisors or
    None), budget (int or None), normalization {"mean", "scale"} applied
    to pixels before encoding, and the architecture fields needed to
    rebuild a NetworkSpec.
    """

    tensors: dict[str, np.ndarray]
    metadata: dict

    def spec(self) -> NetworkSpec:
        m = self.metadata
        return NetworkSpec(
            geometry=PlaneGeometry(m["height"], m["width"]),
            in_channels=m["in_channels"],
            channel_plan=tuple(m["channel_plan"]),
            strides=tuple(m["strides"]),
            num_classes=m["num_classes"],
            kernel_size=m.get("kernel_size", 3),
            budget=FrequencyBudget(m["budget"]) if m.get("budget") else FrequencyBudget(15),
        )


def _spec_metadata(spec: NetworkSpec) -> dict:
    return {
        "height": spec.geometry.height,
        "width": spec.geometry.width,
        "in_channels": spec.in_channels,
        "channel_plan": list(spec.channel_plan),
        "strides": list(spec.strides),
        "num_classes": spec.num_classes,
        "kernel_size": spec.kernel_size,
    }


def _block_channels(spec: NetworkSpec) -> list[tuple[int, int]]:
    chans = []
    prev = spec.in_channels
    for c in spec.channel_plan:
        chans.append((prev, c))
        prev = c
    return chans


def expected_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor a weight container must hold."""
    k = spec.kernel_size
    shapes: dict[str, tuple[int, ...]] = {}
    for i, ((cin, cout), stride) in enumerate(zip(_block_channels(spec), spec.strides), start=1):
        shapes[f"block{i}.conv1.weight"] = (cout, cin, k, k)
        shapes[f"block{i}.conv2.weight"] = (cout, cout, k, k)
        if stride != 1 or cin != cout:
            shapes[f"block{i}.proj.weight"] = (cout, cin, 1, 1)
        for bn in (f"block{i}.bn1", f"block{i}.bn2"):
            for p in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"{bn}.{p}"] = (cout,)
    shapes["fc.weight"] = (spec.num_classes, spec.channel_plan[-1])
    shapes["fc.bias"] = (spec.num_classes,)
    return shapes


def validate_weights(weights: ModelWeights, spec: NetworkSpec) -> None:
    for name, shape in expected_shapes(spec).items():
        if name not in weights.tensors:
            raise ShapeMismatch(f"weight container missing tensor {name!r}")
        got = weights.tensors[name].shape
        if got != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {got}")


def extract_block(weights: ModelWeights, spec: NetworkSpec, index: int) -> ResidualBlockWeights:
    """Typed view of block `index` (1-based); batch norm arrays are copied
    so train-mode updates cannot alias the container."""
    t = weights.tensors
    prefix = f"block{index}"

    def bn(name: str) -> BatchNormParams:
        return BatchNormParams(
            t[f"{prefix}.{name}.gamma"].copy(),
            t[f"{prefix}.{name}.beta"].copy(),
            t[f"{prefix}.{name}.running_mean"].copy(),
            t[f"{prefix}.{name}.running_var"].copy(),
        )

    proj = t.get(f"{prefix}.proj.weight")
    return ResidualBlockWeights(
        conv1=t[f"{prefix}.conv1.weight"],
        bn1=bn("bn1"),
        conv2=t[f"{prefix}.conv2.weight"],
        bn2=bn("bn2"),
        proj=None if proj is None else proj,
    )


def random_spatial_weights(spec: NetworkSpec, seed: int,
                           normalization: tuple[float, float] = (0.0, 1.0)) -> ModelWeights:
    """Deterministic random spatial model for conversion experiments.

    Kernels are scaled by 1/sqrt(fan-in) so activations stay O(1) through
    the stack; batch norm gets random but well-conditioned statistics.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(spec).items():
        if name.endswith("conv1.weight") or name.endswith("conv2.weight") or \
                name.endswith("proj.weight") or name == "fc.weight":
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif name.endswith(".gamma"):
            tensors[name] = rng.uniform(0.8, 1.2, size=shape)
        elif name.endswith(".running_var"):
            tensors[name] = rng.uniform(0.5, 1.5, size=shape)
        elif name.endswith(".beta") or name.endswith(".running_mean"):
            tensors[name] = rng.normal(0.0, 0.1, size=shape)
        else:  # fc.bias
            tensors[name] = rng.normal(0.0, 0.1, size=shape)
    meta = dict(_spec_metadata(spec), domain="spatial", quant=None, budget=None,
                normalization={"mean": normalization[0], "scale": normalization[1]})
    return ModelWeights(tensors, meta)


@dataclass(frozen=True)
class JpegBlock:
    conv1: ConvMap
    bn1: BatchNormParams
    conv2: ConvMap
    bn2: BatchNormParams
    proj: ConvMap | None


@dataclass(frozen=True)
class JpegModel:
    """Converted network: precomputed conv operators plus carried-over
    batch norm, classifier head, and the ReLu mixing tensor."""

    spec: NetworkSpec
    quant: QuantTable
    blocks: tuple[JpegBlock, ...]
    fc_weight: np.ndarray
    fc_bias: np.ndarray
    mixing: HarmonicMixingTensor
    normalization: tuple[float, float]


def convert_model(spatial: ModelWeights, spec: NetworkSpec, quant: QuantTable,
                  dtype=np.float32) -> JpegModel:
    """Rebuild a spatial model as JPEG-domain operators.

    Convolutions become ConvMaps (built per stage geometry), batch norm
    parameters transfer unchanged, and the fully connected head is reused
    as is since it runs after pooling in both domains. `dtype` sets the
    stored ConvMap precision.
    """
    validate_weights(spatial, spec)
    blocks = []
    for i, (geo_in, geo_out) in enumerate(spec.stage_geometries(), start=1):
        w = extract_block(spatial, spec, i)
        stride = spec.strides[i - 1]
        conv1 = build_conv_map(w.conv1, geo_in, stride, quant, quant, dtype=dtype)
        conv2 = build_conv_map(w.conv2, geo_out, 1, quant, quant, dtype=dtype)
        proj = None
        if w.proj is not None:
            proj = build_conv_map(w.proj, geo_in, stride, quant, quant, dtype=dtype)
        blocks.append(JpegBlock(conv1, w.bn1, conv2, w.bn2, proj))
    norm = spatial.metadata.get("normalization", {"mean": 0.0, "scale": 1.0})
    return JpegModel(
        spec=spec,
        quant=quant,
        blocks=tuple(blocks),
        fc_weight=np.asarray(spatial.tensors["fc.weight"], dtype=np.float64),
        fc_bias=np.asarray(spatial.tensors["fc.bias"], dtype=np.float64),
        mixing=build_harmonic_mixing(quant),
        normalization=(float(norm["mean"]), float(norm["scale"])),
    )


def forward(model: JpegModel, x: CoefficientTensor) -> np.ndarray:
    """Run the converted network on coefficient activations; (batch, classes)."""
    budget = model.spec.budget
    for blk in model.blocks:
        out = apply_conv(blk.conv1, x)
        out = jpeg_batchnorm(out, blk.bn1, "eval")
        out = asm_relu(out, budget, model.mixing)
        out = apply_conv(blk.conv2, out)
        out = jpeg_batchnorm(out, blk.bn2, "eval")
        skip = x if blk.proj is None else apply_conv(blk.proj, x)
        out = jpeg_add(out, skip)
        x = asm_relu(out, budget, model.mixing)
    pooled = global_avg_pool(x)
    return pooled @ model.fc_weight.T + model.fc_bias


def prepare_pixel_input(pixels, model: JpegModel, dtype=np.float32) -> CoefficientTensor:
    """Normalize raw pixels (batch, channels, H, W) and encode them
    losslessly into network activations of the given precision."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 4:
        raise ShapeMismatch(f"pixel input must be (batch, channels, h, w), got {pixels.shape}")
    mean, scale = model.normalization
    normalized = (pixels - mean) * scale
    pair = build_transform_pair(model.spec.geometry, model.quant)
    batch, channels = pixels.shape[:2]
    out = np.empty((batch, channels, pair.geometry.blocks_y, pair.geometry.blocks_x, 64))
    for b in range(batch):
        for c in range(channels):
            out[b, c] = encode_plane(normalized[b, c], pair, round=False)
    return CoefficientTensor(DenseTensor(out, dtype=dtype), model.quant)


def prepare_jpeg_input(coeffs: CoefficientTensor, model: JpegModel,
                       pixel_offset: float = -128.0, dtype=np.float32) -> CoefficientTensor:
    """Renormalize parsed file coefficients into network activations.

    The parser yields coefficients of level-shifted pixels (p + offset,
    offset = -128 for baseline files). Normalizing to (p - mean) * scale
    is an exact affine map in coefficient space: scale everything, then
    shift the DC by the constant term.
    """
    if coeffs.quant != model.quant:
        raise QuantMismatch("input coefficients quantized with a different table than the model")
    mean, scale = model.normalization
    data = coeffs.data.data.astype(np.float64)
    data *= scale
    # constant plane c has DC 8c/q0 per block
    shift = scale * (pixel_offset + mean) * 8.0 / model.quant.q[0]
    data[..., 0] -= shift
    return CoefficientTensor(DenseTensor(data, dtype=dtype), model.quant)


def save_weights(weights: ModelWeights) -> bytes:
    """Serialize a weight container; round-trips bit for bit."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<HI", _FORMAT_VERSION, len(weights.tensors))
    for name, tensor in weights.tensors.items():
        tensor = np.ascontiguousarray(tensor)
        if tensor.dtype not in _DTYPE_CODES:
            tensor = tensor.astype(np.float64)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<BB", _DTYPE_CODES[tensor.dtype], tensor.ndim)
        out += struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
        out += tensor.astype(tensor.dtype.newbyteorder("<"), copy=False).tobytes()
    meta = json.dumps(weights.metadata, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta))
    out += meta
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile(f"file truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(data: bytes) -> ModelWeights:
    """Parse a serialized weight container."""
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise VersionMismatch("not a weight file (bad magic)")
    version, count = r.unpack("<HI")
    if version != _FORMAT_VERSION:
        raise VersionMismatch(f"unsupported weight format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CorruptFile(f"unknown dtype code {code} for tensor {name!r}")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = r.take(n_bytes)
        tensors[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    (meta_len,) = r.unpack("<I")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"metadata block unreadable: {exc}") from None
    return ModelWeights(tensors, metadata)
