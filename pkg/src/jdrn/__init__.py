"""Residual network inference directly on JPEG DCT coefficients.

The package decodes JPEG files only as far as their quantized transform
coefficients and runs convolution, ReLu, batch normalization, residual
addition and global average pooling in that representation, with a plain
spatial-domain network as the equivalence reference.
"""

from .asm_relu import (
    FrequencyBudget,
    HarmonicMixingTensor,
    apply_mask,
    approx_spatial,
    apx_relu,
    asm_relu,
    build_harmonic_mixing,
    generate_test_blocks,
    nnm_mask,
)
from .errors import (
    ConfigError,
    CorruptFile,
    CorruptStream,
    GeometryError,
    JdrnError,
    QuantMismatch,
    RankError,
    ShapeMismatch,
    StrideUnsupported,
    SubsamplingUnsupported,
    TruncatedFile,
    UnsupportedFormat,
    VersionMismatch,
)
from .jpeg_io import ParsedJpeg, coefficients_for_network, load_pnm, parse_jpeg
from .jpeg_ops import (
    BatchNormParams,
    CoefficientTensor,
    ConvMap,
    apply_conv,
    build_conv_map,
    explode_decoder,
    global_avg_pool,
    jpeg_add,
    jpeg_batchnorm,
    rescale_coefficients,
)
from .jpeg_transform import (
    JpegTransformPair,
    PlaneGeometry,
    QuantTable,
    build_transform_pair,
    compose_forward,
    compose_inverse,
    decode_blocks,
    decode_plane,
    encode_blocks,
    encode_plane,
)
from .model import (
    JpegModel,
    ModelWeights,
    NetworkSpec,
    convert_model,
    forward,
    load_weights,
    prepare_jpeg_input,
    prepare_pixel_input,
    random_spatial_weights,
    save_weights,
)
from .spatial_ref import (
    spatial_batchnorm,
    spatial_conv,
    spatial_forward,
    spatial_gap,
    spatial_relu,
)
from .tensor_core import DenseTensor, contract, reshape

__version__ = "0.1.0"
