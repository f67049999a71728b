import dataclasses
import struct

import numpy as np
import numpy.testing as npt
import pytest

from jdrn.asm_relu import FrequencyBudget
from jdrn.errors import (
    CorruptFile,
    GeometryError,
    QuantMismatch,
    ShapeMismatch,
    VersionMismatch,
)
from jdrn.jpeg_ops import CoefficientTensor
from jdrn.jpeg_transform import (
    PlaneGeometry,
    QuantTable,
    build_transform_pair,
    encode_plane,
)
from jdrn.model import (
    NetworkSpec,
    convert_model,
    expected_shapes,
    extract_block,
    forward,
    load_weights,
    prepare_jpeg_input,
    prepare_pixel_input,
    random_spatial_weights,
    save_weights,
    validate_weights,
)
from jdrn.spatial_ref import spatial_forward
from jdrn.tensor_core import DenseTensor

from helpers import decode_batch

ONES = QuantTable.builtin("ones")
TINY = NetworkSpec(geometry=PlaneGeometry(16, 16), channel_plan=(4, 6),
                   strides=(1, 2), num_classes=3)


def test_network_spec_validation():
    with pytest.raises(ShapeMismatch):
        NetworkSpec(channel_plan=(16, 32), strides=(1, 2, 2))
    with pytest.raises(ShapeMismatch):
        NetworkSpec(strides=(1, 3, 2))
    with pytest.raises(GeometryError):
        NetworkSpec(strides=(1, 1, 1))  # 32x32 never reaches one block
    geos = TINY.stage_geometries()
    assert geos == [(PlaneGeometry(16, 16), PlaneGeometry(16, 16)),
                    (PlaneGeometry(16, 16), PlaneGeometry(8, 8))]


def test_expected_shapes_default_spec():
    shapes = expected_shapes(NetworkSpec())
    assert shapes["block1.conv1.weight"] == (16, 1, 3, 3)
    assert shapes["block2.conv1.weight"] == (32, 16, 3, 3)
    assert shapes["block2.conv2.weight"] == (32, 32, 3, 3)
    assert shapes["block3.proj.weight"] == (64, 32, 1, 1)
    assert shapes["block1.proj.weight"] == (16, 1, 1, 1)  # channel change
    assert shapes["block2.bn1.gamma"] == (32,)
    assert shapes["fc.weight"] == (10, 64)
    assert shapes["fc.bias"] == (10,)


def test_projection_absent_when_shape_is_preserved():
    spec = NetworkSpec(geometry=PlaneGeometry(8, 8), in_channels=2,
                       channel_plan=(2,), strides=(1,), num_classes=2)
    shapes = expected_shapes(spec)
    assert "block1.proj.weight" not in shapes
    weights = random_spatial_weights(spec, seed=0)
    assert extract_block(weights, spec, 1).proj is None


def test_validate_weights_errors():
    weights = random_spatial_weights(TINY, seed=1)
    validate_weights(weights, TINY)
    broken = dict(weights.tensors)
    del broken["block2.bn1.beta"]
    with pytest.raises(ShapeMismatch):
        validate_weights(dataclasses.replace(weights, tensors=broken), TINY)
    wrong = dict(weights.tensors)
    wrong["fc.bias"] = np.zeros(4)
    with pytest.raises(ShapeMismatch):
        validate_weights(dataclasses.replace(weights, tensors=wrong), TINY)


def test_random_weights_deterministic():
    a = random_spatial_weights(TINY, seed=7)
    b = random_spatial_weights(TINY, seed=7)
    assert a.tensors.keys() == b.tensors.keys()
    for name in a.tensors:
        npt.assert_array_equal(a.tensors[name], b.tensors[name])
    c = random_spatial_weights(TINY, seed=8)
    assert any(not np.array_equal(a.tensors[n], c.tensors[n]) for n in a.tensors)


def test_spec_metadata_round_trip():
    weights = random_spatial_weights(TINY, seed=2)
    assert weights.spec() == TINY
    assert weights.metadata["normalization"] == {"mean": 0.0, "scale": 1.0}


def test_extract_block_copies_batchnorm_state():
    weights = random_spatial_weights(TINY, seed=3)
    blk = extract_block(weights, TINY, 1)
    blk.bn1.running_mean += 100.0
    npt.assert_array_equal(weights.tensors["block1.bn1.running_mean"],
                           extract_block(weights, TINY, 1).bn1.running_mean)


def test_save_load_round_trip():
    weights = random_spatial_weights(TINY, seed=4)
    blob = save_weights(weights)
    loaded = load_weights(blob)
    assert loaded.tensors.keys() == weights.tensors.keys()
    for name, tensor in weights.tensors.items():
        assert loaded.tensors[name].dtype == tensor.dtype
        npt.assert_array_equal(loaded.tensors[name], tensor)
    assert loaded.metadata == weights.metadata
    assert save_weights(loaded) == blob


def test_save_load_preserves_float32():
    weights = random_spatial_weights(TINY, seed=5)
    weights.tensors["fc.bias"] = weights.tensors["fc.bias"].astype(np.float32)
    loaded = load_weights(save_weights(weights))
    assert loaded.tensors["fc.bias"].dtype == np.float32


def test_load_rejects_truncation():
    blob = save_weights(random_spatial_weights(TINY, seed=6))
    with pytest.raises(CorruptFile):
        load_weights(blob[:-3])
    with pytest.raises(CorruptFile):
        load_weights(blob[:10])


def test_load_rejects_bad_magic_and_version():
    blob = save_weights(random_spatial_weights(TINY, seed=6))
    with pytest.raises(VersionMismatch):
        load_weights(b"XXXX" + blob[4:])
    tampered = bytearray(blob)
    struct.pack_into("<H", tampered, 4, 99)
    with pytest.raises(VersionMismatch):
        load_weights(bytes(tampered))


def test_load_rejects_unknown_dtype_code():
    blob = save_weights(random_spatial_weights(TINY, seed=6))
    (name_len,) = struct.unpack_from("<I", blob, 10)
    tampered = bytearray(blob)
    tampered[14 + name_len] = 7  # dtype code of the first tensor
    with pytest.raises(CorruptFile):
        load_weights(bytes(tampered))


def test_conversion_matches_spatial_reference():
    weights = random_spatial_weights(TINY, seed=10)
    model = convert_model(weights, TINY, ONES, dtype=np.float64)
    rng = np.random.default_rng(11)
    pixels = rng.uniform(-1.0, 1.0, size=(8, 1, 16, 16))
    logits = forward(model, prepare_pixel_input(pixels, model, dtype=np.float64))
    expected = spatial_forward(weights, pixels, TINY)
    npt.assert_allclose(logits, expected, atol=1e-8)
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(expected, axis=1))


def test_conversion_float32_smoke():
    weights = random_spatial_weights(TINY, seed=12)
    model = convert_model(weights, TINY, ONES)  # float32 operators
    rng = np.random.default_rng(13)
    pixels = rng.uniform(-1.0, 1.0, size=(4, 1, 16, 16))
    logits = forward(model, prepare_pixel_input(pixels, model))
    expected = spatial_forward(weights, pixels, TINY)
    assert np.abs(logits - expected).max() < 1e-4


def test_conversion_is_deterministic():
    weights = random_spatial_weights(TINY, seed=14)
    a = convert_model(weights, TINY, ONES)
    b = convert_model(weights, TINY, ONES)
    for blk_a, blk_b in zip(a.blocks, b.blocks):
        assert blk_a.conv1.xi.data.tobytes() == blk_b.conv1.xi.data.tobytes()
        assert blk_a.conv2.xi.data.tobytes() == blk_b.conv2.xi.data.tobytes()


def test_zero_weights_give_bias_in_both_domains():
    weights = random_spatial_weights(TINY, seed=15)
    for name in weights.tensors:
        if name.endswith(".weight") or name.endswith(".beta") or name.endswith(".running_mean"):
            weights.tensors[name] = np.zeros_like(weights.tensors[name])
    bias = np.array([1.0, -2.0, 0.5])
    weights.tensors["fc.bias"] = bias
    model = convert_model(weights, TINY, ONES, dtype=np.float64)
    rng = np.random.default_rng(16)
    pixels = rng.standard_normal((3, 1, 16, 16))
    logits = forward(model, prepare_pixel_input(pixels, model, dtype=np.float64))
    npt.assert_allclose(logits, np.tile(bias, (3, 1)), atol=1e-10)
    npt.assert_allclose(spatial_forward(weights, pixels, TINY), np.tile(bias, (3, 1)), atol=1e-12)


def test_residual_passthrough():
    # zero convolutions and neutral batch norms leave only the skip path,
    # so a positive input flows to the head untouched and the logits are
    # its channel means (identity classifier)
    spec = NetworkSpec(geometry=PlaneGeometry(8, 8), in_channels=2,
                       channel_plan=(2,), strides=(1,), num_classes=2)
    weights = random_spatial_weights(spec, seed=17)
    for name, shape in expected_shapes(spec).items():
        if name.endswith("conv1.weight") or name.endswith("conv2.weight"):
            weights.tensors[name] = np.zeros(shape)
        elif name.endswith(".gamma") or name.endswith(".running_var"):
            weights.tensors[name] = np.ones(shape)
        elif name != "fc.weight":
            weights.tensors[name] = np.zeros(shape)
    weights.tensors["fc.weight"] = np.eye(2)
    rng = np.random.default_rng(18)
    pixels = rng.uniform(0.5, 2.0, size=(4, 2, 8, 8))
    model = convert_model(weights, spec, ONES, dtype=np.float64)
    logits = forward(model, prepare_pixel_input(pixels, model, dtype=np.float64))
    npt.assert_allclose(logits, pixels.mean(axis=(2, 3)), atol=1e-10)


def test_class_permutation_permutes_logits():
    weights = random_spatial_weights(TINY, seed=19)
    rng = np.random.default_rng(20)
    pixels = rng.standard_normal((2, 1, 16, 16))
    base = spatial_forward(weights, pixels, TINY)
    perm = np.array([2, 0, 1])
    weights.tensors["fc.weight"] = weights.tensors["fc.weight"][perm]
    weights.tensors["fc.bias"] = weights.tensors["fc.bias"][perm]
    npt.assert_allclose(spatial_forward(weights, pixels, TINY), base[:, perm], atol=1e-12)


def test_budget_controls_fidelity():
    weights = random_spatial_weights(TINY, seed=21)
    rng = np.random.default_rng(22)
    pixels = rng.uniform(-1.0, 1.0, size=(6, 1, 16, 16))
    expected = spatial_forward(weights, pixels, TINY)
    diffs = {}
    for n in (1, 15):
        spec_n = dataclasses.replace(TINY, budget=FrequencyBudget(n))
        model = convert_model(weights, spec_n, ONES, dtype=np.float64)
        logits = forward(model, prepare_pixel_input(pixels, model, dtype=np.float64))
        diffs[n] = np.abs(logits - expected).max()
        if n == 15:
            assert np.array_equal(np.argmax(logits, axis=1), np.argmax(expected, axis=1))
    assert diffs[15] < 1e-8
    assert diffs[15] < diffs[1]


def test_prepare_pixel_input_shape_error():
    model = convert_model(random_spatial_weights(TINY, seed=23), TINY, ONES)
    with pytest.raises(ShapeMismatch):
        prepare_pixel_input(np.zeros((16, 16)), model)


def test_prepare_jpeg_input_is_exact_affine():
    spec = dataclasses.replace(TINY, num_classes=3)
    weights = random_spatial_weights(spec, seed=24, normalization=(128.0, 1 / 128.0))
    model = convert_model(weights, spec, ONES, dtype=np.float64)
    rng = np.random.default_rng(25)
    pixels = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
    pair = build_transform_pair(PlaneGeometry(16, 16), ONES)
    # the entropy decoder hands over coefficients of level-shifted pixels
    shifted = encode_plane(pixels - 128.0, pair, round=False)
    ct = CoefficientTensor(DenseTensor(shifted.reshape(1, 1, 2, 2, 64)), ONES)
    prepared = prepare_jpeg_input(ct, model, dtype=np.float64)
    npt.assert_allclose(decode_batch(prepared)[0, 0], (pixels - 128.0) / 128.0, atol=1e-10)

    # a mean different from the level shift exercises the DC correction
    shifted_weights = random_spatial_weights(spec, seed=24, normalization=(100.0, 0.5))
    shifted_model = convert_model(shifted_weights, spec, ONES, dtype=np.float64)
    prepared = prepare_jpeg_input(ct, shifted_model, dtype=np.float64)
    npt.assert_allclose(decode_batch(prepared)[0, 0], (pixels - 100.0) * 0.5, atol=1e-10)


def test_prepare_jpeg_input_rejects_table_mismatch():
    model = convert_model(random_spatial_weights(TINY, seed=26), TINY, ONES)
    ct = CoefficientTensor(DenseTensor(np.zeros((1, 1, 2, 2, 64))), QuantTable.builtin("luma"))
    with pytest.raises(QuantMismatch):
        prepare_jpeg_input(ct, model)
