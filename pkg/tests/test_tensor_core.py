import numpy as np
import numpy.testing as npt
import pytest

from jdrn.errors import RankError, ShapeMismatch
from jdrn.tensor_core import DenseTensor, contract, reshape


def test_wraps_row_major_float64_by_default():
    t = DenseTensor([[1, 2], [3, 4]])
    assert t.shape == (2, 2)
    assert t.dtype == np.float64
    assert t.rank == 2


def test_scalar_promoted_to_rank_one():
    t = DenseTensor(3.5)
    assert t.shape == (1,)


def test_float32_selectable():
    t = DenseTensor(np.arange(6).reshape(2, 3), dtype=np.float32)
    assert t.dtype == np.float32


def test_rejects_non_float_dtype():
    with pytest.raises(ShapeMismatch):
        DenseTensor([1, 2, 3], dtype=np.int64)


def test_rejects_empty():
    with pytest.raises(ShapeMismatch):
        DenseTensor(np.zeros((2, 0)))


def test_data_is_read_only():
    t = DenseTensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_contract_identity_map():
    ident = DenseTensor(np.eye(3))
    v = DenseTensor([1.0, -2.0, 0.5])
    npt.assert_array_equal(contract(ident, v, [(1, 0)]).data, v.data)


def test_contract_all_ones():
    ones = DenseTensor(np.ones((2, 2)))
    out = contract(ones, ones, [(1, 0)])
    npt.assert_array_equal(out.data, np.full((2, 2), 2.0))


def test_contract_free_axis_order():
    a = DenseTensor(np.arange(24, dtype=np.float64).reshape(2, 3, 4))
    b = DenseTensor(np.arange(20, dtype=np.float64).reshape(4, 5))
    out = contract(a, b, [(2, 0)])
    assert out.shape == (2, 3, 5)
    npt.assert_allclose(out.data, np.einsum("ijk,kl->ijl", a.data, b.data))


def test_contract_multiple_pairs():
    rng = np.random.default_rng(0)
    a = DenseTensor(rng.standard_normal((3, 4, 5)))
    b = DenseTensor(rng.standard_normal((4, 6, 3)))
    out = contract(a, b, [(0, 2), (1, 0)])
    npt.assert_allclose(out.data, np.einsum("ijk,jli->kl", a.data, b.data), atol=1e-12)


def test_contract_empty_pairing_is_outer_product():
    a = DenseTensor([1.0, 2.0])
    b = DenseTensor([3.0, 4.0, 5.0])
    out = contract(a, b, [])
    npt.assert_array_equal(out.data, np.outer([1, 2], [3, 4, 5]))


def test_contract_extent_mismatch():
    a = DenseTensor(np.ones((2, 3)))
    b = DenseTensor(np.ones((4, 2)))
    with pytest.raises(ShapeMismatch):
        contract(a, b, [(1, 0)])


def test_contract_axis_out_of_range():
    a = DenseTensor(np.ones((2, 2)))
    with pytest.raises(RankError):
        contract(a, a, [(2, 0)])
    with pytest.raises(RankError):
        contract(a, a, [(0, -1)])


def test_contract_repeated_axis_rejected():
    a = DenseTensor(np.ones((2, 2)))
    with pytest.raises(RankError):
        contract(a, a, [(0, 0), (0, 1)])


def test_contract_promotes_precision():
    a = DenseTensor(np.ones((2, 2)), dtype=np.float32)
    b = DenseTensor(np.ones((2, 2)), dtype=np.float64)
    assert contract(a, b, [(1, 0)]).dtype == np.float64


def test_contract_bilinear_float64():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((4, 5))
    c = rng.standard_normal((5, 3))
    alpha = 0.7
    lhs = contract(DenseTensor(alpha * a + b), DenseTensor(c), [(1, 0)]).data
    rhs = alpha * contract(DenseTensor(a), DenseTensor(c), [(1, 0)]).data \
        + contract(DenseTensor(b), DenseTensor(c), [(1, 0)]).data
    npt.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_contract_bilinear_float32():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((8, 8)).astype(np.float32)
    b = rng.standard_normal((8, 8)).astype(np.float32)
    c = rng.standard_normal((8, 8)).astype(np.float32)
    lhs = contract(DenseTensor(a + b, dtype=np.float32), DenseTensor(c, dtype=np.float32), [(1, 0)]).data
    rhs = contract(DenseTensor(a, dtype=np.float32), DenseTensor(c, dtype=np.float32), [(1, 0)]).data \
        + contract(DenseTensor(b, dtype=np.float32), DenseTensor(c, dtype=np.float32), [(1, 0)]).data
    npt.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-6)


def test_reshape_row_major_reinterpretation():
    t = DenseTensor(np.arange(24, dtype=np.float64).reshape(2, 3, 4))
    r = reshape(t, (4, 6))
    npt.assert_array_equal(r.data.ravel(), t.data.ravel())


def test_reshape_round_trip_bit_identical():
    rng = np.random.default_rng(3)
    t = DenseTensor(rng.standard_normal((4, 4, 64, 32)))
    back = reshape(reshape(t, (1024, 32)), t.shape)
    assert back.data.tobytes() == t.data.tobytes()


def test_reshape_noop_bit_identical():
    t = DenseTensor(np.arange(8, dtype=np.float64))
    assert reshape(t, t.shape).data.tobytes() == t.data.tobytes()


def test_reshape_count_mismatch():
    t = DenseTensor(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        reshape(t, (4, 2))


def test_reshape_rejects_zero_extent():
    t = DenseTensor(np.ones(4))
    with pytest.raises(ShapeMismatch):
        reshape(t, (0, 4))
