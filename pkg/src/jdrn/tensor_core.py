"""Dense multi-dimensional arrays with generalized index contraction.

Everything else in the package is built from two operations on row-major
dense tensors: ``contract`` (a sum over paired axes, i.e. an Einstein
summation with explicit pairing) and ``reshape`` (row-major
reinterpretation). Storage is delegated to numpy; ``contract`` delegates
to ``numpy.tensordot`` so large contractions hit BLAS.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import RankError, ShapeMismatch

_ALLOWED_DTYPES = (np.float32, np.float64)


class DenseTensor:
    """Immutable dense tensor: a shape and row-major float32/float64 data.

    The wrapped array is exposed read-only through ``.data``. Construction
    does not copy when the input is already a contiguous array of the
    requested dtype, so wrapping large precomputed maps is free.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype=np.float64):
        dtype = np.dtype(dtype)
        if dtype.type not in _ALLOWED_DTYPES:
            raise ShapeMismatch(f"element type must be float32 or float64, got {dtype}")
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim < 1:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeMismatch("all extents must be >= 1")
        view = arr.view()
        view.flags.writeable = False
        self._data = view

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def size(self) -> int:
        return self._data.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self):
        return f"DenseTensor(shape={self.shape}, dtype={self.dtype})"


def _check_pairing(a: DenseTensor, b: DenseTensor, pairing) -> tuple[list[int], list[int]]:
    ax_a, ax_b = [], []
    for axis_a, axis_b in pairing:
        if not (0 <= axis_a < a.rank):
            raise RankError(f"axis {axis_a} out of range for rank-{a.rank} tensor")
        if not (0 <= axis_b < b.rank):
            raise RankError(f"axis {axis_b} out of range for rank-{b.rank} tensor")
        if axis_a in ax_a or axis_b in ax_b:
            raise RankError("an axis appears twice in the pairing")
        if a.shape[axis_a] != b.shape[axis_b]:
            raise ShapeMismatch(
                f"paired extents differ: a.shape[{axis_a}]={a.shape[axis_a]} "
                f"vs b.shape[{axis_b}]={b.shape[axis_b]}"
            )
        ax_a.append(axis_a)
        ax_b.append(axis_b)
    return ax_a, ax_b


def contract(a: DenseTensor, b: DenseTensor, pairing: Sequence[tuple[int, int]]) -> DenseTensor:
    """Sum-of-products over paired axes.

    Result shape is the free axes of ``a`` (in order) followed by the free
    axes of ``b`` (in order). An empty pairing yields the outer product.
    """
    ax_a, ax_b = _check_pairing(a, b, pairing)
    out = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    dtype = np.result_type(a.dtype, b.dtype)
    return DenseTensor(out, dtype=dtype)


def reshape(a: DenseTensor, new_shape: Sequence[int]) -> DenseTensor:
    """Row-major reinterpretation; no element is moved or reordered."""
    new_shape = tuple(int(e) for e in new_shape)
    if any(e < 1 for e in new_shape):
        raise ShapeMismatch("all extents must be >= 1")
    if int(np.prod(new_shape)) != a.size:
        raise ShapeMismatch(f"cannot reshape {a.shape} ({a.size} elements) to {new_shape}")
    return DenseTensor(a.data.reshape(new_shape), dtype=a.dtype)
