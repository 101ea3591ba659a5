import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sparsekit.errors import InvariantError, ParameterError, ShapeError
from sparsekit.tensor import (
    PER_CHANNEL,
    PER_TENSOR,
    BalancedWeight,
    CsrWeight,
    QuantParams,
    balanced_topk,
    check_dense,
    csr_from_dense,
    dense_from_balanced,
    dense_from_csr,
    density,
    dequantize,
    quant_params,
    quantize,
    quantize_weight,
    sparsity_factor,
)

small_f32 = hnp.arrays(
    np.float32,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
    elements=st.sampled_from([0.0, 0.0, 1.0, -2.5, 0.125, 3.0, -0.001]),
)


# --- csr -----------------------------------------------------------------------------


def test_csr_hand_example():
    w = csr_from_dense(np.array([[0, 5], [0, 0]], dtype=np.float32))
    assert w.row_ptr.tolist() == [0, 1, 1]
    assert w.col_idx.tolist() == [1]
    assert w.values.tolist() == [5.0]


def test_identity_density():
    w = csr_from_dense(np.eye(4, dtype=np.float32))
    assert w.nnz == 4
    assert density(w) == 0.25
    assert np.array_equal(dense_from_csr(w), np.eye(4, dtype=np.float32))


def test_empty_csr_reconstructs_zeros():
    w = CsrWeight(3, 3, [0, 0, 0, 0], [], np.array([], dtype=np.float32))
    assert np.array_equal(dense_from_csr(w), np.zeros((3, 3), np.float32))


@pytest.mark.parametrize("n", [8, 16])
def test_roundtrip_seeded(rng, n):
    m = rng.standard_normal((n, n)).astype(np.float32)
    m[rng.random((n, n)) < 0.5] = 0
    back = dense_from_csr(csr_from_dense(m))
    assert back.dtype == np.float32 and back.tobytes() == m.tobytes()


def test_zero_tol_drops_small_entries():
    m = np.array([[0.0625, -0.25], [0.125, 0.5]], dtype=np.float32)
    w = csr_from_dense(m, zero_tol=0.125)
    assert w.nnz == 2
    assert dense_from_csr(w).tolist() == [[0, -0.25], [0, 0.5]]


def test_csr_rejects_non_2d():
    with pytest.raises(ShapeError):
        csr_from_dense(np.zeros(4, np.float32))


@pytest.mark.parametrize(
    "row_ptr, col_idx, values",
    [
        ([0, 2, 1], [0, 1], [1, 2]),  # decreasing row_ptr
        ([1, 1, 2], [0, 1], [1, 2]),  # row_ptr[0] != 0
        ([0, 2, 2], [1, 0], [1, 2]),  # columns not increasing
        ([0, 1, 2], [0, 5], [1, 2]),  # column out of range
        ([0, 1, 2], [0, 1], [1, 0]),  # stored zero
        ([0, 1, 3], [0, 1], [1, 2]),  # nnz disagreement
    ],
)
def test_csr_invariants_enforced(row_ptr, col_idx, values):
    with pytest.raises(InvariantError):
        CsrWeight(2, 2, row_ptr, col_idx, np.array(values, dtype=np.float32))


def test_csr_arrays_are_read_only():
    w = csr_from_dense(np.eye(3, dtype=np.float32))
    with pytest.raises(ValueError):
        w.values[0] = 7


@settings(max_examples=200, deadline=None)
@given(small_f32)
def test_roundtrip_property(m):
    w = csr_from_dense(m)
    w.validate()
    assert dense_from_csr(w).tobytes() == m.tobytes()
    f = sparsity_factor(w)
    assert f >= 1
    assert (f == 1) == bool(np.all(m != 0))


# --- balanced ------------------------------------------------------------------------


def test_balanced_keeps_largest():
    w = balanced_topk(np.array([[1, -3, 2, 0.5]], dtype=np.float32), 2)
    assert w.col_idx.tolist() == [[1, 2]]
    assert w.values.tolist() == [[-3, 2]]


def test_balanced_tie_goes_to_lower_column():
    w = balanced_topk(np.array([[1, -1, 1, 0]], dtype=np.float32), 2)
    assert w.col_idx.tolist() == [[0, 1]]


def test_balanced_pads_with_zeros_at_smallest_unused_columns():
    w = balanced_topk(np.array([[0, 0, 4, 0, 0]], dtype=np.float32), 3)
    assert w.col_idx.tolist() == [[0, 1, 2]]
    assert w.values.tolist() == [[0, 0, 4]]


def test_balanced_full_k_is_lossless(rng):
    m = rng.standard_normal((5, 7)).astype(np.float32)
    assert np.array_equal(dense_from_balanced(balanced_topk(m, 7)), m)


@pytest.mark.parametrize("k", [0, 8])
def test_balanced_k_out_of_range(k):
    with pytest.raises(ParameterError):
        balanced_topk(np.ones((2, 7), np.float32), k)


@settings(max_examples=100, deadline=None)
@given(small_f32, st.data())
def test_balanced_property(m, data):
    k = data.draw(st.integers(1, m.shape[1]))
    w = balanced_topk(m, k)
    assert w.values.shape == (m.shape[0], k)
    back = dense_from_balanced(w)
    rows = np.arange(m.shape[0])[:, None]
    assert np.array_equal(back[rows, w.col_idx], m[rows, w.col_idx])
    # every dropped entry is no larger than every kept one in its row
    for i in range(m.shape[0]):
        kept = set(w.col_idx[i].tolist())
        dropped = [abs(m[i, j]) for j in range(m.shape[1]) if j not in kept]
        if dropped:
            assert max(dropped) <= min(abs(m[i, j]) for j in kept)


def test_balanced_density():
    w = BalancedWeight(2, 8, 2, [[0, 3], [1, 2]], np.ones((2, 2), np.float32))
    assert density(w) == 0.25


# --- quantization --------------------------------------------------------------------


def test_per_tensor_scale():
    p = quant_params(np.array([0.5, -1.27, 0.3], np.float32))
    assert p.mode == PER_TENSOR
    assert float(p.scales[0]) == pytest.approx(0.01, rel=1e-6)


def test_all_zero_scale_is_one():
    assert float(quant_params(np.zeros((3, 3), np.float32)).scales[0]) == 1.0


def test_per_channel_scales():
    p = quant_params(np.array([[1.27, 0], [0, 2.54]], np.float32), PER_CHANNEL)
    assert p.scales.tolist() == pytest.approx([0.01, 0.02], rel=1e-6)


def test_quantize_examples():
    p = QuantParams([0.01])
    assert quantize(np.array([0.0, 1.27, 2.0, -2.0], np.float32), p).tolist() == [0, 127, 127, -127]


def test_quantize_rounds_half_to_even():
    p = QuantParams([1.0])
    assert quantize(np.array([0.5, 1.5, 2.5, -0.5, -1.5], np.float32), p).tolist() == [0, 2, 2, 0, -2]


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1e-3, 10.0, allow_nan=False),
    hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-1, 1)),
)
def test_quantize_error_and_monotonicity(scale, unit):
    scale = float(np.float32(scale))
    v = np.sort((unit * 127 * scale).astype(np.float32))
    p = QuantParams([scale])
    q = quantize(v, p)
    assert np.all(np.diff(q.astype(int)) >= 0)
    err = np.abs(dequantize(q, p).astype(np.float64) - v)
    assert np.all(err <= scale / 2 * (1 + 1e-5))


def test_quant_params_invariants():
    with pytest.raises(ParameterError):
        QuantParams([0.0])
    with pytest.raises(ParameterError):
        QuantParams([1.0, 2.0], PER_TENSOR)
    with pytest.raises(ParameterError):
        QuantParams([1.0], zero_point=3)


def test_quantize_weight_keeps_format(rng):
    m = rng.standard_normal((6, 10)).astype(np.float32)
    m[rng.random(m.shape) < 0.6] = 0
    p = quant_params(m, PER_CHANNEL)
    cq = quantize_weight(csr_from_dense(m), p)
    bq = quantize_weight(balanced_topk(m, 4), p)
    assert isinstance(cq, CsrWeight) and cq.dtype == np.int8
    assert isinstance(bq, BalancedWeight) and bq.dtype == np.int8
    assert np.array_equal(dense_from_csr(cq), quantize(m, p))


def test_dense_invariants():
    check_dense(np.zeros((2, 2), np.int32))
    with pytest.raises(InvariantError):
        check_dense(np.array([-128], np.int8))
    with pytest.raises(ShapeError):
        check_dense(np.zeros((2, 2), np.float64))


def test_density_and_factor():
    assert density(np.ones((3, 3), np.float32)) == 1.0
    assert sparsity_factor(np.ones((3, 3), np.float32)) == 1.0
    m = np.zeros((16, 16), np.float32)
    m.flat[::32] = 1
    assert density(m) == 1 / 32 and sparsity_factor(csr_from_dense(m)) == 32
    assert sparsity_factor(np.zeros((2, 2), np.float32)) == math.inf
