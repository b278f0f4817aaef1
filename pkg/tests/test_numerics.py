import numpy as np
import pytest

import dydila.numerics as numerics
from dydila.numerics import (
    ContractViolation,
    ConfigError,
    SeededRng,
    as_matrix,
    matmul,
    relu,
    row_l2_norm,
    softmax_rows,
)
from dydila.oracle import naive_matmul

from conftest import assert_close, mat


class TestMatmul:
    def test_hand_example(self):
        a = as_matrix([[1.0, 2.0], [3.0, 4.0]])
        b = as_matrix([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    def test_identity(self):
        a = mat(0, 13, 13)
        assert np.array_equal(matmul(a, np.eye(13)), a)

    @pytest.mark.parametrize("shape", [(1, 1, 1), (2, 3, 4), (17, 5, 9), (64, 64, 8), (3, 128, 2)])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bit_exact_vs_triple_loop(self, shape, seed):
        n, inner, m = shape
        a = mat(seed, n, inner)
        b = mat(seed + 100, inner, m)
        assert np.array_equal(matmul(a, b), naive_matmul(a, b)), (
            "blocked matmul must reproduce ascending-k accumulation bit for bit"
        )

    def test_block_size_invariance(self, monkeypatch):
        # row blocking is a performance knob: any block size gives identical bits
        a = mat(7, 500, 48)
        b = mat(8, 48, 600)
        want = matmul(a, b)
        for target in (1, 1024, 1 << 14, 1 << 22):
            monkeypatch.setattr(numerics, "_BLOCK_TARGET_BYTES", target)
            assert np.array_equal(matmul(a, b), want)

    def test_transposed_view_operand(self):
        a = mat(3, 40, 24)
        assert np.array_equal(matmul(a.T, a), naive_matmul(np.ascontiguousarray(a.T), a))

    def test_associativity_within_tolerance(self):
        a, b, c = mat(1, 48, 32), mat(2, 32, 40), mat(3, 40, 16)
        assert_close(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), 1e-10, "associativity")

    def test_empty_inner(self):
        a = np.zeros((3, 0))
        b = np.zeros((0, 4))
        assert np.array_equal(matmul(a, b), np.zeros((3, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation, match="shape mismatch"):
            matmul(mat(0, 3, 4), mat(0, 5, 2))

    def test_mixed_precision_rejected(self):
        with pytest.raises(ContractViolation, match="mixed precisions"):
            matmul(mat(0, 3, 4), mat(0, 4, 2, precision="f32"))

    def test_non_2d_rejected(self):
        with pytest.raises(ContractViolation, match="2-D"):
            matmul(np.zeros(3), np.zeros((3, 2)))

    def test_f32_stays_f32(self):
        out = matmul(mat(0, 4, 4, "f32"), mat(1, 4, 4, "f32"))
        assert out.dtype == np.float32


class TestElementwise:
    def test_relu_hand(self):
        m = as_matrix([[-1.0, 0.0, 2.5], [3.0, -0.5, 0.0]])
        assert np.array_equal(relu(m), [[0.0, 0.0, 2.5], [3.0, 0.0, 0.0]])

    def test_relu_nonnegative_unchanged(self):
        m = np.abs(mat(5, 6, 6))
        assert np.array_equal(relu(m), m)

    def test_row_l2_norm_hand(self):
        m = as_matrix([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0], [3.0, 4.0, 0.0, 0.0]])
        assert np.array_equal(row_l2_norm(m), [2.0, 0.0, 5.0])

    def test_softmax_uniform(self):
        out = softmax_rows(as_matrix([[1000.0, 1000.0]]))
        assert np.array_equal(out, [[0.5, 0.5]])

    def test_softmax_log_weights(self):
        out = softmax_rows(as_matrix([[0.0, float(np.log(3.0))]]))
        assert_close(out, [[0.25, 0.75]], 1e-15, "softmax of (0, ln 3)")

    def test_softmax_rows_normalized(self):
        m = mat(9, 32, 17, low=-50.0, high=50.0)
        out = softmax_rows(m)
        assert np.all(out >= 0) and np.all(out <= 1)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-12

    def test_softmax_no_overflow_at_extreme_logits(self):
        out = softmax_rows(as_matrix([[700.0, 710.0, 0.0]]))
        assert np.all(np.isfinite(out))


class TestSeededRng:
    def test_reproducible(self):
        a = SeededRng(42).uniform((5, 5), -1, 1)
        b = SeededRng(42).uniform((5, 5), -1, 1)
        assert np.array_equal(a, b)

    def test_seeds_differ(self):
        assert not np.array_equal(
            SeededRng(0).uniform((5, 5), -1, 1), SeededRng(1).uniform((5, 5), -1, 1)
        )

    def test_weight_bounds(self):
        w = SeededRng(3).init_weight(64, 16)
        bound = 1.0 / np.sqrt(64)
        assert w.shape == (64, 16)
        assert np.all(np.abs(w) <= bound)

    def test_f32_cast_of_f64_stream(self):
        w64 = SeededRng(5).init_weight(8, 8, "f64")
        w32 = SeededRng(5).init_weight(8, 8, "f32")
        assert np.array_equal(w32, w64.astype(np.float32))

    @pytest.mark.parametrize("bad", [-1, 1.5, True, "x"])
    def test_bad_seed(self, bad):
        with pytest.raises(ConfigError):
            SeededRng(bad)


class TestValidation:
    def test_as_matrix_rejects_nonfinite(self):
        with pytest.raises(ContractViolation, match="non-finite"):
            as_matrix([[1.0, float("inf")]])

    def test_as_matrix_rejects_1d(self):
        with pytest.raises(ContractViolation, match="2-D"):
            as_matrix([1.0, 2.0])

    def test_unknown_precision(self):
        with pytest.raises(ConfigError, match="precision"):
            as_matrix([[1.0]], precision="f16")
