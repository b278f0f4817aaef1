"""Deterministic dense numerics substrate.

Every routine here fixes not just *what* is computed but the floating-point
evaluation order, so that repeated runs (and independently written oracles
that follow the same order) agree bit for bit.  The one that matters most is
:func:`matmul`: ``out[i, j]`` is accumulated strictly in ascending ``k``,
which is what a naive triple loop does and what vendor BLAS does not.

Matrices are plain ``numpy.ndarray`` in float32 or float64.  Mixing the two
in one call is an error rather than a silent promotion.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ContractViolation",
    "ConfigError",
    "PRECISIONS",
    "resolve_dtype",
    "precision_name",
    "as_matrix",
    "require_finite",
    "matmul",
    "relu",
    "row_l2_norm",
    "softmax_rows",
    "SeededRng",
]


class ContractViolation(ValueError):
    """An operand violated a shape/dtype/domain precondition."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


PRECISIONS = {"f32": np.float32, "f64": np.float64}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

# Row-block sizing for matmul: target ~1 MiB of accumulator per block, and
# keep blocks small enough that strided column reads of the left operand
# stay cache-resident once the inner dimension gets long.
_BLOCK_TARGET_BYTES = 1 << 20
_STRIDED_INNER_LIMIT = 2048
_STRIDED_BLOCK_CAP = 256


def resolve_dtype(precision):
    """Map 'f32'/'f64' (or an accepted numpy dtype) to the numpy dtype."""
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ConfigError(f"unknown precision {precision!r}; expected 'f32' or 'f64'") from None
    dt = np.dtype(precision)
    if dt not in _NAMES:
        raise ConfigError(f"unsupported dtype {dt}; expected float32 or float64")
    return dt


def precision_name(arr: np.ndarray) -> str:
    """Inverse of :func:`resolve_dtype` for an array's dtype."""
    try:
        return _NAMES[arr.dtype]
    except KeyError:
        raise ContractViolation(f"unsupported dtype {arr.dtype}") from None


def _check_float(arr: np.ndarray, what: str) -> np.ndarray:
    if not isinstance(arr, np.ndarray):
        raise ContractViolation(f"{what} must be a numpy array, got {type(arr).__name__}")
    if arr.dtype not in _NAMES:
        raise ContractViolation(f"{what} must be float32 or float64, got dtype {arr.dtype}")
    return arr


def _check_2d(arr: np.ndarray, what: str) -> np.ndarray:
    _check_float(arr, what)
    if arr.ndim != 2:
        raise ContractViolation(f"{what} must be 2-D, got shape {arr.shape}")
    return arr


def _check_same_dtype(a: np.ndarray, b: np.ndarray) -> None:
    if a.dtype != b.dtype:
        raise ContractViolation(
            f"mixed precisions: {_NAMES[a.dtype]} vs {_NAMES[b.dtype]}; cast explicitly"
        )


def as_matrix(data, precision="f64") -> np.ndarray:
    """Build a validated 2-D matrix from nested sequences or an array.

    Elements must all be finite; this is the constructor used for anything
    coming from a config file or an input CSV.
    """
    dt = resolve_dtype(precision)
    arr = np.array(data, dtype=dt)
    if arr.ndim != 2:
        raise ContractViolation(f"matrix data must be 2-D, got shape {arr.shape}")
    require_finite(arr, "matrix data")
    return arr


def require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))
        raise ContractViolation(f"{what} contains non-finite element at index {tuple(bad[0])}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with per-element left-to-right accumulation.

    ``out[i, j] = ((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)`` in ascending k,
    exactly the order of the reference triple loop, so results are
    reproducible to the bit across runs, row subsets and block sizes.
    Internally the output rows are processed in blocks with one fused
    multiply buffer per block; blocking over rows does not touch the
    per-element order.
    """
    _check_2d(a, "matmul left operand")
    _check_2d(b, "matmul right operand")
    _check_same_dtype(a, b)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    n, inner = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=a.dtype)
    if inner == 0 or n == 0 or m == 0:
        return out
    if not b.flags.c_contiguous:
        b = np.ascontiguousarray(b)

    ib = _BLOCK_TARGET_BYTES // max(1, a.dtype.itemsize * m)
    if inner >= _STRIDED_INNER_LIMIT and not a.flags.f_contiguous:
        ib = min(ib, _STRIDED_BLOCK_CAP)
    ib = max(16, min(n, ib))

    tmp = np.empty((min(ib, n), m), dtype=a.dtype)
    for i0 in range(0, n, ib):
        i1 = min(i0 + ib, n)
        ab = a[i0:i1]
        ob = out[i0:i1]
        t = tmp[: i1 - i0]
        for k in range(inner):
            np.multiply(ab[:, k : k + 1], b[k], out=t)
            np.add(ob, t, out=ob)
    return out


def relu(m: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0), dtype preserved."""
    _check_float(m, "relu operand")
    return np.maximum(m, 0)


def row_l2_norm(m: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row; returns a 1-D vector of length rows(m)."""
    _check_2d(m, "row_l2_norm operand")
    return np.sqrt(np.sum(m * m, axis=1))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift so large logits cannot overflow."""
    _check_2d(m, "softmax_rows operand")
    shifted = m - np.max(m, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


class SeededRng:
    """Deterministic random source: ``numpy.random.Generator`` over PCG64.

    The PCG64 bit stream for a fixed seed is covered by numpy's stream
    compatibility guarantee, so the same seed yields the same weights on any
    platform.  All draws happen in float64 and are cast once at the end,
    which keeps f32 and f64 runs structurally identical.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, shape, low: float, high: float, precision="f64") -> np.ndarray:
        dt = resolve_dtype(precision)
        return self._gen.uniform(low, high, size=shape).astype(dt)

    def init_weight(self, fan_in: int, fan_out: int, precision="f64") -> np.ndarray:
        """Dense weight of shape (fan_in, fan_out), U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        if fan_in < 1 or fan_out < 1:
            raise ConfigError(f"weight dims must be >= 1, got ({fan_in}, {fan_out})")
        bound = 1.0 / float(np.sqrt(fan_in))
        return self.uniform((fan_in, fan_out), -bound, bound, precision)

    def tokens(self, n: int, d: int, precision="f64") -> np.ndarray:
        """Synthetic input rows, U(-1, 1)."""
        if n < 0 or d < 1:
            raise ConfigError(f"token matrix dims must be (n >= 0, d >= 1), got ({n}, {d})")
        return self.uniform((n, d), -1.0, 1.0, precision)
