"""Slow, explicit reference implementations and the comparison report.

Everything here is written for obviousness, not speed: per-token Python
loops, explicit n x n similarity maps, naive triple-loop matrix products.
All oracle arithmetic runs in float64 regardless of the candidate's
precision.  To keep accidental quadratic blowups out of test runs, the
explicit-map oracles refuse token counts above :data:`ORACLE_CAP`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractViolation
from .routing import Router

__all__ = [
    "ORACLE_CAP",
    "OracleCapError",
    "OracleReport",
    "compare",
    "naive_matmul",
    "naive_focused_row",
    "explicit_routes",
    "explicit_linear_attention",
    "explicit_tdo",
    "explicit_mapwise",
    "explicit_dwc",
    "per_token_projection",
    "per_token_kernel",
    "per_token_lambdas",
    "pipeline_oracle",
]

ORACLE_CAP = 256

# Scale floor when turning an absolute error into a relative one; also the
# absolute error under which a comparison passes outright (an all-zero
# reference has no meaningful scale).
_SCALE_FLOOR = 1e-30
_DENOM_FLOOR = 1e-6  # mirrors the production normalizer contract


class OracleCapError(RuntimeError):
    """Refusal to run an explicit-map oracle past the desk-scale cap."""


def _cap(n: int, what: str) -> None:
    if n > ORACLE_CAP:
        raise OracleCapError(f"{what} oracle capped at {ORACLE_CAP} tokens, got {n}")


@dataclass(frozen=True)
class OracleReport:
    """Outcome of one reference-vs-candidate comparison."""

    max_abs_error: float
    max_rel_error: float
    tolerance: float
    passed: bool
    mismatch_location: tuple | None
    shape: tuple

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        loc = "" if self.mismatch_location is None else f" worst at {self.mismatch_location}"
        return (
            f"{state}: max_abs={self.max_abs_error:.3e} "
            f"max_rel={self.max_rel_error:.3e} tol={self.tolerance:.1e}{loc}"
        )


def compare(reference: np.ndarray, candidate: np.ndarray, tolerance: float) -> OracleReport:
    """Compare a candidate against a reference at a relative tolerance.

    The relative error is normwise: max|ref - cand| divided by the largest
    reference magnitude (floored at 1e-30 so an all-zero reference does not
    divide by zero).  Elementwise relation would be meaningless here, since
    differential outputs legitimately pass through zero.  A comparison also
    passes outright when the absolute error itself is below 1e-30.
    ``mismatch_location`` points at the largest absolute deviation and is
    set only on failure.
    """
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ContractViolation(f"compare shape mismatch: {ref.shape} vs {cand.shape}")
    if tolerance < 0:
        raise ContractViolation(f"tolerance must be >= 0, got {tolerance}")

    diff = np.abs(ref - cand)
    max_abs = float(np.max(diff)) if diff.size else 0.0
    scale = max(float(np.max(np.abs(ref))) if ref.size else 0.0, _SCALE_FLOOR)
    max_rel = max_abs / scale
    passed = max_abs <= _SCALE_FLOOR or max_rel <= tolerance
    location = None
    if not passed:
        location = tuple(int(i) for i in np.unravel_index(int(np.argmax(diff)), diff.shape))
    return OracleReport(
        max_abs_error=max_abs,
        max_rel_error=max_rel,
        tolerance=float(tolerance),
        passed=passed,
        mismatch_location=location,
        shape=ref.shape,
    )


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product, ascending k, float64 Python scalars.

    This is the order the production matmul promises to reproduce bit for
    bit (for float64 operands).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"naive_matmul shape mismatch: {a.shape} @ {b.shape}")
    n, inner = a.shape
    m = b.shape[1]
    for dim in (n, inner, m):
        _cap(dim, "naive_matmul")
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(inner):
                s += float(a[i, k]) * float(b[k, j])
            out[i, j] = s
    return out


def naive_focused_row(row: np.ndarray, gamma: float) -> np.ndarray:
    """Textbook focused map of one row: relu^gamma renormalized to the relu norm.

    Deliberately has no max-rescaling trick, so it is arithmetically
    independent of the production kernel.
    """
    r = np.maximum(np.asarray(row, dtype=np.float64), 0.0)
    n1 = float(np.sqrt(np.sum(r * r)))
    if n1 == 0.0:
        return np.zeros_like(r)
    rg = r ** float(gamma)
    ng = float(np.sqrt(np.sum(rg * rg)))
    return rg * (n1 / ng)


def explicit_routes(tokens: np.ndarray, router: Router) -> np.ndarray:
    """Per-token argmax routing via Python max (first maximal index on ties)."""
    w = np.asarray(router.weights, dtype=np.float64)
    idx = np.empty(tokens.shape[0], dtype=np.int64)
    for i in range(tokens.shape[0]):
        logits = [float(np.dot(np.asarray(tokens[i], dtype=np.float64), w[:, c]))
                  for c in range(w.shape[1])]
        idx[i] = max(range(len(logits)), key=lambda c: (logits[c], -c))
    return idx


def _phi(z: np.ndarray, kernel: str, gamma) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if kernel == "relu":
        return np.maximum(z, 0.0)
    rows = [naive_focused_row(z[i], gamma) for i in range(z.shape[0])]
    return np.stack(rows) if rows else np.zeros_like(z)


def explicit_linear_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, kernel: str = "relu", gamma=None
) -> np.ndarray:
    """Linear attention through the explicit n x n kernel similarity map."""
    _cap(q.shape[0], "explicit_linear_attention")
    _cap(k.shape[0], "explicit_linear_attention")
    phi_q, phi_k = _phi(q, kernel, gamma), _phi(k, kernel, gamma)
    v = np.asarray(v, dtype=np.float64)
    n, nk = phi_q.shape[0], phi_k.shape[0]
    out = np.zeros((n, v.shape[1]), dtype=np.float64)
    for i in range(n):
        den = 0.0
        num = np.zeros(v.shape[1], dtype=np.float64)
        for j in range(nk):
            s = float(np.dot(phi_q[i], phi_k[j]))
            den += s
            num += s * v[j]
        if abs(den) < _DENOM_FLOOR:
            den = _DENOM_FLOOR if den >= 0 else -_DENOM_FLOOR
        out[i] = num / den
    return out


def explicit_tdo(
    q_t, q_routed, k_t, k_routed, v, lambda_q, lambda_k, normalize: bool = False
) -> np.ndarray:
    """Token-wise differential attention through the explicit n x n map."""
    n = np.asarray(q_t).shape[0]
    _cap(n, "explicit_tdo")
    _cap(np.asarray(k_t).shape[0], "explicit_tdo")
    q_t, q_routed, k_t, k_routed, v, lam_q, lam_k = (
        np.asarray(m, dtype=np.float64)
        for m in (q_t, q_routed, k_t, k_routed, v, lambda_q, lambda_k)
    )
    nk = k_t.shape[0]
    out = np.zeros((n, v.shape[1]), dtype=np.float64)
    for i in range(n):
        qd = q_t[i] - lam_q[i] * q_routed[i]
        den = 0.0
        num = np.zeros(v.shape[1], dtype=np.float64)
        for j in range(nk):
            kd = k_t[j] - lam_k[j] * k_routed[j]
            s = float(np.dot(qd, kd))
            den += s
            num += s * v[j]
        if normalize:
            if abs(den) < _DENOM_FLOOR:
                den = _DENOM_FLOOR if den >= 0 else -_DENOM_FLOOR
            out[i] = num / den
        else:
            out[i] = num
    return out


def explicit_mapwise(q_t, q_routed, k_t, k_routed, v, lambda_map) -> np.ndarray:
    """Map-wise differential attention through two explicit n x n maps."""
    n = np.asarray(q_t).shape[0]
    _cap(n, "explicit_mapwise")
    q_t, q_routed, k_t, k_routed, v, lam = (
        np.asarray(m, dtype=np.float64)
        for m in (q_t, q_routed, k_t, k_routed, v, lambda_map)
    )
    out = np.zeros((n, v.shape[1]), dtype=np.float64)
    for i in range(n):
        shared = np.zeros(v.shape[1], dtype=np.float64)
        routed = np.zeros(v.shape[1], dtype=np.float64)
        for j in range(k_t.shape[0]):
            shared += float(np.dot(q_t[i], k_t[j])) * v[j]
            routed += float(np.dot(q_routed[i], k_routed[j])) * v[j]
        out[i] = shared - lam[i] * routed
    return out


def explicit_dwc(v, grid, kernels, identity_branch: bool) -> np.ndarray:
    """Depthwise 3x3 cross-correlation with explicit Python loops and zero pad."""
    v = np.asarray(v, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    h, w = grid
    n, d = v.shape
    _cap(n, "explicit_dwc")
    if h * w != n:
        raise ContractViolation(f"grid {h}x{w} does not tile {n} tokens")
    img = v.reshape(h, w, d)
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            for c in range(d):
                s = 0.0
                for di in range(3):
                    for dj in range(3):
                        yy, xx = y + di - 1, x + dj - 1
                        if 0 <= yy < h and 0 <= xx < w:
                            s += float(img[yy, xx, c]) * float(kernels[c, di, dj])
                if identity_branch:
                    s += float(img[y, x, c])
                out[y, x, c] = s
    return out.reshape(n, d)


def per_token_projection(x: np.ndarray, bank) -> tuple:
    """Per-token oracle of the dynamic projection: route then project each row.

    Returns (q, k, v, q_routed, k_routed, idx_q, idx_k), all float64.
    """
    x64 = np.asarray(x, dtype=np.float64)
    n, d = x64.shape
    _cap(n, "per_token_projection")
    idx_q = explicit_routes(x64, bank.router_q)
    idx_k = explicit_routes(x64, bank.router_k)
    q = np.zeros((n, d)); k = np.zeros((n, d)); v = np.zeros((n, d))
    qr = np.zeros((n, d)); kr = np.zeros((n, d))
    for i in range(n):
        row = x64[i : i + 1]
        q[i] = naive_matmul(row, np.asarray(bank.w_q0, dtype=np.float64))[0]
        k[i] = naive_matmul(row, np.asarray(bank.w_k0, dtype=np.float64))[0]
        v[i] = naive_matmul(row, np.asarray(bank.w_v0, dtype=np.float64))[0]
        qr[i] = naive_matmul(row, np.asarray(bank.w_q[idx_q[i]], dtype=np.float64))[0]
        kr[i] = naive_matmul(row, np.asarray(bank.w_k[idx_k[i]], dtype=np.float64))[0]
    return q, k, v, qr, kr, idx_q, idx_k


def per_token_kernel(z: np.ndarray, bank) -> tuple:
    """Per-token oracle of the routed focused kernel; returns (out, idx)."""
    z64 = np.asarray(z, dtype=np.float64)
    _cap(z64.shape[0], "per_token_kernel")
    idx = explicit_routes(z64, bank.router)
    out = np.zeros_like(z64)
    for i in range(z64.shape[0]):
        out[i] = naive_focused_row(z64[i], bank.gammas[idx[i]])
    return out, idx


def per_token_lambdas(pairs: np.ndarray, router: Router, lambdas) -> np.ndarray:
    """Per-token oracle of lambda routing on concatenated stream rows."""
    pairs64 = np.asarray(pairs, dtype=np.float64)
    _cap(pairs64.shape[0], "per_token_lambdas")
    idx = explicit_routes(pairs64, router)
    return np.array([float(lambdas[i]) for i in idx], dtype=np.float64)


def pipeline_oracle(x: np.ndarray, params) -> np.ndarray:
    """Composed stage-by-stage oracle of one full attention block.

    Chains the per-token projection, kernel and lambda oracles into the
    explicit differential map (token- or map-wise, honoring normalize),
    concatenates heads, and adds the looped depthwise convolution.  Always
    float64.
    """
    x64 = np.asarray(x, dtype=np.float64)
    n = x64.shape[0]
    _cap(n, "pipeline_oracle")
    q, k, v, qr, kr, _, _ = per_token_projection(x, params.proj)
    d_h = params.head_dim
    pieces = []
    for h_idx, hp in enumerate(params.head_params):
        sl = slice(h_idx * d_h, (h_idx + 1) * d_h)
        q_t, _ = per_token_kernel(q[:, sl], hp.kernel_q)
        k_t, _ = per_token_kernel(k[:, sl], hp.kernel_k)
        qp_t, _ = per_token_kernel(qr[:, sl], hp.kernel_qp)
        kp_t, _ = per_token_kernel(kr[:, sl], hp.kernel_kp)
        v_h = v[:, sl]
        if params.variant == "token-wise":
            lam_q = per_token_lambdas(np.hstack((q_t, qp_t)), hp.diff.router_q, hp.diff.lambdas)
            lam_k = per_token_lambdas(np.hstack((k_t, kp_t)), hp.diff.router_k, hp.diff.lambdas)
            pieces.append(
                explicit_tdo(q_t, qp_t, k_t, kp_t, v_h, lam_q, lam_k, normalize=params.normalize)
            )
        else:
            lam_map = per_token_lambdas(
                np.hstack((q_t, qp_t)), hp.diff.lambda_map_router, hp.diff.lambdas
            )
            pieces.append(explicit_mapwise(q_t, qp_t, k_t, kp_t, v_h, lam_map))
    out = np.hstack(pieces)
    if params.dwc is not None:
        if params.dwc_use_merged:
            out = out + explicit_dwc(v, params.grid, params.dwc.merged, identity_branch=False)
        else:
            out = out + explicit_dwc(
                v, params.grid, params.dwc.kernels, identity_branch=params.dwc.identity_branch
            )
    return out
