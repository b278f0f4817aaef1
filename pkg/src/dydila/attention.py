"""Attention blocks: baselines, the differential pipeline, DWC, and stacks.

The full block is

    out = TDO(kernelized routed projections of x) + DWC(v)

where TDO is the token (or map) differential operator and DWC is a 3x3
depthwise convolution over the token grid that restores local detail.  The
convolution carries an optional identity branch that can be merged into the
kernel (one weight edit at the center tap) for inference.

Multi-head runs the TDO path on channel slices with per-head kernel and
differential banks; the depthwise convolution always sees the full-width V.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .differential import (
    DifferentialBank,
    _routed_lambdas,
    concat_streams,
    mapwise_forward,
    tdo_forward,
    _floor_denominator,
)
from .kernels import KernelBank, dmk_forward, focused_rows
from .numerics import ConfigError, ContractViolation, _check_2d, matmul, relu, softmax_rows
from .projection import ProjectorBank, dpm_forward, project_shared
from .routing import RouteAssignment

__all__ = [
    "DwcParams",
    "HeadParams",
    "DydilaParams",
    "AttentionStack",
    "HeadDiagnostics",
    "BlockDiagnostics",
    "VARIANTS",
    "softmax_attention",
    "linear_attention",
    "dwc_forward",
    "reparam_merge",
    "dydila_forward",
    "multihead_forward",
    "stack_forward",
    "extract_attention_row",
]

VARIANTS = ("token-wise", "map-wise")


@dataclass(frozen=True)
class DwcParams:
    """Depthwise 3x3 convolution: one kernel per channel, optional identity branch.

    `merged` (when present) must equal the branch kernel with the identity
    embedded at the center tap: running the merged kernel alone reproduces
    branch + identity up to rounding.
    """

    kernels: np.ndarray  # (d, 3, 3)
    identity_branch: bool = True
    merged: np.ndarray | None = None

    def __post_init__(self):
        k = self.kernels
        if not isinstance(k, np.ndarray) or k.ndim != 3 or k.shape[1:] != (3, 3):
            raise ConfigError(f"dwc kernels must be (d, 3, 3), got {getattr(k, 'shape', None)}")
        if self.merged is not None:
            if self.merged.shape != k.shape or self.merged.dtype != k.dtype:
                raise ConfigError("merged kernel must match branch kernel shape and dtype")
            if not np.array_equal(self.merged, _merge_kernels(k, self.identity_branch)):
                raise ConfigError("merged kernel is not branch + identity at the center tap")

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]


def _merge_kernels(kernels: np.ndarray, identity_branch: bool) -> np.ndarray:
    merged = kernels.copy()
    if identity_branch:
        merged[:, 1, 1] += np.asarray(1, dtype=kernels.dtype)
    return merged


def reparam_merge(dwc: DwcParams) -> DwcParams:
    """Fold the identity branch into the center tap; a pure re-parameterization."""
    return DwcParams(
        kernels=dwc.kernels,
        identity_branch=dwc.identity_branch,
        merged=_merge_kernels(dwc.kernels, dwc.identity_branch),
    )


def dwc_forward(
    v: np.ndarray, grid: tuple, dwc: DwcParams, use_merged: bool = False
) -> np.ndarray:
    """Depthwise 3x3 cross-correlation of v laid out on the (h, w) token grid.

    Zero padding of one pixel on every side; taps accumulate in fixed
    (row, col) ascending order.  The identity branch (if any and not
    merged) is added after the convolution.
    """
    _check_2d(v, "dwc input")
    h, w = grid
    n, d = v.shape
    if h < 1 or w < 1 or h * w != n:
        raise ContractViolation(f"grid {h}x{w} does not tile {n} tokens")
    if d != dwc.channels:
        raise ContractViolation(f"dwc has {dwc.channels} channels for width-{d} input")
    if dwc.kernels.dtype != v.dtype:
        raise ContractViolation(
            f"dwc kernel dtype {dwc.kernels.dtype} != input dtype {v.dtype}"
        )
    if use_merged:
        if dwc.merged is None:
            raise ConfigError("use_merged requires reparam_merge first")
        kern = dwc.merged
    else:
        kern = dwc.kernels

    img = v.reshape(h, w, d)
    padded = np.zeros((h + 2, w + 2, d), dtype=v.dtype)
    padded[1:-1, 1:-1] = img
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            np.add(out, padded[di : di + h, dj : dj + w] * kern[:, di, dj], out=out)
    if dwc.identity_branch and not use_merged:
        out = out + img
    return out.reshape(n, d)


@dataclass(frozen=True)
class HeadParams:
    """Per-head kernel banks for the four streams plus the differential bank."""

    kernel_q: KernelBank
    kernel_k: KernelBank
    kernel_qp: KernelBank
    kernel_kp: KernelBank
    diff: DifferentialBank

    def __post_init__(self):
        d = self.kernel_q.router.in_dim
        for name, bank in (
            ("kernel_k", self.kernel_k),
            ("kernel_qp", self.kernel_qp),
            ("kernel_kp", self.kernel_kp),
        ):
            if bank.router.in_dim != d:
                raise ConfigError(f"{name} router in_dim {bank.router.in_dim} != {d}")
        if self.diff.dim != d:
            raise ConfigError(f"differential bank dim {self.diff.dim} != head dim {d}")

    @property
    def dim(self) -> int:
        return self.kernel_q.router.in_dim


@dataclass(frozen=True)
class DydilaParams:
    """One attention block: projections, per-head banks, optional DWC, grid."""

    proj: ProjectorBank
    head_params: tuple
    grid: tuple
    dwc: DwcParams | None = None
    dwc_use_merged: bool = False
    variant: str = "token-wise"
    normalize: bool = False

    def __post_init__(self):
        d = self.proj.dim
        heads = len(self.head_params)
        if heads < 1:
            raise ConfigError("need at least one head")
        if d % heads != 0:
            raise ConfigError(f"model dim {d} not divisible by {heads} heads")
        d_h = d // heads
        for i, hp in enumerate(self.head_params):
            if hp.dim != d_h:
                raise ConfigError(f"head {i} dim {hp.dim} != {d_h} (= {d}/{heads})")
        if self.dwc is not None and self.dwc.channels != d:
            raise ConfigError(f"dwc channels {self.dwc.channels} != model dim {d}")
        if self.dwc_use_merged and (self.dwc is None or self.dwc.merged is None):
            raise ConfigError("dwc_use_merged requires a merged dwc kernel")
        h, w = self.grid
        if h < 1 or w < 1:
            raise ConfigError(f"grid sides must be >= 1, got {self.grid}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def dim(self) -> int:
        return self.proj.dim

    @property
    def heads(self) -> int:
        return len(self.head_params)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass(frozen=True)
class AttentionStack:
    """Residual stack of attention blocks sharing dim/heads/grid."""

    blocks: tuple

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ConfigError("stack needs at least one block")
        b0 = self.blocks[0]
        for i, b in enumerate(self.blocks):
            if (b.dim, b.heads, b.grid) != (b0.dim, b0.heads, b0.grid):
                raise ConfigError(f"block {i} dims/heads/grid differ from block 0")

    @property
    def dim(self) -> int:
        return self.blocks[0].dim

    @property
    def depth(self) -> int:
        return len(self.blocks)


@dataclass
class HeadDiagnostics:
    """Routing record of one head for one forward pass."""

    routes_kernel_q: RouteAssignment
    routes_kernel_k: RouteAssignment
    routes_kernel_qp: RouteAssignment
    routes_kernel_kp: RouteAssignment
    lambda_q: np.ndarray
    lambda_k: np.ndarray
    lambda_map: np.ndarray
    routes_lambda_q: RouteAssignment
    routes_lambda_k: RouteAssignment
    routes_lambda_map: RouteAssignment


@dataclass
class BlockDiagnostics:
    """Routing record of one block: projection routes plus per-head records."""

    routes_proj_q: RouteAssignment
    routes_proj_k: RouteAssignment
    heads: list = field(default_factory=list)

    def lambda_means(self) -> tuple:
        """(mean lambda_q, mean lambda_k, mean lambda_map) over heads and tokens."""
        means = []
        for name in ("lambda_q", "lambda_k", "lambda_map"):
            vals = np.concatenate([getattr(h, name) for h in self.heads]).astype(np.float64)
            means.append(float(np.mean(vals)))
        return tuple(means)


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Quadratic reference attention with the explicit n x n softmax map."""
    _check_shared_shapes(q, k, v)
    d = q.shape[1]
    logits = matmul(q, k.T) * np.asarray(1.0 / np.sqrt(d), dtype=q.dtype)
    return matmul(softmax_rows(logits), v)


def linear_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, kernel: str = "relu", gamma: float | None = None
) -> np.ndarray:
    """Kernelized linear attention, keys-first, row-normalized.

    ``kernel`` is 'relu' or 'focused' (the latter needs ``gamma``); the
    normalizing denominator is floored at 1e-6 in magnitude, so an all-dead
    feature row yields a zero output row rather than 0/0.
    """
    _check_shared_shapes(q, k, v)
    phi_q, phi_k = _feature_map(q, kernel, gamma), _feature_map(k, kernel, gamma)
    num = matmul(phi_q, matmul(phi_k.T, v))
    den = matmul(phi_q, np.sum(phi_k, axis=0)[:, None])
    return num / _floor_denominator(den)


def _feature_map(z: np.ndarray, kernel: str, gamma: float | None) -> np.ndarray:
    if kernel == "relu":
        return relu(z)
    if kernel == "focused":
        if gamma is None:
            raise ConfigError("focused kernel needs gamma")
        return focused_rows(z, gamma)
    raise ConfigError(f"unknown kernel {kernel!r}; expected 'relu' or 'focused'")


def _check_shared_shapes(q, k, v):
    for name, m in (("q", q), ("k", k), ("v", v)):
        _check_2d(m, name)
    if q.shape[1] != k.shape[1]:
        raise ContractViolation(f"q dim {q.shape[1]} != k dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ContractViolation(f"{k.shape[0]} keys vs {v.shape[0]} value rows")


def _head_slice(m: np.ndarray, head: int, d_h: int) -> np.ndarray:
    return m[:, head * d_h : (head + 1) * d_h]


def _head_forward(q, k, qp, kp, v_h, hp: HeadParams, variant: str, normalize: bool):
    """TDO path of one head; returns (out, HeadDiagnostics)."""
    q_t, r_q = dmk_forward(q, hp.kernel_q)
    k_t, r_k = dmk_forward(k, hp.kernel_k)
    qp_t, r_qp = dmk_forward(qp, hp.kernel_qp)
    kp_t, r_kp = dmk_forward(kp, hp.kernel_kp)

    q_pairs = concat_streams(q_t, qp_t)
    k_pairs = concat_streams(k_t, kp_t)
    if variant == "token-wise":
        out, (lam_q, lam_k, rl_q, rl_k) = tdo_forward(
            q_t, qp_t, k_t, kp_t, v_h, hp.diff, normalize=normalize, with_routes=True
        )
        lam_map, rl_map = _routed_lambdas(q_pairs, hp.diff.lambda_map_router, hp.diff.lambdas)
    else:
        out, (lam_map, rl_map) = mapwise_forward(
            q_t, qp_t, k_t, kp_t, v_h, hp.diff, with_routes=True
        )
        lam_q, rl_q = _routed_lambdas(q_pairs, hp.diff.router_q, hp.diff.lambdas)
        lam_k, rl_k = _routed_lambdas(k_pairs, hp.diff.router_k, hp.diff.lambdas)

    diag = HeadDiagnostics(
        routes_kernel_q=r_q,
        routes_kernel_k=r_k,
        routes_kernel_qp=r_qp,
        routes_kernel_kp=r_kp,
        lambda_q=lam_q,
        lambda_k=lam_k,
        lambda_map=lam_map,
        routes_lambda_q=rl_q,
        routes_lambda_k=rl_k,
        routes_lambda_map=rl_map,
    )
    return out, diag


def multihead_forward(x: np.ndarray, params: DydilaParams):
    """Full block forward; returns (out, BlockDiagnostics).

    Channel slices go through per-head kernel/differential banks; head
    outputs are concatenated back to full width.  With one head this is
    byte-identical to :func:`dydila_forward`.
    """
    _check_2d(x, "block input")
    n, d = x.shape
    if d != params.dim:
        raise ContractViolation(f"input width {d} != block dim {params.dim}")
    if params.dwc is not None:
        h, w = params.grid
        if h * w != n:
            raise ContractViolation(f"grid {h}x{w} does not tile {n} tokens")

    q, k, v, qp, kp, routes_q, routes_k = dpm_forward(x, params.proj)
    diag = BlockDiagnostics(routes_proj_q=routes_q, routes_proj_k=routes_k)

    d_h = params.head_dim
    out = np.empty((n, d), dtype=x.dtype)
    for h_idx, hp in enumerate(params.head_params):
        head_out, head_diag = _head_forward(
            _head_slice(q, h_idx, d_h),
            _head_slice(k, h_idx, d_h),
            _head_slice(qp, h_idx, d_h),
            _head_slice(kp, h_idx, d_h),
            _head_slice(v, h_idx, d_h),
            hp,
            params.variant,
            params.normalize,
        )
        out[:, h_idx * d_h : (h_idx + 1) * d_h] = head_out
        diag.heads.append(head_diag)

    if params.dwc is not None:
        out = out + dwc_forward(v, params.grid, params.dwc, use_merged=params.dwc_use_merged)
    return out, diag


def dydila_forward(x: np.ndarray, params: DydilaParams):
    """Single-head block forward; requires params.heads == 1."""
    if params.heads != 1:
        raise ConfigError(f"dydila_forward is the single-head path, got {params.heads} heads")
    return multihead_forward(x, params)


def stack_forward(x: np.ndarray, stack: AttentionStack):
    """Residual stack: x <- x + block(x) per block; returns (out, [diagnostics])."""
    _check_2d(x, "stack input")
    diags = []
    out = x
    for block in stack.blocks:
        block_out, diag = multihead_forward(out, block)
        out = out + block_out
        diags.append(diag)
    return out, diags


def extract_attention_row(
    x: np.ndarray, params: DydilaParams, query_index: int, impl: str = "dydila", head: int = 0
) -> np.ndarray:
    """The length-n attention row of one query under a chosen implementation.

    softmax: softmaxed scaled similarity row.  linear/focused: normalized
    kernel similarity row (its dot with V reproduces that output row within
    rounding).  dydila/mapwise: the differential similarity row of the
    chosen head (dot with the head's V slice gives the head's output row;
    exact for the unnormalized default, floored-denominator scaled when
    params.normalize is set).  Baselines use the shared full-width
    projections; focused takes gamma from the head's query kernel bank.
    """
    _check_2d(x, "input tokens")
    n = x.shape[0]
    if not (0 <= query_index < n):
        raise ContractViolation(f"query index {query_index} out of range for {n} tokens")
    if not (0 <= head < params.heads):
        raise ContractViolation(f"head {head} out of range for {params.heads} heads")

    if impl in ("softmax", "linear", "focused"):
        q, k, _ = project_shared(x, params.proj)
        if impl == "softmax":
            d = q.shape[1]
            logits = matmul(q[query_index : query_index + 1], k.T)
            logits = logits * np.asarray(1.0 / np.sqrt(d), dtype=q.dtype)
            return softmax_rows(logits)[0]
        gamma = params.head_params[head].kernel_q.gammas[0] if impl == "focused" else None
        kernel = "focused" if impl == "focused" else "relu"
        phi_q, phi_k = _feature_map(q, kernel, gamma), _feature_map(k, kernel, gamma)
        row = matmul(phi_q[query_index : query_index + 1], phi_k.T)
        den = matmul(
            phi_q[query_index : query_index + 1], np.sum(phi_k, axis=0)[:, None]
        )
        return (row / _floor_denominator(den))[0]

    if impl not in ("dydila", "mapwise"):
        raise ConfigError(f"unknown impl {impl!r}")

    q, k, _, qp, kp, _, _ = dpm_forward(x, params.proj)
    d_h = params.head_dim
    hp = params.head_params[head]
    q_t, _ = dmk_forward(_head_slice(q, head, d_h), hp.kernel_q)
    k_t, _ = dmk_forward(_head_slice(k, head, d_h), hp.kernel_k)
    qp_t, _ = dmk_forward(_head_slice(qp, head, d_h), hp.kernel_qp)
    kp_t, _ = dmk_forward(_head_slice(kp, head, d_h), hp.kernel_kp)

    if impl == "mapwise":
        lam_map, _ = _routed_lambdas(
            concat_streams(q_t, qp_t), hp.diff.lambda_map_router, hp.diff.lambdas
        )
        shared = matmul(q_t[query_index : query_index + 1], k_t.T)
        routed = matmul(qp_t[query_index : query_index + 1], kp_t.T)
        return (shared - lam_map[query_index] * routed)[0]

    lam_q, _ = _routed_lambdas(concat_streams(q_t, qp_t), hp.diff.router_q, hp.diff.lambdas)
    lam_k, _ = _routed_lambdas(concat_streams(k_t, kp_t), hp.diff.router_k, hp.diff.lambdas)
    q_diff = q_t - lam_q[:, None] * qp_t
    k_diff = k_t - lam_k[:, None] * kp_t
    row = matmul(q_diff[query_index : query_index + 1], k_diff.T)
    if params.normalize:
        den = matmul(
            q_diff[query_index : query_index + 1], np.sum(k_diff, axis=0)[:, None]
        )
        row = row / _floor_denominator(den)
    return row[0]
