"""Closed-form FLOP estimates for every implementation.

Counts follow the usual convention of 2 FLOPs per multiply-add.  The two
numbers the scaling analysis hinges on are the attention cores:

    softmax:           4 n^2 d      (n x n map build + map-times-values)
    linear family:     4 n d^2 / heads   (keys-first reordering)

which cross exactly at n = d for one head.  Everything else (projections,
routing, feature maps, depthwise conv) is linear in n and reported per
component so the crossover claim can be checked against the cores alone.
"""

from __future__ import annotations

from .numerics import ConfigError

__all__ = ["IMPLEMENTATIONS", "flops_estimate", "core_crossover"]

IMPLEMENTATIONS = ("softmax", "linear", "focused", "dydila", "mapwise")

# Per-entry cost of the focused feature map: relu, squared-norm, peak
# rescale, power, renormalize (documented approximation).
_FOCUSED_MAP_COST = 8
_RELU_MAP_COST = 1
_DWC_COST = 19  # 9 taps x 2 flops + identity add, per entry


def flops_estimate(
    impl: str,
    n: int,
    d: int,
    heads: int = 1,
    n_projectors: int = 3,
    n_kernel_factors: int = 9,
    n_lambda_factors: int = 9,
    dwc: bool = True,
    normalize: bool = False,
) -> dict:
    """Component-wise FLOP estimate; the 'total' key sums the rest."""
    if impl not in IMPLEMENTATIONS:
        raise ConfigError(f"unknown impl {impl!r}; expected one of {IMPLEMENTATIONS}")
    for name, val in (("n", n), ("d", d), ("heads", heads)):
        if not isinstance(val, int) or val < 1:
            raise ConfigError(f"{name} must be a positive integer, got {val!r}")
    if d % heads != 0:
        raise ConfigError(f"d {d} not divisible by heads {heads}")

    parts = {"qkv_projection": 6 * n * d * d}
    if impl == "softmax":
        parts["attention_core"] = 4 * n * n * d
        parts["row_softmax"] = 5 * n * n
    elif impl in ("linear", "focused"):
        cost = _RELU_MAP_COST if impl == "linear" else _FOCUSED_MAP_COST
        parts["feature_map"] = 2 * cost * n * d  # q and k streams
        parts["attention_core"] = 4 * n * d * d // heads
        parts["normalizer"] = 4 * n * d
    else:
        parts["routed_projection"] = 4 * n * d * d
        parts["projection_routing"] = 4 * n * d * n_projectors
        parts["kernel_map"] = 4 * _FOCUSED_MAP_COST * n * d
        parts["kernel_routing"] = 8 * n * d * n_kernel_factors
        parts["lambda_routing"] = 12 * n * d * n_lambda_factors
        if impl == "dydila":
            parts["diff_combine"] = 4 * n * d
            parts["attention_core"] = 4 * n * d * d // heads
            if normalize:
                parts["normalizer"] = 4 * n * d
        else:  # mapwise differences two full attention outputs
            parts["diff_combine"] = 2 * n * d
            parts["attention_core"] = 8 * n * d * d // heads
        if dwc:
            parts["dwc"] = _DWC_COST * n * d
    parts["total"] = sum(parts.values())
    return parts


def core_crossover(d: int, heads: int = 1) -> float:
    """Sequence length where the softmax core overtakes the linear core.

    Solves 4 n^2 d == 4 n d^2 / heads, i.e. n* = d / heads; with one head
    the cores cross exactly at n = d.
    """
    if d < 1 or heads < 1 or d % heads != 0:
        raise ConfigError(f"bad dims d={d}, heads={heads}")
    return d / heads
