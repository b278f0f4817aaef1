"""Token differential operator: routed differences of two attention streams.

The operator subtracts a lambda-scaled routed stream from the shared stream
on both the query and key sides, then runs the linear-attention reordering
(keys-first) so no n x n map is ever materialized:

    out = (q_t - lam_q ⊙ q_routed) @ ((k_t - lam_k ⊙ k_routed)^T @ v)

Each token's lambda comes from routing the concatenation of its two stream
rows (width 2d) to one of n_d candidate scalars.  The map-wise variant
instead differences the two attention outputs with a single routed lambda
per token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, ContractViolation, _check_2d, matmul
from .routing import RouteAssignment, Router, route_argmax

__all__ = [
    "DifferentialBank",
    "concat_streams",
    "select_lambdas",
    "tdo_forward",
    "expand_tokenwise",
    "mapwise_forward",
    "DENOM_FLOOR",
]

# Sign-preserving magnitude floor for the optional normalizing denominator.
DENOM_FLOOR = 1e-6


@dataclass(frozen=True)
class DifferentialBank:
    """Candidate lambda scalars plus the routers that pick one per token.

    `router_q` / `router_k` route the token-wise query/key differences;
    `lambda_map_router` routes the map-wise variant.  All three take the
    concatenated pair of stream rows, so their in_dim is 2d.
    """

    lambdas: tuple  # floats
    router_q: Router
    router_k: Router
    lambda_map_router: Router

    def __post_init__(self):
        if len(self.lambdas) < 1:
            raise ConfigError("differential bank needs at least one lambda")
        for lam in self.lambdas:
            float(lam)
        for name, r in (
            ("router_q", self.router_q),
            ("router_k", self.router_k),
            ("lambda_map_router", self.lambda_map_router),
        ):
            if r.n_choices != len(self.lambdas):
                raise ConfigError(
                    f"{name} has {r.n_choices} choices for {len(self.lambdas)} lambdas"
                )
            if r.in_dim % 2 != 0:
                raise ConfigError(f"{name} in_dim must be 2*d, got {r.in_dim}")
            if r.in_dim != self.router_q.in_dim:
                raise ConfigError("differential routers must share one in_dim")

    @property
    def dim(self) -> int:
        return self.router_q.in_dim // 2

    @property
    def n_factors(self) -> int:
        return len(self.lambdas)


def concat_streams(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-concatenate two (n, d) streams into the (n, 2d) routing input."""
    _check_2d(a, "stream a")
    _check_2d(b, "stream b")
    if a.shape != b.shape:
        raise ContractViolation(f"stream shapes differ: {a.shape} vs {b.shape}")
    return np.hstack((a, b))


def _routed_lambdas(pairs: np.ndarray, router: Router, lambdas: tuple):
    routes = route_argmax(pairs, router)
    table = np.asarray(lambdas, dtype=pairs.dtype)
    return table[routes.indices], routes


def select_lambdas(q_pairs: np.ndarray, k_pairs: np.ndarray, bank: DifferentialBank):
    """Per-token lambda vectors for the query and key sides.

    `q_pairs`/`k_pairs` are the concatenated (n, 2d) stream rows.  Returns
    ``(lambda_q, lambda_k)`` as 1-D vectors in the input dtype.
    """
    lam_q, _ = _routed_lambdas(q_pairs, bank.router_q, bank.lambdas)
    lam_k, _ = _routed_lambdas(k_pairs, bank.router_k, bank.lambdas)
    return lam_q, lam_k


def _check_streams(q_t, q_routed, k_t, k_routed, v):
    for name, m in (
        ("q_t", q_t),
        ("q_routed", q_routed),
        ("k_t", k_t),
        ("k_routed", k_routed),
        ("v", v),
    ):
        _check_2d(m, name)
    if not (q_t.shape == q_routed.shape == k_t.shape == k_routed.shape):
        raise ContractViolation(
            "stream shapes must match: "
            f"q_t {q_t.shape}, q_routed {q_routed.shape}, k_t {k_t.shape}, k_routed {k_routed.shape}"
        )
    if v.shape[0] != k_t.shape[0]:
        raise ContractViolation(f"v has {v.shape[0]} rows for {k_t.shape[0]} keys")


def _floor_denominator(den: np.ndarray) -> np.ndarray:
    # |den| is floored at DENOM_FLOOR with the sign kept; exact zeros go to
    # +DENOM_FLOOR so a zero numerator row stays a zero output row.
    sign = np.where(den < 0, -1.0, 1.0).astype(den.dtype)
    return sign * np.maximum(np.abs(den), np.asarray(DENOM_FLOOR, dtype=den.dtype))


def tdo_forward(
    q_t: np.ndarray,
    q_routed: np.ndarray,
    k_t: np.ndarray,
    k_routed: np.ndarray,
    v: np.ndarray,
    bank: DifferentialBank,
    normalize: bool = False,
    with_routes: bool = False,
):
    """Token-wise differential attention, keys-first (never builds n x n).

    With ``normalize=True`` each output row is divided by the matching
    differential row-sum similarity, floored at ``DENOM_FLOOR`` in
    magnitude.  ``with_routes=True`` additionally returns the
    ``(lambda_q, lambda_k, routes_q, routes_k)`` diagnostics.
    """
    _check_streams(q_t, q_routed, k_t, k_routed, v)
    lam_q, routes_q = _routed_lambdas(concat_streams(q_t, q_routed), bank.router_q, bank.lambdas)
    lam_k, routes_k = _routed_lambdas(concat_streams(k_t, k_routed), bank.router_k, bank.lambdas)
    q_diff = q_t - lam_q[:, None] * q_routed
    k_diff = k_t - lam_k[:, None] * k_routed
    out = matmul(q_diff, matmul(k_diff.T, v))
    if normalize:
        den = matmul(q_diff, np.sum(k_diff, axis=0)[:, None])
        out = out / _floor_denominator(den)
    if with_routes:
        return out, (lam_q, lam_k, routes_q, routes_k)
    return out


def expand_tokenwise(
    q_t: np.ndarray,
    q_routed: np.ndarray,
    k_t: np.ndarray,
    k_routed: np.ndarray,
    v: np.ndarray,
    lambda_q: np.ndarray,
    lambda_k: np.ndarray,
):
    """The four bilinear terms whose signed sum equals the token-wise operator.

    Returns ``(t1, t2, t3, t4)`` with
    ``out = t1 - t2 - t3 + t4``:

        t1 = q_t  (k_t^T v)          t2 = q_t  ((lam_k ⊙ k_routed)^T v)
        t3 = lam_q ⊙ q_routed (k_t^T v)   t4 = lam_q ⊙ q_routed ((lam_k ⊙ k_routed)^T v)
    """
    _check_streams(q_t, q_routed, k_t, k_routed, v)
    n = q_t.shape[0]
    for name, lam in (("lambda_q", lambda_q), ("lambda_k", lambda_k)):
        if lam.ndim != 1 or lam.shape[0] != n:
            raise ContractViolation(f"{name} must be a length-{n} vector, got shape {lam.shape}")
    q_scaled = lambda_q[:, None] * q_routed
    k_scaled = lambda_k[:, None] * k_routed
    kv = matmul(k_t.T, v)
    kv_scaled = matmul(k_scaled.T, v)
    t1 = matmul(q_t, kv)
    t2 = matmul(q_t, kv_scaled)
    t3 = matmul(q_scaled, kv)
    t4 = matmul(q_scaled, kv_scaled)
    return t1, t2, t3, t4


def mapwise_forward(
    q_t: np.ndarray,
    q_routed: np.ndarray,
    k_t: np.ndarray,
    k_routed: np.ndarray,
    v: np.ndarray,
    bank: DifferentialBank,
    with_routes: bool = False,
):
    """Map-wise variant: difference the two attention outputs directly.

    ``out = q_t (k_t^T v) - lam_map ⊙ q_routed (k_routed^T v)`` where each
    token's lam_map is routed from its concatenated query-stream pair.
    """
    _check_streams(q_t, q_routed, k_t, k_routed, v)
    lam_map, routes_map = _routed_lambdas(
        concat_streams(q_t, q_routed), bank.lambda_map_router, bank.lambdas
    )
    shared = matmul(q_t, matmul(k_t.T, v))
    routed = matmul(q_routed, matmul(k_routed.T, v))
    out = shared - lam_map[:, None] * routed
    if with_routes:
        return out, (lam_map, routes_map)
    return out
