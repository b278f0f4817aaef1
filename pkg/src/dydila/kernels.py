"""Norm-preserving focused feature kernels with per-token routing.

The focused map sharpens a ReLU'd row by raising it elementwise to a power
gamma, then rescales so the Euclidean norm of the ReLU'd row is restored:

    phi(z) = relu(z)^gamma / ||relu(z)^gamma||_2 * ||relu(z)||_2

gamma = 1 is exactly ReLU.  Larger gamma concentrates mass on the largest
coordinates while the norm stays put.  A row whose ReLU is identically zero
maps to the zero row (no 0/0).

Each row picks its gamma through a router (one gamma per routable factor),
so sharpening strength is a per-token decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, ContractViolation, _check_2d, relu, row_l2_norm
from .routing import RouteAssignment, Router, route_argmax

__all__ = ["KernelBank", "focused_kernel", "focused_rows", "dmk_forward"]


@dataclass(frozen=True)
class KernelBank:
    """n_f candidate sharpening exponents plus the router that picks one per row."""

    gammas: tuple  # floats, all > 0
    router: Router

    def __post_init__(self):
        if len(self.gammas) < 1:
            raise ConfigError("kernel bank needs at least one gamma")
        for g in self.gammas:
            if not (float(g) > 0.0):
                raise ConfigError(f"gamma must be > 0, got {g!r}")
        if self.router.n_choices != len(self.gammas):
            raise ConfigError(
                f"router has {self.router.n_choices} choices for {len(self.gammas)} gammas"
            )

    @property
    def n_factors(self) -> int:
        return len(self.gammas)


def focused_rows(z: np.ndarray, gamma: float) -> np.ndarray:
    """Focused map applied to every row of a matrix with one shared gamma.

    The power step first divides each live row by its max entry, which keeps
    relu(z)^gamma inside [0, 1] for any gamma without changing the result
    (the scale cancels in the normalize-then-rescale), so gamma = 8 on f32
    cannot overflow.
    """
    _check_2d(z, "kernel input")
    if not (float(gamma) > 0.0):
        raise ConfigError(f"gamma must be > 0, got {gamma!r}")
    g = float(gamma)
    r = relu(z)
    if g == 1.0:
        # the map is the identity on relu(z); keep it bit-exact
        return r
    n1 = row_l2_norm(r)
    alive = n1 > 0
    out = np.zeros_like(r)
    if not np.any(alive):
        return out
    ra = r[alive]
    peak = np.max(ra, axis=1, keepdims=True)  # > 0 on live rows
    rg = (ra / peak) ** g
    ng = row_l2_norm(rg)
    out[alive] = rg * (n1[alive] / ng)[:, None]
    return out


def focused_kernel(row: np.ndarray, gamma: float) -> np.ndarray:
    """Focused map for a single 1-D row; see :func:`focused_rows`."""
    if not isinstance(row, np.ndarray) or row.ndim != 1:
        raise ContractViolation(f"focused_kernel expects a 1-D row, got shape {getattr(row, 'shape', None)}")
    return focused_rows(row[None, :], gamma)[0]


def dmk_forward(z: np.ndarray, bank: KernelBank):
    """Dynamic measure kernel: route each row to a gamma, apply the focused map.

    Returns ``(out, routes)``.  Rows are grouped by chosen gamma and mapped
    per group; since the map is row-local the grouping is only a batching
    detail.
    """
    routes = route_argmax(z, bank.router)
    out = np.zeros_like(z)
    for f, gamma in enumerate(bank.gammas):
        rows = np.flatnonzero(routes.indices == f)
        if rows.size:
            out[rows] = focused_rows(z[rows], gamma)
    return out, routes
