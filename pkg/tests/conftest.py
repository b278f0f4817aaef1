"""Shared helpers for the test suite: seeded builders and a close-assert."""

import numpy as np

from dydila.attention import DwcParams, DydilaParams, HeadParams
from dydila.differential import DifferentialBank
from dydila.kernels import KernelBank
from dydila.numerics import SeededRng
from dydila.projection import ProjectorBank
from dydila.routing import Router


def assert_close(actual, expected, tol, msg=""):
    """Max-abs vs scale-relative comparison with a readable failure message."""
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    assert a.shape == e.shape, f"{msg} shape {a.shape} != {e.shape}"
    diff = np.abs(a - e)
    max_abs = float(diff.max()) if diff.size else 0.0
    scale = max(float(np.abs(e).max()) if e.size else 0.0, 1e-30)
    rel = max_abs / scale
    assert max_abs <= 1e-30 or rel <= tol, (
        f"{msg} max_abs={max_abs:.3e} rel={rel:.3e} > tol={tol:.1e} "
        f"at {np.unravel_index(int(np.argmax(diff)), diff.shape)}"
    )


def mat(seed, n, d, precision="f64", low=-1.0, high=1.0):
    return SeededRng(seed).uniform((n, d), low, high, precision)


def make_router(seed, in_dim, n_choices, precision="f64"):
    return Router(SeededRng(seed).init_weight(in_dim, n_choices, precision))


def make_proj_bank(seed, d, n_p, precision="f64"):
    rng = SeededRng(seed)
    return ProjectorBank(
        w_q0=rng.init_weight(d, d, precision),
        w_k0=rng.init_weight(d, d, precision),
        w_v0=rng.init_weight(d, d, precision),
        w_q=tuple(rng.init_weight(d, d, precision) for _ in range(n_p)),
        w_k=tuple(rng.init_weight(d, d, precision) for _ in range(n_p)),
        router_q=Router(rng.init_weight(d, n_p, precision)),
        router_k=Router(rng.init_weight(d, n_p, precision)),
    )


def make_kernel_bank(seed, d, gammas, precision="f64"):
    return KernelBank(
        gammas=tuple(gammas),
        router=Router(SeededRng(seed).init_weight(d, len(gammas), precision)),
    )


def make_diff_bank(seed, d, lambdas, precision="f64"):
    rng = SeededRng(seed)
    lambdas = tuple(lambdas)
    return DifferentialBank(
        lambdas=lambdas,
        router_q=Router(rng.init_weight(2 * d, len(lambdas), precision)),
        router_k=Router(rng.init_weight(2 * d, len(lambdas), precision)),
        lambda_map_router=Router(rng.init_weight(2 * d, len(lambdas), precision)),
    )


def make_block(seed, d, grid, heads=1, n_p=3, gammas=(0.5, 1.0, 3.0), lambdas=(0.0, 0.01, 0.1),
               dwc=True, variant="token-wise", normalize=False, precision="f64",
               identity_branch=True):
    """Desk-scale block with varied gammas/lambdas so routing matters."""
    rng = SeededRng(seed)
    d_h = d // heads
    head_params = tuple(
        HeadParams(
            kernel_q=make_kernel_bank(seed + 10 + 7 * h, d_h, gammas, precision),
            kernel_k=make_kernel_bank(seed + 11 + 7 * h, d_h, gammas, precision),
            kernel_qp=make_kernel_bank(seed + 12 + 7 * h, d_h, gammas, precision),
            kernel_kp=make_kernel_bank(seed + 13 + 7 * h, d_h, gammas, precision),
            diff=make_diff_bank(seed + 14 + 7 * h, d_h, lambdas, precision),
        )
        for h in range(heads)
    )
    dwc_params = None
    if dwc:
        dwc_params = DwcParams(
            kernels=rng.uniform((d, 3, 3), -1.0 / 3.0, 1.0 / 3.0, precision),
            identity_branch=identity_branch,
        )
    return DydilaParams(
        proj=make_proj_bank(seed + 1, d, n_p, precision),
        head_params=head_params,
        grid=grid,
        dwc=dwc_params,
        variant=variant,
        normalize=normalize,
    )
