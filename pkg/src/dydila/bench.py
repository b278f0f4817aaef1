"""Wall-clock scaling benchmarks over sequence length.

Timing covers the forward pass only (projection + attention); parameter and
input construction happen outside the timed region.  Each (impl, n) cell
re-seeds from the config so cells are independently reproducible.  Records
keep mean, population std and median over the timed iterations; the CSV
contract exposes impl,N,d,heads,mean_s,std_s,flops.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from .attention import linear_attention, multihead_forward, softmax_attention
from .config import RunConfig, init_params
from .flops import flops_estimate
from .numerics import ConfigError, SeededRng, matmul
from .fileio import write_csv

__all__ = ["BenchRecord", "BenchResourceError", "grid_for", "build_forward", "bench_run",
           "write_bench_csv"]

_WARMUP = 2

BENCH_CSV_HEADER = ["impl", "N", "d", "heads", "mean_s", "std_s", "flops"]


class BenchResourceError(RuntimeError):
    """Raised when a benchmark cell cannot be allocated."""


@dataclass(frozen=True)
class BenchRecord:
    impl: str
    n: int
    d: int
    heads: int
    iterations: int
    mean_s: float
    std_s: float
    median_s: float
    flops: int


def grid_for(n: int) -> tuple:
    """Most-square (h, w) factorization of n, used to lay tokens on a grid."""
    if n < 1:
        raise ConfigError(f"sequence length must be >= 1, got {n}")
    h = int(n ** 0.5)
    while h > 1 and n % h:
        h -= 1
    return h, n // h


def build_forward(cfg: RunConfig, impl: str, n: int):
    """Returns a zero-argument forward callable with all state prebuilt."""
    rng = SeededRng(cfg.seed)
    d, prec = cfg.dim, cfg.precision
    if impl in ("softmax", "linear", "focused"):
        w_q = rng.init_weight(d, d, prec)
        w_k = rng.init_weight(d, d, prec)
        w_v = rng.init_weight(d, d, prec)
        x = rng.tokens(n, d, prec)
        if impl == "softmax":
            def forward():
                return softmax_attention(matmul(x, w_q), matmul(x, w_k), matmul(x, w_v))
        elif impl == "linear":
            def forward():
                return linear_attention(matmul(x, w_q), matmul(x, w_k), matmul(x, w_v))
        else:
            gamma = float(cfg.gamma_init)
            def forward():
                return linear_attention(
                    matmul(x, w_q), matmul(x, w_k), matmul(x, w_v),
                    kernel="focused", gamma=gamma,
                )
        return forward
    if impl in ("dydila", "mapwise"):
        h, w = grid_for(n)
        block_cfg = cfg.with_overrides(
            blocks=1,
            grid_h=h,
            grid_w=w,
            variant="token-wise" if impl == "dydila" else "map-wise",
        )
        params = init_params(block_cfg, rng).blocks[0]
        x = rng.tokens(n, d, prec)
        def forward():
            return multihead_forward(x, params)[0]
        return forward
    raise ConfigError(f"unknown impl {impl!r}")


def bench_run(cfg: RunConfig, impl: str, n_list, iters: int) -> list:
    """Time `iters` forward passes per n after 2 warmups; returns BenchRecords."""
    if iters < 3:
        raise ConfigError(f"iters must be >= 3 for stable statistics, got {iters}")
    records = []
    for n in n_list:
        try:
            forward = build_forward(cfg, impl, n)
            for _ in range(_WARMUP):
                forward()
            times = []
            for _ in range(iters):
                t0 = time.perf_counter()
                forward()
                times.append(time.perf_counter() - t0)
        except MemoryError:
            raise BenchResourceError(
                f"allocation failed for impl={impl} at N={n} (d={cfg.dim}, "
                f"precision={cfg.precision}); reduce N or d"
            ) from None
        total = flops_estimate(
            impl, n, cfg.dim, heads=cfg.heads,
            n_projectors=cfg.n_projectors,
            n_kernel_factors=cfg.n_kernel_factors,
            n_lambda_factors=cfg.n_lambda_factors,
            dwc=cfg.dwc_enabled,
            normalize=cfg.normalize,
        )["total"]
        records.append(
            BenchRecord(
                impl=impl, n=n, d=cfg.dim, heads=cfg.heads, iterations=iters,
                mean_s=statistics.mean(times),
                std_s=statistics.pstdev(times),
                median_s=statistics.median(times),
                flops=total,
            )
        )
    return records


def write_bench_csv(path, records) -> None:
    rows = ((r.impl, r.n, r.d, r.heads, r.mean_s, r.std_s, r.flops) for r in records)
    write_csv(path, BENCH_CSV_HEADER, rows)
