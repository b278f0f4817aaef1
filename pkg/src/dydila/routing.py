"""Hard argmax routing of token rows to bank members.

A router is a single dense weight matrix; a token goes to the column of its
largest logit.  Ties resolve to the smallest index (that is what
``np.argmax`` does, and the tests pin it).  Routing is a pure function of
the token values, so permuting tokens permutes the assignment and nothing
else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractViolation, ConfigError, _check_2d, matmul

__all__ = ["Router", "RouteAssignment", "route_argmax"]


@dataclass(frozen=True)
class Router:
    """Dense routing weights of shape (in_dim, n_choices)."""

    weights: np.ndarray

    def __post_init__(self):
        _check_2d(self.weights, "router weights")
        if self.weights.shape[1] < 1:
            raise ConfigError(f"router needs at least one choice, got shape {self.weights.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_choices(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class RouteAssignment:
    """Per-token winner indices plus the logits they were chosen from."""

    indices: np.ndarray  # (n,) int64, values in [0, n_choices)
    logits: np.ndarray  # (n, n_choices)

    def __post_init__(self):
        if self.indices.ndim != 1 or self.logits.ndim != 2:
            raise ContractViolation(
                f"assignment shapes must be (n,), (n, c); got {self.indices.shape}, {self.logits.shape}"
            )
        if self.indices.shape[0] != self.logits.shape[0]:
            raise ContractViolation(
                f"assignment length mismatch: {self.indices.shape[0]} indices vs {self.logits.shape[0]} logit rows"
            )

    @property
    def n_choices(self) -> int:
        return self.logits.shape[1]

    def counts(self) -> np.ndarray:
        """Occurrences of each choice, length n_choices."""
        return np.bincount(self.indices, minlength=self.n_choices)

    def most_frequent(self) -> int:
        """Most used choice index (smallest index on ties)."""
        return int(np.argmax(self.counts()))


def route_argmax(tokens: np.ndarray, router: Router) -> RouteAssignment:
    """Assign every token row to its argmax logit column.

    Logits use the deterministic :func:`~dydila.numerics.matmul`; a token
    equal to zero has all-zero logits and routes to index 0 by the tie rule.
    """
    _check_2d(tokens, "routing tokens")
    if tokens.shape[1] != router.in_dim:
        raise ContractViolation(
            f"routing dim mismatch: tokens {tokens.shape} vs router weights {router.weights.shape}"
        )
    logits = matmul(tokens, router.weights)
    indices = np.argmax(logits, axis=1).astype(np.int64)
    return RouteAssignment(indices=indices, logits=logits)
