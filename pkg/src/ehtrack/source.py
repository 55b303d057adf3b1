"""Symmetric Markov source: K-step transition laws and the sink-side estimator.

The source keeps its state with probability p and moves to each of the other
N-1 states with probability q = (1-p)/(N-1). Every power of such a matrix has
the same two-value structure, so K-step laws are computed in closed form
(diagonal 1/N + (1-1/N)(p-q)^K) instead of by repeated multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError, ModelParams


@dataclass(frozen=True)
class TransitionMatrix:
    """Two-valued symmetric row-stochastic matrix (diagonal `diag`, rest `offdiag`)."""

    n: int
    diag: float
    offdiag: float

    def __post_init__(self):
        if self.n < 2:
            raise ModelError("transition matrix needs n >= 2")
        if not (0 <= self.offdiag <= 1 and 0 <= self.diag <= 1):
            raise ModelError("transition entries must be probabilities")
        if abs(self.diag + (self.n - 1) * self.offdiag - 1.0) > 1e-12:
            raise ModelError("rows must sum to 1")

    @classmethod
    def from_params(cls, params: ModelParams) -> "TransitionMatrix":
        return cls(params.n_states, params.p, params.q)

    def as_array(self) -> np.ndarray:
        a = np.full((self.n, self.n), self.offdiag)
        np.fill_diagonal(a, self.diag)
        return a


def k_step_matrix(tm: TransitionMatrix, k: int) -> TransitionMatrix:
    """K-step law of the chain, exact closed form.

    The second eigenvalue of the two-valued matrix is lam = diag - offdiag, so
    diag(P^K) = 1/n + (1 - 1/n) lam^K and the off-diagonal follows from row sums.
    """
    if k < 1:
        raise ModelError(f"k must be >= 1, got {k}")
    lam = tm.diag - tm.offdiag
    diag_k = 1.0 / tm.n + (1.0 - 1.0 / tm.n) * lam**k
    off_k = (1.0 - diag_k) / (tm.n - 1)
    return TransitionMatrix(tm.n, diag_k, off_k)


def step_from_uniform(x: int, u: float, n: int, p: float, q: float) -> int:
    """Map one uniform draw to the next source state (1-based).

    u < p keeps the state; otherwise (u - p)/q indexes the other states in
    increasing order.  The simulator core replicates this mapping exactly.
    """
    if u < p:
        return x
    k = min(int((u - p) / q), n - 2)
    return k + 1 if k + 1 < x else k + 2


def step_source(x: int, tm: TransitionMatrix, rng: np.random.Generator) -> int:
    """Advance the source one slot, consuming exactly one uniform draw."""
    return step_from_uniform(x, rng.random(), tm.n, tm.diag, tm.offdiag)


def ml_estimate(last_delivered: int | None, initial: int) -> int:
    """Sink estimate: content of the last delivered update, or the cold-start value.

    Valid whenever p > q (enforced by ModelParams): after any number of source
    transitions the delivered state stays the most likely one.
    """
    return initial if last_delivered is None else last_delivered
