"""Shared system model: scalar parameters, distortion functions, battery dynamics.

Every other module takes a `ModelParams` and treats it as immutable; it is
safe to share across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DISTORTION_KINDS = ("absolute", "indicator", "squared")


class ModelError(ValueError):
    """Invalid model parameter or infeasible dynamic."""


@dataclass(frozen=True)
class Distortion:
    """Bounded distortion d(x, xhat) >= 0 over states {1..N}.

    `kind` is one of absolute |x-xhat|, indicator 1{x != xhat}, squared
    (x-xhat)^2, or "table" with an explicit N x N matrix (extension point;
    the matrix must have a zero diagonal and nonnegative entries).
    """

    kind: str = "absolute"
    table: tuple | None = field(default=None)

    def __post_init__(self):
        if self.kind == "table":
            arr = np.asarray(self.table, dtype=float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ModelError("custom distortion table must be square")
            if np.any(arr < 0):
                raise ModelError("distortion values must be nonnegative")
            if np.any(np.diagonal(arr) != 0):
                raise ModelError("distortion table must have zero diagonal")
            # store hashable form so Distortion stays frozen/shareable
            object.__setattr__(self, "table", tuple(map(tuple, arr.tolist())))
        elif self.kind not in DISTORTION_KINDS:
            raise ModelError(
                f"unknown distortion kind {self.kind!r}; "
                f"expected one of {DISTORTION_KINDS + ('table',)}"
            )
        elif self.table is not None:
            raise ModelError("table only allowed with kind='table'")

    def matrix(self, n: int) -> np.ndarray:
        """N x N matrix D with D[x-1, i-1] = d(x, i)."""
        return _distortion_matrix(self.kind, self.table, n)

    def eval(self, x: int, xhat: int, n: int) -> float:
        """d(x, xhat) for states in {1..n}."""
        if not (1 <= x <= n and 1 <= xhat <= n):
            raise ModelError(f"state out of range: d({x}, {xhat}) with n={n}")
        return float(self.matrix(n)[x - 1, xhat - 1])

    def max_value(self, n: int) -> float:
        return float(self.matrix(n).max())


@lru_cache(maxsize=None)
def _distortion_matrix(kind: str, table: tuple | None, n: int) -> np.ndarray:
    if kind == "table":
        arr = np.asarray(table, dtype=float)
        if arr.shape != (n, n):
            raise ModelError(f"distortion table is {arr.shape}, model has n={n}")
    else:
        diff = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
        if kind == "absolute":
            arr = diff
        elif kind == "indicator":
            arr = (diff > 0).astype(float)
        else:  # squared
            arr = diff**2
    arr.setflags(write=False)
    return arr


def distortion_eval(d: Distortion, x: int, xhat: int, n: int) -> float:
    return d.eval(x, xhat, n)


@dataclass(frozen=True)
class ModelParams:
    """All scalar parameters of the tracking system.

    n_states  source alphabet size N (>= 2)
    p         self-transition probability, must satisfy 1/N < p < 1
    p_s       forward-channel success probability in (0, 1]
    p_f       feedback (ACK) success probability in [0, 1]
    mu        per-slot energy arrival probability in [0, 1]
    battery   battery capacity B in energy units (>= 1)
    depth     truncation depth m: consecutive no-ACK transmissions kept exactly
    q         derived cross-transition probability (1-p)/(N-1); never supplied

    p_s * p_f = 1 (perfect ACK) is a supported degenerate mode: no-ACK after a
    transmission then certainly means forward loss, the belief never leaves the
    reset set, and `depth` is effectively 0.
    """

    n_states: int
    p: float
    p_s: float
    p_f: float
    mu: float
    battery: int
    depth: int = 6
    distortion: Distortion = Distortion("absolute")
    q: float = field(init=False)

    def __post_init__(self):
        if not isinstance(self.n_states, int) or self.n_states < 2:
            raise ModelError(f"n_states must be an integer >= 2, got {self.n_states}")
        if not 0.0 < self.p < 1.0:
            raise ModelError(f"p must lie in (0, 1), got {self.p}")
        if self.p * self.n_states <= 1.0:
            raise ModelError(
                f"p={self.p} <= 1/N={1.0 / self.n_states:.6g}: the last-delivered-update "
                "estimator requires p > q"
            )
        if not 0.0 < self.p_s <= 1.0:
            raise ModelError(f"p_s must lie in (0, 1], got {self.p_s}")
        if not 0.0 <= self.p_f <= 1.0:
            raise ModelError(f"p_f must lie in [0, 1], got {self.p_f}")
        if not 0.0 <= self.mu <= 1.0:
            raise ModelError(f"mu must lie in [0, 1], got {self.mu}")
        if not isinstance(self.battery, int) or self.battery < 1:
            raise ModelError(f"battery must be an integer >= 1, got {self.battery}")
        if not isinstance(self.depth, int) or self.depth < 1:
            raise ModelError(f"depth must be an integer >= 1, got {self.depth}")
        if isinstance(self.distortion, str):
            object.__setattr__(self, "distortion", Distortion(self.distortion))
        # single rounding of (1-p)/(N-1), stored once
        object.__setattr__(self, "q", (1.0 - self.p) / (self.n_states - 1))

    @property
    def perfect_ack(self) -> bool:
        return self.p_s * self.p_f == 1.0

    @property
    def ack_prob(self) -> float:
        """Probability of receiving ACK in a transmission slot (Pr(ACK) = p_s*p_f)."""
        return self.p_s * self.p_f

    def dist_matrix(self) -> np.ndarray:
        return self.distortion.matrix(self.n_states)

    def max_distortion(self) -> float:
        return self.distortion.max_value(self.n_states)

    def key(self) -> str:
        """Filename-safe identity string (full parameter set)."""
        d = self.distortion
        dk = d.kind if d.kind != "table" else f"table{hash(d.table) & 0xFFFFFFFF:08x}"
        return (
            f"N{self.n_states}_p{self.p:.12g}_ps{self.p_s:.12g}_pf{self.p_f:.12g}"
            f"_mu{self.mu:.12g}_B{self.battery}_m{self.depth}_{dk}"
        )

    def belief_key(self) -> str:
        """Identity of the truncated belief set: (N, p_s, p_f, m)."""
        return f"N{self.n_states}_ps{self.p_s:.12g}_pf{self.p_f:.12g}_m{self.depth}"


def battery_step(b: int, e: int, a: int, cap: int) -> int:
    """Battery recursion: next level min(b + e - a, cap).

    Transmitting (a=1) from an empty battery is infeasible and raises.
    """
    if a not in (0, 1) or e not in (0, 1):
        raise ModelError(f"binary action/arrival expected, got a={a}, e={e}")
    if not 0 <= b <= cap:
        raise ModelError(f"battery level {b} outside [0, {cap}]")
    if a > b:
        raise ModelError(f"infeasible action: a={a} with battery {b}")
    return min(b + e - a, cap)
