"""Beliefs over the sink estimate: update rules, truncated set, KL projection.

A belief is a length-N simplex vector giving the transmitter's conditional law
of the sink estimate. Idling keeps it, an ACK collapses it to a reset (basis)
vector, and a no-ACK transmission mixes it toward the transmitted state with
weights u1 = p_s(1-p_f)/(1-p_s p_f) and u2 = (1-p_s)/(1-p_s p_f).

The truncated set is the breadth-first closure of the reset beliefs under the
no-ACK update up to `depth` steps; one step beyond that (the overflow
frontier) is mapped back into the set by minimum-KL projection, recorded in an
offline look-up table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Distortion, ModelError, ModelParams

# dedup/hashing tolerance: beliefs within 1e-9 per entry share a canonical key
CANON_TOL = 1e-9
_CANON_SCALE = 1.0 / CANON_TOL

# smoothing added to projection candidates so every KL divergence is finite
PROJECT_EPS = 1e-12


def canonical_key(rho: np.ndarray) -> tuple:
    """Hashable form of a belief, rounded at the canonical tolerance."""
    return tuple(np.rint(np.asarray(rho, dtype=float) * _CANON_SCALE).astype(np.int64))


def as_belief(v) -> np.ndarray:
    """Validate and renormalize a simplex vector."""
    rho = np.asarray(v, dtype=float).copy()
    if rho.ndim != 1 or rho.size < 2:
        raise ModelError("a belief is a 1-d vector of length >= 2")
    if rho.min() < -CANON_TOL or rho.max() > 1.0 + CANON_TOL:
        raise ModelError("belief entries must lie in [0, 1]")
    s = rho.sum()
    if abs(s - 1.0) > 1e-6:
        raise ModelError(f"belief sums to {s!r}, not 1")
    np.clip(rho, 0.0, None, out=rho)
    return rho / rho.sum()


def reset_belief(x: int, n: int) -> np.ndarray:
    """Basis vector e_x: the belief right after a confirmed delivery of x."""
    if not 1 <= x <= n:
        raise ModelError(f"state {x} outside 1..{n}")
    rho = np.zeros(n)
    rho[x - 1] = 1.0
    return rho


@dataclass(frozen=True)
class NackConstants:
    """Posterior weights after transmitting without receiving ACK.

    u1: probability the update was delivered but the ACK was lost;
    u2: probability the update itself was lost. They sum to one.
    """

    u1: float
    u2: float

    def __post_init__(self):
        if not (0.0 <= self.u1 <= 1.0 and 0.0 <= self.u2 <= 1.0):
            raise ModelError("nack constants must be probabilities")
        assert abs(self.u1 + self.u2 - 1.0) <= 1e-12


def nack_constants(p_s: float, p_f: float) -> NackConstants:
    denom = 1.0 - p_s * p_f
    if denom <= 0.0:
        raise ModelError(
            "p_s*p_f = 1 leaves no no-ACK event; use the perfect-ACK mode"
        )
    return NackConstants(u1=p_s * (1.0 - p_f) / denom, u2=(1.0 - p_s) / denom)


def update_idle(rho: np.ndarray) -> np.ndarray:
    """No transmission: the sink estimate cannot move, the belief is unchanged."""
    return rho


def update_ack(x: int, n: int) -> np.ndarray:
    """Transmission confirmed: the sink now holds x with certainty."""
    return reset_belief(x, n)


def update_nack(rho: np.ndarray, x: int, c: NackConstants) -> np.ndarray:
    """Transmission without ACK: mix u1 * e_x + u2 * rho (renormalized)."""
    out = c.u2 * np.asarray(rho, dtype=float)
    out[x - 1] += c.u1
    return out / out.sum()


def expected_distortion(rho: np.ndarray, x: int, d: Distortion) -> float:
    """Belief-weighted distortion sum_i rho_i d(x, i)."""
    rho = np.asarray(rho, dtype=float)
    return float(rho @ d.matrix(rho.size)[x - 1])


def kl_divergence(a: np.ndarray, b: np.ndarray) -> float:
    """KL(a || b) with 0 log 0 = 0; +inf where a has mass outside b's support."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ModelError("beliefs must have equal length")
    mask = a > 0.0
    if np.any(b[mask] == 0.0):
        return float("inf")
    return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))


@dataclass
class BeliefSet:
    """Truncated belief set with its offline projection table.

    members    (M, N) canonical belief vectors; ids 0..N-1 are the resets e_1..e_N
    index      canonical key -> member id
    lut        canonical key of each overflow (depth m+1) belief -> projected id
    nack_next  (M, N) id of the no-ACK successor of member i when transmitting x,
               already folded through the projection
    depths     (M,) BFS depth of each member (0 for resets)
    """

    n: int
    m: int
    u1: float
    u2: float
    members: np.ndarray
    index: dict
    lut: dict
    nack_next: np.ndarray
    depths: np.ndarray
    key: str = ""
    _log_smoothed: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.members.shape[0]

    @property
    def reset_ids(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.int64)

    def id_of(self, rho: np.ndarray) -> int | None:
        return self.index.get(canonical_key(rho))

    def log_smoothed(self) -> np.ndarray:
        """log of the smoothed candidate matrix used by the KL projection."""
        if self._log_smoothed is None:
            sm = self.members + PROJECT_EPS
            sm /= sm.sum(axis=1, keepdims=True)
            self._log_smoothed = np.log(sm)
        return self._log_smoothed


def project(rho: np.ndarray, bset: BeliefSet) -> int:
    """Id of the member closest to rho in KL(rho || smoothed member).

    A belief already in the set (within the canonical tolerance) snaps to its
    own id; ties in the divergence break toward the smallest id.
    """
    hit = bset.id_of(rho)
    if hit is not None:
        return int(hit)
    rho = np.asarray(rho, dtype=float)
    return int(np.argmin(_kl_to_members(rho[None, :], bset)[0]))


def _kl_to_members(rhos: np.ndarray, bset: BeliefSet) -> np.ndarray:
    """(len(rhos), M) divergences of each row against every smoothed member."""
    mask = rhos > 0.0
    slog = np.sum(np.where(mask, rhos * np.log(np.where(mask, rhos, 1.0)), 0.0), axis=1)
    return slog[:, None] - rhos @ bset.log_smoothed().T


def enumerate_belief_set(params: ModelParams) -> BeliefSet:
    """Breadth-first closure of the reset beliefs under the no-ACK update.

    Members at depth <= m are kept; applying the update to a depth-m member can
    leave the set, and each such overflow belief is projected and recorded in
    the look-up table. Requires p_s*p_f < 1 (otherwise no no-ACK chain exists).
    """
    if params.perfect_ack:
        raise ModelError("p_s*p_f = 1: belief set degenerates to the reset beliefs")
    n, m = params.n_states, params.depth
    c = nack_constants(params.p_s, params.p_f)

    members = [reset_belief(x, n) for x in range(1, n + 1)]
    index = {canonical_key(rho): i for i, rho in enumerate(members)}
    depths = [0] * n

    level = list(range(n))
    for d in range(1, m + 1):
        next_level = []
        for pid in level:
            parent = members[pid]
            for x in range(1, n + 1):
                child = update_nack(parent, x, c)
                k = canonical_key(child)
                if k not in index:
                    index[k] = len(members)
                    members.append(child)
                    depths.append(d)
                    next_level.append(index[k])
        level = next_level

    mat = np.array(members)
    bset = BeliefSet(
        n=n,
        m=m,
        u1=c.u1,
        u2=c.u2,
        members=mat,
        index=index,
        lut={},
        nack_next=np.full((len(members), n), -1, dtype=np.int64),
        depths=np.array(depths, dtype=np.int64),
        key=params.belief_key(),
    )

    # fold: no-ACK successor of every member, projecting the overflow frontier
    overflow_rows, overflow_slots = [], []
    for pid, parent in enumerate(members):
        for x in range(1, n + 1):
            child = update_nack(parent, x, c)
            k = canonical_key(child)
            hit = index.get(k)
            if hit is not None:
                bset.nack_next[pid, x - 1] = hit
            elif k in bset.lut:
                bset.nack_next[pid, x - 1] = bset.lut[k]
            else:
                overflow_rows.append(child)
                overflow_slots.append((pid, x - 1, k))
    if overflow_rows:
        divs = _kl_to_members(np.array(overflow_rows), bset)
        proj = np.argmin(divs, axis=1)
        for (pid, col, k), tgt in zip(overflow_slots, proj):
            bset.lut[k] = int(tgt)
            bset.nack_next[pid, col] = int(tgt)
    return bset


def reset_only_belief_set(params: ModelParams) -> BeliefSet:
    """Degenerate set for the perfect-ACK mode: just the N reset beliefs."""
    n = params.n_states
    members = np.eye(n)
    return BeliefSet(
        n=n,
        m=0,
        u1=float("nan"),
        u2=float("nan"),
        members=members,
        index={canonical_key(members[i]): i for i in range(n)},
        lut={},
        nack_next=np.full((n, n), -1, dtype=np.int64),
        depths=np.zeros(n, dtype=np.int64),
        key=params.belief_key(),
    )


def build_belief_set(params: ModelParams) -> BeliefSet:
    """Belief set for the given parameters, handling the perfect-ACK mode."""
    if params.perfect_ack:
        return reset_only_belief_set(params)
    return enumerate_belief_set(params)
