"""Finite truncated belief-MDP: indexed states, stage costs, folded kernel.

A belief-state is the tuple (x, b, rho_id, f_prev, x_prev): current source
state, battery level, id of the belief in the truncated set, last slot's ACK
indicator, and last slot's source state. The state space is the reachability
closure over the seed set of reset-belief states, indexed lexicographically.

The kernel folds the overflow projection into the transition law at build
time (no-ACK successors whose belief leaves the truncated set have their mass
re-routed to the projected member), so the solver sees a plain finite MDP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .belief import BeliefSet, expected_distortion
from .model import ModelParams

ROW_TOL = 1e-9


class BuildError(RuntimeError):
    """Kernel construction failed a structural check."""


class BeliefState(NamedTuple):
    x: int
    b: int
    rho_id: int
    f_prev: int
    x_prev: int


@dataclass
class StateSpace:
    """Reachable belief-states in lexicographic (x, b, rho_id, f_prev, x_prev) order."""

    n_states: int          # source alphabet size N
    battery: int           # capacity B
    n_beliefs: int         # members in the belief set
    x: np.ndarray          # (S,) source state, 1-based
    b: np.ndarray          # (S,) battery level
    r: np.ndarray          # (S,) belief member id
    f: np.ndarray          # (S,) previous-slot ACK indicator
    xp: np.ndarray         # (S,) previous source state, 1-based
    id_lookup: np.ndarray  # dense (N, B+1, M, 2, N) -> state id or -1

    def __len__(self) -> int:
        return self.x.size

    def state(self, i: int) -> BeliefState:
        return BeliefState(
            int(self.x[i]), int(self.b[i]), int(self.r[i]), int(self.f[i]), int(self.xp[i])
        )

    def index_of(self, l: BeliefState) -> int:
        i = int(self.id_lookup[l.x - 1, l.b, l.rho_id, l.f_prev, l.x_prev - 1])
        if i < 0:
            raise KeyError(f"belief-state {l} not in the reachable space")
        return i


@dataclass
class Kernel:
    """Sparse per-action transition law; rows of p1 exist only where b >= 1."""

    p0: sp.csr_matrix
    p1: sp.csr_matrix
    transmit_ok: np.ndarray

    def __len__(self) -> int:
        return self.p0.shape[0]


def feasible_actions(l: BeliefState) -> tuple:
    """Idling is always allowed; transmitting needs one unit of energy."""
    return (0,) if l.b == 0 else (0, 1)


def stage_cost(l: BeliefState, params: ModelParams, bset: BeliefSet) -> float:
    """Belief-weighted distortion of the current state; ignores b, f_prev, x_prev."""
    return expected_distortion(bset.members[l.rho_id], l.x, params.distortion)


def stage_costs(space: StateSpace, params: ModelParams, bset: BeliefSet) -> np.ndarray:
    d = params.dist_matrix()
    return np.einsum("si,si->s", bset.members[space.r], d[space.x - 1])


def _successor_blocks(params, bset, x, b, r, action):
    """Yield (prob, x', b', r', f', xp') arrays for every positive-probability branch.

    Branches follow the belief-state transition law: source stays (p) or moves
    to each other state (q), energy arrives (mu) or not, and for a transmission
    the ACK event (p_s*p_f) resets the belief while the no-ACK complement maps
    it through the folded no-ACK table.
    """
    n, cap = params.n_states, params.battery
    p, q, mu = params.p, params.q, params.mu
    pa = params.ack_prob

    if action == 0:
        feedback = [(1.0, r, 0)]
        b_base = b
    else:
        feedback = []
        if pa > 0.0:
            feedback.append((pa, x - 1, 1))  # reset belief e_x has id x-1
        if pa < 1.0:
            feedback.append((1.0 - pa, bset.nack_next[r, x - 1], 0))
        b_base = b - 1

    for pfb, r2, f2 in feedback:
        for pe, e in ((1.0 - mu, 0), (mu, 1)):
            if pe == 0.0:
                continue
            b2 = np.minimum(b_base + e, cap)
            yield p * pe * pfb, x, b2, r2, f2, x
            for k in range(n - 1):
                x2 = np.where(k + 1 < x, k + 1, k + 2)
                yield q * pe * pfb, x2, b2, r2, f2, x


def build_state_space(params: ModelParams, bset: BeliefSet) -> StateSpace:
    """BFS reachability closure from the consistent reset-belief seed states."""
    n, cap = params.n_states, params.battery
    m = bset.members.shape[0]
    shape = (n, cap + 1, m, 2, n)
    visited = np.zeros(shape, dtype=bool)

    def encode(x, b, r, f, xp):
        return np.ravel_multi_index((x - 1, b, r, f, xp - 1), shape)

    # seeds: every (x, b, e_{x'}, f, x') with both f values — the belief matches
    # x_prev, so f=1 seeds satisfy the ACK-consistency invariant
    sx, sb, sxp, sf = np.meshgrid(
        np.arange(1, n + 1), np.arange(cap + 1), np.arange(1, n + 1), np.arange(2),
        indexing="ij",
    )
    frontier = (
        sx.ravel().astype(np.int64),
        sb.ravel().astype(np.int64),
        (sxp.ravel() - 1).astype(np.int64),  # rho_id of reset e_{x'}
        sf.ravel().astype(np.int64),
        sxp.ravel().astype(np.int64),
    )
    if frontier[0].size == 0:
        raise BuildError("empty seed set")
    visited.flat[encode(frontier[0], frontier[1], frontier[2], frontier[3], frontier[4])] = True

    while frontier[0].size:
        x, b, r = frontier[0], frontier[1], frontier[2]
        codes = []
        for action in (0, 1):
            if action == 1:
                ok = b >= 1
                if not ok.any():
                    continue
                xa, ba, ra = x[ok], b[ok], r[ok]
            else:
                xa, ba, ra = x, b, r
            for _, x2, b2, r2, f2, xp2 in _successor_blocks(params, bset, xa, ba, ra, action):
                codes.append(encode(x2, b2, np.broadcast_to(r2, x2.shape), f2, xp2))
        codes = np.unique(np.concatenate(codes))
        new = codes[~visited.flat[codes]]
        visited.flat[new] = True
        xi, bi, ri, fi, xpi = np.unravel_index(new, shape)
        frontier = (xi + 1, bi, ri, fi, xpi + 1)

    # flatnonzero order is exactly the lexicographic (x, b, rho_id, f, x_prev) order
    all_codes = np.flatnonzero(visited.reshape(-1))
    xi, bi, ri, fi, xpi = np.unravel_index(all_codes, shape)
    id_lookup = np.full(shape, -1, dtype=np.int64)
    id_lookup.flat[all_codes] = np.arange(all_codes.size)
    return StateSpace(
        n_states=n,
        battery=cap,
        n_beliefs=m,
        x=(xi + 1).astype(np.int64),
        b=bi.astype(np.int64),
        r=ri.astype(np.int64),
        f=fi.astype(np.int64),
        xp=(xpi + 1).astype(np.int64),
        id_lookup=id_lookup,
    )


def build_kernel(space: StateSpace, params: ModelParams, bset: BeliefSet) -> Kernel:
    """Assemble the folded sparse kernel and verify row stochasticity."""
    s = len(space)
    transmit_ok = space.b >= 1
    mats = []
    for action in (0, 1):
        if action == 1:
            ids = np.flatnonzero(transmit_ok)
        else:
            ids = np.arange(s)
        x, b, r = space.x[ids], space.b[ids], space.r[ids]
        rows, cols, data = [], [], []
        for prob, x2, b2, r2, f2, xp2 in _successor_blocks(params, bset, x, b, r, action):
            nxt = space.id_lookup[
                x2 - 1, b2, np.broadcast_to(r2, x2.shape), f2, xp2 - 1
            ]
            if np.any(nxt < 0):
                raise BuildError("successor outside the reachable closure")
            rows.append(ids)
            cols.append(nxt)
            data.append(np.full(ids.size, prob))
        mat = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(s, s),
        ).tocsr()
        mats.append(mat)

    kernel = Kernel(p0=mats[0], p1=mats[1], transmit_ok=transmit_ok)
    sums0 = np.asarray(kernel.p0.sum(axis=1)).ravel()
    sums1 = np.asarray(kernel.p1.sum(axis=1)).ravel()
    if np.max(np.abs(sums0 - 1.0)) > ROW_TOL:
        raise BuildError("idle-action kernel rows are not stochastic")
    bad1 = np.where(transmit_ok, np.abs(sums1 - 1.0), np.abs(sums1))
    if np.max(bad1) > ROW_TOL:
        raise BuildError("transmit-action kernel rows are not stochastic")
    if kernel.p0.data.min() < 0 or (kernel.p1.nnz and kernel.p1.data.min() < 0):
        raise BuildError("negative transition probability")
    return kernel


def check_communicating(kernel: Kernel) -> tuple[bool, tuple[int, int] | None]:
    """Strong connectivity of the positive-transition graph under either action.

    Returns (True, None) when every state reaches every other; otherwise
    (False, (i, j)) with a witness pair such that j is not accessible from i.
    """
    adj = (kernel.p0 + kernel.p1).tocsr()
    ncomp, labels = csgraph.connected_components(adj, directed=True, connection="strong")
    if ncomp == 1:
        return True, None
    u = int(np.flatnonzero(labels == labels[0])[0])
    v = int(np.flatnonzero(labels != labels[0])[0])
    reach_u = csgraph.breadth_first_order(adj, u, directed=True, return_predecessors=False)
    if v in set(int(i) for i in reach_u):
        return False, (v, u)
    return False, (u, v)
