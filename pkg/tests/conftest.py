"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from ehtrack import (
    ModelParams,
    build_belief_set,
    build_kernel,
    build_state_space,
    solve_rvia,
    stage_costs,
)
from ehtrack.belief import nack_constants, reset_belief, update_ack, update_nack
from ehtrack.model import battery_step
from ehtrack.policies import CODE_POMDP
from ehtrack.sim import _episode_streams, _resolve_mode
from ehtrack.source import step_from_uniform


@dataclass
class BuiltInstance:
    params: ModelParams
    bset: object
    space: object
    kernel: object
    costs: np.ndarray


def build_instance(params: ModelParams) -> BuiltInstance:
    bset = build_belief_set(params)
    space = build_state_space(params, bset)
    kernel = build_kernel(space, params, bset)
    return BuiltInstance(params, bset, space, kernel, stage_costs(space, params, bset))


@pytest.fixture(scope="session")
def small_instance():
    """N=2, B=2, m=2: 108 states, everything exhaustively checkable."""
    return build_instance(
        ModelParams(n_states=2, p=0.7, p_s=0.6, p_f=0.6, mu=0.5, battery=2, depth=2)
    )


@pytest.fixture(scope="session")
def small_solution(small_instance):
    return solve_rvia(small_instance.kernel, small_instance.costs, epsilon=1e-8)


@pytest.fixture(scope="session")
def medium_instance():
    """N=3, B=3, m=3 at the reference channel setting."""
    return build_instance(
        ModelParams(n_states=3, p=0.7, p_s=0.6, p_f=0.6, mu=0.5, battery=3, depth=3)
    )


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def kosaraju_scc_count(adj_sets: list) -> int:
    """Strongly connected component count, hand-coded (iterative Kosaraju)."""
    n = len(adj_sets)
    order = []
    seen = [False] * n
    for s in range(n):
        if seen[s]:
            continue
        stack = [(s, iter(adj_sets[s]))]
        seen[s] = True
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append((nxt, iter(adj_sets[nxt])))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
    radj = [[] for _ in range(n)]
    for u, nbrs in enumerate(adj_sets):
        for v in nbrs:
            radj[v].append(u)
    comp = 0
    seen = [False] * n
    for s in reversed(order):
        if seen[s]:
            continue
        comp += 1
        stack = [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            for v in radj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
    return comp


def dense_rvia(p0: np.ndarray, p1: np.ndarray, can1: np.ndarray, costs: np.ndarray,
               epsilon: float = 1e-10, l_ref: int = 0, max_iter: int = 2_000_000):
    """Plain dense relative value iteration (test oracle)."""
    h = np.zeros(costs.size)
    for _ in range(max_iter):
        q0 = costs + p0 @ h
        q1 = costs + p1 @ h
        q1[~can1] = np.inf
        v = np.minimum(q0, q1)
        h_new = v - v[l_ref]
        if np.max(np.abs(h_new - h)) <= epsilon:
            return float(v[l_ref]), h_new
        h = h_new
    raise AssertionError("dense RVIA oracle did not converge")


def reference_episode(policy, params: ModelParams, cfg, bset=None):
    """Pure-Python episode stepper built from the public module operations.

    Mirrors the JIT core slot for slot (same sub-streams, same slot order) and
    is compared against it exactly; keep the two in sync.
    """
    mode = _resolve_mode(policy, cfg)
    truncated = mode == "truncated"
    if truncated and bset is None:
        bset = policy.bset if policy.code == CODE_POMDP else build_belief_set(params)
    n, cap = params.n_states, params.battery
    d = params.dist_matrix()
    c = None if params.perfect_ack else nack_constants(params.p_s, params.p_f)

    init, u_src, u_en, u_fw, u_fb = _episode_streams(cfg.seed, cfg.horizon)
    x = int(init.integers(1, n + 1))
    xhat, b, f_prev, x_prev = 1, 0, 0, 1
    rho = reset_belief(1, n)
    rho_id = 0

    cost_sum = 0.0
    model_sum = 0.0
    tx = dl = ack = 0
    for t in range(cfg.horizon):
        if t >= cfg.warmup:
            cost_sum += d[x - 1, xhat - 1]
            vec = bset.members[rho_id] if truncated else rho
            model_sum += float(vec @ d[x - 1])
        if policy.code == CODE_POMDP:
            sid = int(policy.space.id_lookup[x - 1, b, rho_id, f_prev, x_prev - 1])
            assert sid >= 0
            a = int(policy.actions[sid])
        else:
            vec = bset.members[rho_id] if truncated else rho
            a = policy.decide(x, b, vec, f_prev, x_prev)
        assert a <= b, "infeasible action"
        y = fb = 0
        xhat_next = xhat
        if a == 1:
            tx += 1
            if u_fw[t] < params.p_s:
                y = 1
                dl += 1
                xhat_next = x
                if u_fb[t] < params.p_f:
                    fb = 1
                    ack += 1
            if truncated:
                rho_id = x - 1 if fb else int(bset.nack_next[rho_id, x - 1])
            else:
                rho = update_ack(x, n) if fb else update_nack(rho, x, c)
        e = 1 if u_en[t] < params.mu else 0
        b = battery_step(b, e, a, cap)
        x_prev = x
        x = step_from_uniform(x, u_src[t], n, params.p, params.q)
        f_prev = fb
        xhat = xhat_next
    denom = cfg.horizon - cfg.warmup
    return cost_sum / denom, tx, dl, ack, model_sum / denom
