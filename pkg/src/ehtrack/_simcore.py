"""JIT-compiled per-slot episode loop. Keep in sync with the reference
stepper in the test suite; the two are compared action-for-action there."""

from __future__ import annotations

import numpy as np
from numba import njit

ERR_NONE = 0
ERR_STATE_NOT_FOUND = 1
ERR_INFEASIBLE_ACTION = 2


@njit(cache=True)
def run_slots(
    horizon,
    warmup,
    n,
    p,
    q,
    ps,
    pf,
    mu,
    cap,
    u1,
    u2,
    dist,        # (N, N) dist[x-1, i-1]
    colsum,      # (N,) column sums of dist
    policy_code,
    gamma,
    truncated,   # belief tracked as a member id
    table,       # (S,) int8 actions for the table policy, else size 0
    id_lookup,   # (N, B+1, M, 2, N) int64, else shape (1,1,1,1,1)
    nack_next,   # (M, N) int64 folded no-ACK successor ids
    members,     # (M, N) float64 belief vectors
    cost_table,  # (M, N) belief-weighted stage cost per (rho_id, x), truncated mode
    x0,
    u_source,
    u_energy,
    u_forward,
    u_feedback,
    trace,       # (horizon, 7) float64 [x, xhat, b, a, y, f, cost], or (0, 7)
):
    x = x0
    xhat = 1
    b = 0
    f_prev = 0
    x_prev = 1
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_id = 0

    cost_sum = 0.0
    model_cost_sum = 0.0
    transmissions = 0
    deliveries = 0
    acks = 0
    violations = 0
    bmin = cap
    bmax = 0
    bsum = 0.0
    trace_on = trace.shape[0] > 0

    for t in range(horizon):
        cost = dist[x - 1, xhat - 1]
        if t >= warmup:
            cost_sum += cost
            # belief-weighted stage cost of the tracked belief-state
            if truncated:
                model_cost_sum += cost_table[rho_id, x - 1]
            else:
                for i in range(n):
                    model_cost_sum += rho[i] * dist[x - 1, i]
        if not truncated and rho[xhat - 1] <= 0.0:
            violations += 1
        if b < bmin:
            bmin = b
        if b > bmax:
            bmax = b
        bsum += b

        # decide
        if policy_code == 0:  # solved table
            sid = id_lookup[x - 1, b, rho_id, f_prev, x_prev - 1]
            if sid < 0:
                return (cost_sum, model_cost_sum, transmissions, deliveries, acks,
                        bmin, bmax, bsum, violations, ERR_STATE_NOT_FOUND)
            a = int(table[sid])
        elif policy_code == 3:  # battery-only
            a = 1 if b >= 1 else 0
        else:
            s_x = 0.0
            u_x = 0.0
            for i in range(n):
                ri = members[rho_id, i] if truncated else rho[i]
                s_x += ri * dist[x - 1, i]
                u_x += ri * (colsum[i] - dist[x - 1, i])
            if policy_code == 4:  # battery-only with redundancy check
                a = 1 if (b >= 1 and s_x > 1e-12) else 0
            else:  # per-slot rules
                a0v = p * s_x + q * u_x
                a1v = (p * ps * dist[x - 1, x - 1] + p * (1.0 - ps) * s_x
                       + q * ps * colsum[x - 1] + q * (1.0 - ps) * u_x)
                if policy_code == 2:
                    a1v += gamma * (1.0 - mu)
                a = 1 if (b >= 1 and a1v < a0v) else 0
        if a == 1 and b < 1:
            return (cost_sum, model_cost_sum, transmissions, deliveries, acks,
                    bmin, bmax, bsum, violations, ERR_INFEASIBLE_ACTION)

        # transmit / feedback / belief
        y = 0
        fb = 0
        xhat_next = xhat
        if a == 1:
            transmissions += 1
            if u_forward[t] < ps:
                y = 1
                deliveries += 1
                xhat_next = x
                if u_feedback[t] < pf:
                    fb = 1
                    acks += 1
            if fb == 1:
                if truncated:
                    rho_id = x - 1
                else:
                    for i in range(n):
                        rho[i] = 0.0
                    rho[x - 1] = 1.0
            else:
                if truncated:
                    rho_id = nack_next[rho_id, x - 1]
                else:
                    ssum = 0.0
                    for i in range(n):
                        rho[i] = u2 * rho[i]
                    rho[x - 1] += u1
                    for i in range(n):
                        ssum += rho[i]
                    for i in range(n):
                        rho[i] /= ssum

        if trace_on:
            trace[t, 0] = x
            trace[t, 1] = xhat
            trace[t, 2] = b
            trace[t, 3] = a
            trace[t, 4] = y
            trace[t, 5] = fb
            trace[t, 6] = cost

        # energy and battery
        e = 1 if u_energy[t] < mu else 0
        b = b - a + e
        if b > cap:
            b = cap

        # source step (one uniform draw, identical mapping to source.step_from_uniform)
        us = u_source[t]
        x_prev = x
        if us >= p:
            k = int((us - p) / q)
            if k > n - 2:
                k = n - 2
            x = k + 1 if k + 1 < x else k + 2
        f_prev = fb
        xhat = xhat_next

    return (cost_sum, model_cost_sum, transmissions, deliveries, acks,
            bmin, bmax, bsum, violations, ERR_NONE)
