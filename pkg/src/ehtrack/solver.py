"""Relative value iteration for the average-cost belief-MDP.

Synchronous (Jacobi) sweeps: V_i = min_a [C + P_a h_{i-1}], h_i = V_i - V_i(ref),
stopping when the sup-norm change of h drops to epsilon. The gain is V(ref) at
termination and the policy is the final argmin with ties broken toward idling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .belief_mdp import Kernel, StateSpace


class RviaConvergenceError(RuntimeError):
    """Iteration budget exhausted before the stopping criterion was met."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"RVIA did not converge in {iterations} iterations "
            f"(last sup-norm change {residual:.3e})"
        )


@dataclass
class RviaSolution:
    policy: np.ndarray      # (S,) action per state, in {0, 1}
    gain: float             # optimal average cost
    h: np.ndarray           # relative values, h[l_ref] = 0
    iterations: int
    residual: float         # final sup-norm change of h
    l_ref: int
    epsilon: float


def _action_values(kernel: Kernel, costs: np.ndarray, h: np.ndarray):
    q0 = costs + kernel.p0 @ h
    q1 = costs + kernel.p1 @ h
    q1[~kernel.transmit_ok] = np.inf
    return q0, q1


def solve_rvia(
    kernel: Kernel,
    costs: np.ndarray,
    epsilon: float = 1e-4,
    l_ref: int = 0,
    max_iter: int = 100_000,
) -> RviaSolution:
    """Run RVIA from h = 0 until sup-norm convergence of the relative values."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    s = len(kernel)
    if not 0 <= l_ref < s:
        raise ValueError(f"reference state {l_ref} outside 0..{s - 1}")
    costs = np.asarray(costs, dtype=float)
    h = np.zeros(s)
    residual = np.inf
    for it in range(1, max_iter + 1):
        q0, q1 = _action_values(kernel, costs, h)
        v = np.minimum(q0, q1)
        gain = v[l_ref]
        h_new = v - gain
        residual = float(np.max(np.abs(h_new - h)))
        h = h_new
        if residual <= epsilon:
            q0, q1 = _action_values(kernel, costs, h)
            policy = (q1 < q0).astype(np.int8)  # ties stay idle
            return RviaSolution(
                policy=policy,
                gain=float(gain),
                h=h,
                iterations=it,
                residual=residual,
                l_ref=l_ref,
                epsilon=epsilon,
            )
    raise RviaConvergenceError(max_iter, residual)


def bellman_residual(solution: RviaSolution, kernel: Kernel, costs: np.ndarray) -> float:
    """Sup-norm defect of (gain, h) in the average-cost optimality equation."""
    q0, q1 = _action_values(kernel, costs, np.asarray(solution.h, dtype=float))
    v = np.minimum(q0, q1)
    return float(np.max(np.abs(solution.gain + solution.h - v)))


def export_policy_csv(path, space: StateSpace, solution: RviaSolution) -> None:
    """Write the policy table as one row per state: tuple columns + action."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "b", "rho_id", "f_prev", "x_prev", "action"])
        for i in range(len(space)):
            w.writerow(
                [
                    int(space.x[i]),
                    int(space.b[i]),
                    int(space.r[i]),
                    int(space.f[i]),
                    int(space.xp[i]),
                    int(solution.policy[i]),
                ]
            )
