"""Monte Carlo environment: episodes, policy evaluation, trace dumps.

Slot order: decide -> transmit -> feedback -> belief update -> energy arrival
and battery step -> source step. The distortion of slot t pairs X(t) with the
estimate the sink held entering the slot (a delivery updates the estimate from
t+1 on), matching the stage cost of the belief-MDP.

Randomness: each episode owns a counter-based (Philox) stream split into five
sub-streams (initial state, source, energy, forward channel, feedback), so two
policies with different transmit patterns still see identical source and
energy sample paths under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _simcore
from .belief import BeliefSet, build_belief_set
from .model import ModelError, ModelParams
from .policies import CODE_POMDP

_EMPTY_TABLE = np.zeros(0, dtype=np.int8)
_EMPTY_LOOKUP = np.zeros((1, 1, 1, 1, 1), dtype=np.int64)
_EMPTY_MAP = np.zeros((1, 1), dtype=np.int64)
_NO_TRACE = np.zeros((0, 7))

TRACE_COLUMNS = ("t", "X", "Xhat", "b", "a", "y", "f", "cost")


class SimulationError(RuntimeError):
    pass


class BatterySummary(NamedTuple):
    min: int
    mean: float
    max: int


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int
    warmup: int = 10_000
    seed: int = 0
    belief_mode: str | None = None  # exact | truncated | None (policy default)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")
        if not 0 <= self.warmup < self.horizon:
            raise ModelError("warmup must satisfy 0 <= warmup < horizon")
        if self.belief_mode not in (None, "exact", "truncated"):
            raise ModelError(f"unknown belief_mode {self.belief_mode!r}")


@dataclass
class EpisodeResult:
    mean_cost: float            # realized (1/T') sum of d(X(t), Xhat(t))
    mean_model_cost: float      # belief-weighted stage cost along the trajectory
    transmissions: int
    deliveries: int
    ack_received: int
    battery_trace_summary: BatterySummary
    support_violations: int
    trace: np.ndarray | None = field(default=None, compare=False, repr=False)


def _episode_streams(seed: int, horizon: int):
    children = np.random.SeedSequence(seed).spawn(5)
    gens = [np.random.Generator(np.random.Philox(key=c.generate_state(2, np.uint64)))
            for c in children]
    init, src, energy, fwd, fbk = gens
    return (
        init,
        src.random(horizon),
        energy.random(horizon),
        fwd.random(horizon),
        fbk.random(horizon),
    )


def _resolve_mode(policy, cfg: EpisodeConfig) -> str:
    mode = cfg.belief_mode
    if policy.code == CODE_POMDP:
        if mode == "exact":
            raise ModelError("table policies need belief_mode='truncated'")
        return "truncated"
    return mode or "exact"


def run_episode(
    policy,
    params: ModelParams,
    cfg: EpisodeConfig,
    bset: BeliefSet | None = None,
    collect_trace: bool = False,
) -> EpisodeResult:
    """Simulate one seeded episode of the full system under `policy`."""
    mode = _resolve_mode(policy, cfg)
    truncated = mode == "truncated"
    if truncated and bset is None:
        bset = policy.bset if policy.code == CODE_POMDP else build_belief_set(params)

    if policy.code == CODE_POMDP:
        table = policy.actions
        id_lookup = policy.space.id_lookup
    else:
        table, id_lookup = _EMPTY_TABLE, _EMPTY_LOOKUP
    if truncated:
        nack_next, members = bset.nack_next, bset.members
        if params.perfect_ack is False and np.any(nack_next < 0):
            raise ModelError("belief set has no folded no-ACK map")
        cost_table = members @ params.dist_matrix().T  # [r, x-1] = sum_i rho_i d(x, i)
    else:
        nack_next, members = _EMPTY_MAP, np.zeros((1, params.n_states))
        cost_table = np.zeros((1, 1))

    init, u_source, u_energy, u_forward, u_feedback = _episode_streams(cfg.seed, cfg.horizon)
    x0 = int(init.integers(1, params.n_states + 1))
    trace = np.empty((cfg.horizon, 7)) if collect_trace else _NO_TRACE

    out = _simcore.run_slots(
        cfg.horizon,
        cfg.warmup,
        params.n_states,
        params.p,
        params.q,
        params.p_s,
        params.p_f,
        params.mu,
        params.battery,
        _u1(params),
        _u2(params),
        params.dist_matrix(),
        params.dist_matrix().sum(axis=0),
        policy.code,
        float(policy.gamma),
        truncated,
        table,
        id_lookup,
        nack_next,
        members,
        cost_table,
        x0,
        u_source,
        u_energy,
        u_forward,
        u_feedback,
        trace,
    )
    (cost_sum, model_cost_sum, transmissions, deliveries, acks,
     bmin, bmax, bsum, violations, err) = out
    if err == _simcore.ERR_STATE_NOT_FOUND:
        raise SimulationError("reached a belief-state outside the policy's table")
    if err == _simcore.ERR_INFEASIBLE_ACTION:
        raise SimulationError("policy transmitted on an empty battery")
    return EpisodeResult(
        mean_cost=cost_sum / (cfg.horizon - cfg.warmup),
        mean_model_cost=model_cost_sum / (cfg.horizon - cfg.warmup),
        transmissions=int(transmissions),
        deliveries=int(deliveries),
        ack_received=int(acks),
        battery_trace_summary=BatterySummary(int(bmin), bsum / cfg.horizon, int(bmax)),
        support_violations=int(violations),
        trace=trace if collect_trace else None,
    )


def _u1(params: ModelParams) -> float:
    if params.perfect_ack:
        return 0.0
    return params.p_s * (1.0 - params.p_f) / (1.0 - params.ack_prob)


def _u2(params: ModelParams) -> float:
    if params.perfect_ack:
        return 0.0
    return (1.0 - params.p_s) / (1.0 - params.ack_prob)


@dataclass
class PolicyEvaluation:
    mean: float
    se: float
    ci_low: float
    ci_high: float
    rep_means: np.ndarray
    episodes: list

    @property
    def ci_half(self) -> float:
        return 1.96 * self.se


def evaluate_policy(
    policy,
    params: ModelParams,
    horizon: int,
    reps: int,
    base_seed: int,
    warmup: int = 10_000,
    belief_mode: str | None = None,
    bset: BeliefSet | None = None,
) -> PolicyEvaluation:
    """Independent episodes with seeds base_seed + i; normal 95% CI on the mean."""
    if reps < 2:
        raise ModelError("evaluate_policy needs reps >= 2")
    if truncated_needed(policy, belief_mode) and bset is None and policy.code != CODE_POMDP:
        bset = build_belief_set(params)
    episodes = []
    for i in range(reps):
        cfg = EpisodeConfig(horizon=horizon, warmup=warmup, seed=base_seed + i,
                            belief_mode=belief_mode)
        episodes.append(run_episode(policy, params, cfg, bset=bset))
    means = np.array([ep.mean_cost for ep in episodes])
    mean = float(means.mean())
    se = float(means.std(ddof=1) / np.sqrt(reps))
    return PolicyEvaluation(
        mean=mean,
        se=se,
        ci_low=mean - 1.96 * se,
        ci_high=mean + 1.96 * se,
        rep_means=means,
        episodes=episodes,
    )


def truncated_needed(policy, belief_mode: str | None) -> bool:
    return policy.code == CODE_POMDP or belief_mode == "truncated"


def write_trace_csv(path, trace: np.ndarray) -> None:
    """Per-slot dump: t, X, Xhat, b, a, y, f, cost."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for t in range(trace.shape[0]):
            row = trace[t]
            w.writerow([t + 1, *(int(v) for v in row[:6]), f"{row[6]:.10g}"])
