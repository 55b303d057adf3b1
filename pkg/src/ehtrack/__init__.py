"""Tracking a finite-state Markov source over lossy channels with an
energy-harvesting transmitter: truncated belief-MDP solver, per-slot policies,
baselines, and a Monte Carlo evaluation harness."""

from .model import Distortion, ModelError, ModelParams, battery_step, distortion_eval
from .source import TransitionMatrix, k_step_matrix, ml_estimate, step_source
from .belief import (
    BeliefSet,
    NackConstants,
    as_belief,
    build_belief_set,
    canonical_key,
    enumerate_belief_set,
    expected_distortion,
    kl_divergence,
    nack_constants,
    project,
    reset_belief,
    update_ack,
    update_idle,
    update_nack,
)
from .belief_mdp import (
    BeliefState,
    BuildError,
    Kernel,
    StateSpace,
    build_kernel,
    build_state_space,
    check_communicating,
    feasible_actions,
    stage_cost,
    stage_costs,
)
from .solver import (
    RviaConvergenceError,
    RviaSolution,
    bellman_residual,
    export_policy_csv,
    solve_rvia,
)
from .policies import (
    BoPolicy,
    BoRcPolicy,
    LcAgnosticPolicy,
    LcAwarePolicy,
    PomdpTablePolicy,
    bo_decide,
    bo_rc_decide,
    expected_next_cost,
    lc_agnostic_decide,
    lc_aware_decide,
    tune_gamma,
)
from .sim import (
    EpisodeConfig,
    EpisodeResult,
    PolicyEvaluation,
    SimulationError,
    evaluate_policy,
    run_episode,
)
from .experiments import (
    ExperimentSpec,
    figure_presets,
    run_experiment,
    solve_instance,
)

__version__ = "0.1.0"
