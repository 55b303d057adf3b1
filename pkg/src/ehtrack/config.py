"""YAML experiment configuration: schema validation with explicit messages.

A config file has nested sections; `model` is always required, the others
depend on the subcommand:

    model:       n_states, p, p_s, p_f, mu, battery, depth, distortion
    solver:      epsilon, max_iter, ref_state
    policy:      kind (pomdp|lc_agnostic|lc_aware|bo|bo_rc), gamma
    sim:         horizon, reps, warmup, seed, belief_mode
    experiment:  name, sweep {axis, values}, policies, horizon, reps, warmup,
                 seed, gamma {value|grid, horizon, reps}
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .model import DISTORTION_KINDS, ModelError, ModelParams

POLICY_NAMES = ("pomdp", "lc_agnostic", "lc_aware", "bo", "bo_rc")
SWEEP_AXES = ("p", "mu", "N", "p_f", "p_s", "B", "m", "gamma")
INT_AXES = {"N", "B", "m"}


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


_REQUIRED = object()


def _require(section: dict, where: str, key: str, types, default=_REQUIRED):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing required key '{where}.{key}'")
        return default
    val = section[key]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"'{where}.{key}' must be {_type_name(types)}, got a boolean")
    if not isinstance(val, types):
        raise ConfigError(
            f"'{where}.{key}' must be {_type_name(types)}, got {type(val).__name__}"
        )
    return val


def _type_name(types) -> str:
    if isinstance(types, tuple):
        return " or ".join(t.__name__ for t in types)
    return types.__name__


def _check_known(section: dict, where: str, allowed) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}.{key}' (allowed: {', '.join(allowed)})")


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping of sections")
    _check_known(cfg, "config", ("model", "solver", "policy", "sim", "experiment"))
    return cfg


def parse_model(cfg: dict) -> ModelParams:
    if "model" not in cfg:
        raise ConfigError("missing required section 'model'")
    sec = cfg["model"]
    if not isinstance(sec, dict):
        raise ConfigError("'model' must be a mapping")
    _check_known(
        sec, "model",
        ("n_states", "p", "p_s", "p_f", "mu", "battery", "depth", "distortion"),
    )
    kind = _require(sec, "model", "distortion", str, "absolute")
    if kind not in DISTORTION_KINDS:
        raise ConfigError(
            f"'model.distortion' must be one of {DISTORTION_KINDS}, got {kind!r}"
        )
    try:
        return ModelParams(
            n_states=_require(sec, "model", "n_states", int),
            p=float(_require(sec, "model", "p", (int, float))),
            p_s=float(_require(sec, "model", "p_s", (int, float))),
            p_f=float(_require(sec, "model", "p_f", (int, float))),
            mu=float(_require(sec, "model", "mu", (int, float))),
            battery=_require(sec, "model", "battery", int),
            depth=_require(sec, "model", "depth", int, 6),
            distortion=kind,
        )
    except ModelError as exc:
        raise ConfigError(f"invalid 'model' section: {exc}") from exc


def parse_solver(cfg: dict) -> dict:
    sec = cfg.get("solver", {})
    if not isinstance(sec, dict):
        raise ConfigError("'solver' must be a mapping")
    _check_known(sec, "solver", ("epsilon", "max_iter", "ref_state"))
    out = dict(
        epsilon=float(_require(sec, "solver", "epsilon", (int, float), 1e-4)),
        max_iter=_require(sec, "solver", "max_iter", int, 100_000),
        ref_state=_require(sec, "solver", "ref_state", int, 0),
    )
    if out["epsilon"] <= 0:
        raise ConfigError("'solver.epsilon' must be positive")
    return out


def parse_policy(cfg: dict) -> dict:
    if "policy" not in cfg:
        raise ConfigError("missing required section 'policy'")
    sec = cfg["policy"]
    if not isinstance(sec, dict):
        raise ConfigError("'policy' must be a mapping")
    _check_known(sec, "policy", ("kind", "gamma"))
    kind = _require(sec, "policy", "kind", str)
    if kind not in POLICY_NAMES:
        raise ConfigError(f"'policy.kind' must be one of {POLICY_NAMES}, got {kind!r}")
    gamma = sec.get("gamma")
    if gamma is not None:
        gamma = float(_require(sec, "policy", "gamma", (int, float)))
        if gamma < 0:
            raise ConfigError("'policy.gamma' must be nonnegative")
        if kind != "lc_aware":
            raise ConfigError("'policy.gamma' only applies to kind 'lc_aware'")
    return dict(kind=kind, gamma=gamma)


def parse_sim(cfg: dict) -> dict:
    sec = cfg.get("sim", {})
    if not isinstance(sec, dict):
        raise ConfigError("'sim' must be a mapping")
    _check_known(sec, "sim", ("horizon", "reps", "warmup", "seed", "belief_mode"))
    out = dict(
        horizon=_require(sec, "sim", "horizon", int, 1_000_000),
        reps=_require(sec, "sim", "reps", int, 10),
        warmup=_require(sec, "sim", "warmup", int, 10_000),
        seed=_require(sec, "sim", "seed", int, 0),
        belief_mode=sec.get("belief_mode"),
    )
    if out["belief_mode"] not in (None, "exact", "truncated"):
        raise ConfigError("'sim.belief_mode' must be 'exact' or 'truncated'")
    if out["horizon"] <= out["warmup"]:
        raise ConfigError("'sim.horizon' must exceed 'sim.warmup'")
    if out["reps"] < 2:
        raise ConfigError("'sim.reps' must be >= 2")
    return out


def parse_gamma_tuning(sec: dict, where: str) -> dict:
    _check_known(sec, where, ("value", "grid", "horizon", "reps"))
    grid = sec.get("grid")
    if grid is not None:
        if not isinstance(grid, list) or not grid or not all(
            isinstance(g, (int, float)) and not isinstance(g, bool) and g >= 0 for g in grid
        ):
            raise ConfigError(f"'{where}.grid' must be a nonempty list of gammas >= 0")
        grid = [float(g) for g in grid]
    value = sec.get("value")
    if value is not None:
        value = float(_require(sec, where, "value", (int, float)))
        if value < 0:
            raise ConfigError(f"'{where}.value' must be nonnegative")
    return dict(
        value=value,
        grid=grid,
        horizon=_require(sec, where, "horizon", int, 100_000),
        reps=_require(sec, where, "reps", int, 20),
    )


def apply_preset_overrides(spec, cfg: dict):
    """Field-by-field preset overrides from a (possibly partial) config.

    `model` keys replace the preset base parameters, `solver` keys the solver
    settings, and `experiment` horizon/reps/warmup/seed/gamma the evaluation
    settings; the sweep axis, values, and policy list stay the preset's own.
    Evaluation keys that do not apply to a preset kind (structure dumps have
    no horizon/reps) are skipped, so one override file serves every preset.
    """
    from dataclasses import fields as dc_fields
    from dataclasses import replace as dc_replace

    spec_fields = {f.name for f in dc_fields(spec)}
    sec = cfg.get("model", {})
    if not isinstance(sec, dict):
        raise ConfigError("'model' must be a mapping")
    _check_known(
        sec, "model",
        ("n_states", "p", "p_s", "p_f", "mu", "battery", "depth", "distortion"),
    )
    if sec:
        try:
            spec = dc_replace(spec, base=dc_replace(spec.base, **sec))
        except (ModelError, TypeError) as exc:
            raise ConfigError(f"invalid 'model' override: {exc}") from exc
    if "solver" in cfg:
        solver = parse_solver(cfg)
        spec = dc_replace(spec, epsilon=solver["epsilon"],
                          max_iter=solver["max_iter"], ref_state=solver["ref_state"])
    esec = cfg.get("experiment", {})
    if not isinstance(esec, dict):
        raise ConfigError("'experiment' must be a mapping")
    _check_known(esec, "experiment",
                 ("name", "horizon", "reps", "warmup", "seed", "gamma"))
    scalars = {}
    for key in ("horizon", "reps", "warmup", "seed"):
        # evaluation settings silently skip presets that do not evaluate
        # (structure dumps), so one override file can serve every preset
        if key in esec and key in spec_fields:
            scalars[key] = _require(esec, "experiment", key, int)
    if scalars:
        spec = dc_replace(spec, **scalars)
    if "gamma" in esec:
        g = parse_gamma_tuning(esec["gamma"] or {}, "experiment.gamma")
        over = dict(gamma=g["value"], gamma_horizon=g["horizon"],
                    gamma_reps=g["reps"])
        if "gamma_grid" in spec_fields:
            over["gamma_grid"] = g["grid"]
        spec = dc_replace(spec, **over)
    return spec


def parse_experiment(cfg: dict):
    from .experiments import ExperimentSpec  # circular-import guard

    if "experiment" not in cfg:
        raise ConfigError("missing required section 'experiment'")
    sec = cfg["experiment"]
    if not isinstance(sec, dict):
        raise ConfigError("'experiment' must be a mapping")
    _check_known(
        sec, "experiment",
        ("name", "sweep", "policies", "horizon", "reps", "warmup", "seed", "gamma"),
    )
    sweep = _require(sec, "experiment", "sweep", dict)
    _check_known(sweep, "experiment.sweep", ("axis", "values"))
    axis = _require(sweep, "experiment.sweep", "axis", str)
    if axis not in SWEEP_AXES:
        raise ConfigError(
            f"'experiment.sweep.axis' must be one of {SWEEP_AXES}, got {axis!r}"
        )
    values = _require(sweep, "experiment.sweep", "values", list)
    if not values:
        raise ConfigError("'experiment.sweep.values' must be nonempty")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int if axis in INT_AXES else (int, float)):
            raise ConfigError(
                f"'experiment.sweep.values' entries must be "
                f"{'integers' if axis in INT_AXES else 'numbers'} for axis {axis!r}"
            )
    policies = _require(sec, "experiment", "policies", list)
    if not policies:
        raise ConfigError("'experiment.policies' must be nonempty")
    for name in policies:
        if name not in POLICY_NAMES:
            raise ConfigError(
                f"unknown policy {name!r} in 'experiment.policies' "
                f"(allowed: {', '.join(POLICY_NAMES)})"
            )
    gamma = parse_gamma_tuning(sec.get("gamma", {}) or {}, "experiment.gamma")
    solver = parse_solver(cfg)
    base = parse_model(cfg)
    try:
        spec = ExperimentSpec(
            name=_require(sec, "experiment", "name", str, "experiment"),
            base=base,
            sweep_axis=axis,
            sweep_values=[int(v) if axis in INT_AXES else float(v) for v in values],
            policies=list(policies),
            horizon=_require(sec, "experiment", "horizon", int, 1_000_000),
            reps=_require(sec, "experiment", "reps", int, 10),
            warmup=_require(sec, "experiment", "warmup", int, 10_000),
            seed=_require(sec, "experiment", "seed", int, 0),
            epsilon=solver["epsilon"],
            max_iter=solver["max_iter"],
            ref_state=solver["ref_state"],
            gamma=gamma["value"],
            gamma_grid=gamma["grid"],
            gamma_horizon=gamma["horizon"],
            gamma_reps=gamma["reps"],
        )
    except ModelError as exc:
        raise ConfigError(f"invalid 'experiment' section: {exc}") from exc
    return spec
