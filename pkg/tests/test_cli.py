import csv

import numpy as np
import pytest

from ehtrack.cache import load_belief_set, load_kernel, load_solution
from ehtrack.cli import main
from ehtrack.config import ConfigError, load_config, parse_experiment, parse_model
from ehtrack.experiments import (
    ExperimentSpec,
    figure_presets,
    get_preset,
    run_experiment,
    run_structure,
    solve_instance,
    write_rows_csv,
)
from ehtrack.model import ModelError, ModelParams
from ehtrack.belief import build_belief_set


SMALL_CFG = """
model:
  n_states: 2
  p: 0.8
  p_s: 0.6
  p_f: 0.6
  mu: 0.5
  battery: 2
  depth: 2
solver:
  epsilon: 1.0e-4
policy:
  kind: bo
sim:
  horizon: 5000
  reps: 3
  warmup: 500
  seed: 17
experiment:
  name: tiny
  sweep: {axis: p, values: [0.7, 0.8]}
  policies: [pomdp, bo]
  horizon: 5000
  reps: 3
  warmup: 500
  seed: 17
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(SMALL_CFG)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_parse_model_roundtrip(cfg_file):
    params = parse_model(load_config(cfg_file))
    assert params == ModelParams(n_states=2, p=0.8, p_s=0.6, p_f=0.6, mu=0.5,
                                 battery=2, depth=2)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        ("model:\n  n_states: 2\n", "missing required key 'model.p'"),
        ("experiment:\n  sweep: {axis: z, values: [1]}\n", "sweep.axis"),
        ("experiment:\n  sweep: {axis: p, values: []}\n", "nonempty"),
        ("experiment:\n  sweep: {axis: p, values: [0.7]}\n  policies: []\n",
         "policies"),
        ("experiment:\n  sweep: {axis: p, values: [0.7]}\n  policies: [warp]\n",
         "unknown policy"),
        ("bogus_section: {}\n", "unknown key"),
    ],
)
def test_config_errors(tmp_path, mutate, fragment):
    base = (
        "model:\n  n_states: 2\n  p: 0.8\n  p_s: 0.6\n  p_f: 0.6\n"
        "  mu: 0.5\n  battery: 2\n  depth: 2\n"
    )
    text = mutate if mutate.startswith("model") else base + mutate
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        cfg = load_config(path)
        parse_model(cfg)
        parse_experiment(cfg)
    assert fragment in str(err.value)


def test_out_of_range_sweep_values_rejected_at_parse(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(
        "model:\n  n_states: 3\n  p: 0.7\n  p_s: 0.6\n  p_f: 0.6\n"
        "  mu: 0.5\n  battery: 3\n  depth: 2\n"
        "experiment:\n  sweep: {axis: p, values: [0.2, 0.7]}\n  policies: [bo]\n"
    )
    with pytest.raises(ConfigError):
        parse_experiment(load_config(path))


def test_gamma_requires_lc_aware(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(
        "model:\n  n_states: 2\n  p: 0.8\n  p_s: 0.6\n  p_f: 0.6\n"
        "  mu: 0.5\n  battery: 2\n  depth: 2\n"
        "policy:\n  kind: bo\n  gamma: 0.5\n"
    )
    from ehtrack.config import parse_policy

    with pytest.raises(ConfigError):
        parse_policy(load_config(path))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def test_run_experiment_rows(cfg_file):
    spec = parse_experiment(load_config(cfg_file))
    rows = run_experiment(spec)
    assert len(rows) == 4
    assert [(r.sweep_value, r.policy) for r in rows] == [
        (0.7, "pomdp"), (0.7, "bo"), (0.8, "pomdp"), (0.8, "bo"),
    ]
    for r in rows:
        assert r.error is None
        assert 0.0 <= r.mean_cost <= 1.0
        assert r.ci_low <= r.mean_cost <= r.ci_high
        if r.policy == "pomdp":
            assert r.solver_gain is not None and r.state_count > 0
        else:
            assert r.solver_gain is None


def test_run_experiment_worker_pool_matches_serial(cfg_file):
    spec = parse_experiment(load_config(cfg_file))
    serial = run_experiment(spec, jobs=1)
    parallel = run_experiment(spec, jobs=2)
    for a, b in zip(serial, parallel):
        assert (a.sweep_value, a.policy, a.mean_cost, a.solver_gain) == (
            b.sweep_value, b.policy, b.mean_cost, b.solver_gain,
        )


def test_per_point_failure_recorded_and_sweep_continues(cfg_file):
    spec = parse_experiment(load_config(cfg_file))
    bad = ExperimentSpec(**{**spec.__dict__, "max_iter": 1, "name": "bad"})
    rows = run_experiment(bad)
    errors = [r for r in rows if r.error]
    assert len(errors) == 2  # both pomdp points fail to converge
    assert all("RviaConvergenceError" in r.error for r in errors)
    assert all(r.error is None for r in rows if r.policy == "bo")


def test_gamma_sweep_axis():
    base = ModelParams(n_states=2, p=0.8, p_s=0.6, p_f=0.6, mu=0.5, battery=2, depth=2)
    spec = ExperimentSpec(name="g", base=base, sweep_axis="gamma",
                          sweep_values=[0.0, 0.5], policies=["lc_aware"],
                          horizon=3000, reps=2, warmup=300, seed=5)
    rows = run_experiment(spec)
    assert [r.sweep_value for r in rows] == [0.0, 0.5]
    assert all(r.error is None for r in rows)
    with pytest.raises(ModelError):
        ExperimentSpec(name="g", base=base, sweep_axis="gamma", sweep_values=[0.1],
                       policies=["bo"], horizon=100, reps=2, warmup=0, seed=5)


def test_csv_determinism_modulo_timing(tmp_path, cfg_file):
    spec = parse_experiment(load_config(cfg_file))
    paths = []
    for i in (0, 1):
        rows = run_experiment(spec)
        path = tmp_path / f"run{i}.csv"
        write_rows_csv(path, rows)
        paths.append(path)
    a, b = (read_rows(p) for p in paths)
    for ra, rb in zip(a, b):
        ra.pop("build_seconds"), rb.pop("build_seconds")
        ra.pop("solve_seconds"), rb.pop("solve_seconds")
        assert ra == rb


def test_cache_round_trip(tmp_path):
    params = ModelParams(n_states=2, p=0.8, p_s=0.6, p_f=0.6, mu=0.5, battery=2,
                         depth=2)
    fresh = solve_instance(params, 1e-4, 100_000, 0, cache_dir=tmp_path)
    again = solve_instance(params, 1e-4, 100_000, 0, cache_dir=tmp_path)
    assert abs(fresh[4].gain - again[4].gain) <= 1e-12
    assert np.array_equal(fresh[4].policy, again[4].policy)

    bset = load_belief_set(tmp_path, params)
    direct = build_belief_set(params)
    assert np.array_equal(bset.members, direct.members)
    assert np.array_equal(bset.nack_next, direct.nack_next)
    assert bset.lut == direct.lut
    space_kernel = load_kernel(tmp_path, params)
    assert space_kernel is not None
    sol = load_solution(tmp_path, params, 1e-4, 0)
    assert sol.gain == fresh[4].gain

    # the belief set is keyed by (N, p_s, p_f, m): a p-only change still hits it,
    # while the kernel (full parameter key) does not
    same_beliefs = ModelParams(n_states=2, p=0.9, p_s=0.6, p_f=0.6, mu=0.5,
                               battery=2, depth=2)
    assert load_belief_set(tmp_path, same_beliefs) is not None
    assert load_kernel(tmp_path, same_beliefs) is None
    other = ModelParams(n_states=2, p=0.8, p_s=0.5, p_f=0.6, mu=0.5, battery=2,
                        depth=2)
    assert load_belief_set(tmp_path, other) is None


def test_solved_gain_same_with_and_without_cache(tmp_path):
    params = ModelParams(n_states=2, p=0.8, p_s=0.6, p_f=0.6, mu=0.5, battery=2,
                         depth=2)
    nocache = solve_instance(params, 1e-4, 100_000, 0, cache_dir=None)
    cached = solve_instance(params, 1e-4, 100_000, 0, cache_dir=tmp_path)
    reloaded = solve_instance(params, 1e-4, 100_000, 0, cache_dir=tmp_path)
    assert nocache[4].gain == cached[4].gain == reloaded[4].gain


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def test_figure_preset_catalog():
    presets = figure_presets()
    assert set(presets) == {f"fig{i}" for i in range(2, 11)}

    fig7 = presets["fig7"].sweeps[0][1]
    assert fig7.base.p == 0.7 and fig7.base.n_states == 3
    assert fig7.base.p_s == 0.6 and fig7.base.p_f == 0.6 and fig7.base.battery == 3
    assert fig7.sweep_axis == "mu"
    assert fig7.sweep_values == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]

    fig10 = presets["fig10"]
    assert len(fig10.sweeps) == 3
    for (_, spec), mu in zip(fig10.sweeps, (0.3, 0.5, 0.7)):
        assert spec.base.mu == mu and spec.base.p_f == 0.7
        assert spec.sweep_axis == "B" and spec.sweep_values == [1, 3, 6, 9]
        assert spec.policies == ["pomdp"]

    fig2 = presets["fig2"]
    assert [s.base.p_s for _, s in fig2.sweeps] == [0.2, 0.4, 0.6]
    assert all(s.sweep_values == [1, 2, 3, 4, 5, 6, 7] for _, s in fig2.sweeps)

    fig5 = presets["fig5"].structures[0][1]
    assert fig5.base.n_states == 2 and fig5.base.p_s == 0.4 and fig5.base.p_f == 0.5
    assert fig5.base.mu == 0.7 and fig5.base.battery == 3
    assert fig5.p_values == [0.51, 0.7, 0.9]

    with pytest.raises(ModelError):
        get_preset("fig99")


def test_run_structure_dump():
    from ehtrack.experiments import StructureSpec

    base = ModelParams(n_states=2, p=0.7, p_s=0.4, p_f=0.5, mu=0.7, battery=3, depth=2)
    spec = StructureSpec(name="s", base=base, p_values=[0.7], policies=["pomdp"])
    header, rows = run_structure(spec)
    assert header[:7] == ["p", "policy", "x", "b", "rho_id", "f_prev", "x_prev"]
    assert header[-1] == "action"
    assert all(r[1] == "pomdp" for r in rows)
    assert all(r[-1] in (0, 1) for r in rows)
    # rule-policy dump: every (x, b, member) combination appears
    spec = StructureSpec(name="s", base=base, p_values=[0.7],
                         policies=["lc_agnostic"])
    header, rows = run_structure(spec)
    bset = build_belief_set(base)
    assert len(rows) == 2 * 4 * len(bset)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def test_cli_sweep_and_exit_codes(tmp_path, cfg_file, capsys):
    out = tmp_path / "rows.csv"
    code = main(["sweep", "--config", str(cfg_file), "--out", str(out)])
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 4
    assert set(rows[0]) == {
        "sweep_value", "policy", "mean_cost", "ci_low", "ci_high", "solver_gain",
        "build_seconds", "solve_seconds", "state_count", "error",
    }


def test_cli_solve_and_policy_export(tmp_path, cfg_file, capsys):
    out = tmp_path / "policy.csv"
    code = main(["solve", "--config", str(cfg_file), "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "gain:" in printed and "communicating: True" in printed
    assert out.exists()


def test_cli_simulate_with_trace(tmp_path, cfg_file, capsys):
    trace = tmp_path / "trace.csv"
    code = main(["simulate", "--config", str(cfg_file), "--trace", str(trace)])
    assert code == 0
    assert "mean cost:" in capsys.readouterr().out
    assert trace.read_text().startswith("t,X,Xhat,b,a,y,f,cost")


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("model:\n  n_states: 2\n")
    code = main(["solve", "--config", str(path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_cli_partial_failure_exit_code(tmp_path, cfg_file):
    text = cfg_file.read_text().replace("epsilon: 1.0e-4",
                                        "epsilon: 1.0e-9\n  max_iter: 1")
    bad = tmp_path / "bad.yaml"
    bad.write_text(text)
    out = tmp_path / "rows.csv"
    code = main(["sweep", "--config", str(bad), "--out", str(out)])
    assert code == 2
    rows = read_rows(out)
    assert any(r["error"] for r in rows)


def test_cli_tune_gamma(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "model:\n  n_states: 2\n  p: 0.8\n  p_s: 0.6\n  p_f: 0.6\n"
        "  mu: 0.5\n  battery: 2\n  depth: 2\n"
        "experiment:\n  sweep: {axis: p, values: [0.8]}\n  policies: [lc_aware]\n"
        "  gamma: {grid: [0.0, 0.5], horizon: 2000, reps: 2}\n"
    )
    out = tmp_path / "gamma.csv"
    code = main(["tune-gamma", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert "best gamma:" in capsys.readouterr().out
    rows = read_rows(out)
    assert [r["gamma"] for r in rows] == ["0", "0.5"]


def test_cli_preset_unknown_name(capsys):
    assert main(["preset", "fig99"]) == 1
    assert "unknown preset" in capsys.readouterr().err


def test_preset_overrides_field_by_field(tmp_path):
    from ehtrack.config import apply_preset_overrides

    spec = figure_presets()["fig7"].sweeps[0][1]
    over = apply_preset_overrides(
        spec,
        {"model": {"depth": 2, "battery": 2},
         "solver": {"epsilon": 1e-3},
         "experiment": {"horizon": 40_000, "reps": 3, "seed": 5}},
    )
    assert over.base.depth == 2 and over.base.battery == 2
    assert over.base.p == spec.base.p  # untouched fields keep preset values
    assert over.epsilon == 1e-3 and over.horizon == 40_000 and over.reps == 3
    assert over.sweep_values == spec.sweep_values
    with pytest.raises(ConfigError):
        apply_preset_overrides(spec, {"model": {"p": 0.2}})
    with pytest.raises(ConfigError):
        apply_preset_overrides(spec, {"model": {"warp": 1}})
    # evaluation settings don't apply to structure dumps and are ignored there,
    # so one override file can serve every preset
    sspec = figure_presets()["fig5"].structures[0][1]
    sover = apply_preset_overrides(
        sspec, {"model": {"depth": 2}, "experiment": {"horizon": 1000, "seed": 4}}
    )
    assert sover.base.depth == 2 and sover.seed == 4

    # end to end through the CLI: a cut-down fig10 run
    cfg = tmp_path / "over.yaml"
    cfg.write_text(
        "model: {depth: 1, battery: 2}\n"
        "experiment: {horizon: 20000, reps: 2, warmup: 1000}\n"
    )
    code = main(["preset", "fig10", "--config", str(cfg),
                 "--out", str(tmp_path), "--jobs", "1"])
    assert code == 0
    rows = read_rows(tmp_path / "fig10_mu0.3.csv")
    # the preset sweeps B in {1,3,6,9}; the battery override applies to the
    # base only and the swept axis still wins per point
    assert [r["sweep_value"] for r in rows] == ["1", "3", "6", "9"]
    assert all(r["error"] == "" for r in rows)
