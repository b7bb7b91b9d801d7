import json

import numpy as np
import pytest

from ipp3d.errors import ConfigError
from ipp3d.harness import (
    AppConfig,
    ExperimentConfig,
    build_world,
    config_from_dict,
    emit_plot_data,
    load_config,
    metrics_csv,
    parse_metrics_csv,
    run_eval,
    run_train,
    runtimes_csv,
    summarize,
    summary_csv,
    write_eval_outputs,
    write_plot_series,
)
from ipp3d.policynet import NetConfig, PolicyNetwork

SMALL = {
    "map": {"width": 6, "height": 6, "k": 4, "altitudes": [8.0, 14.0]},
    "net": {"embed_dim": 8, "heads": 2, "k_pe": 3},
    "experiment": {
        "planner": "random",
        "trials": 2,
        "budget": 40.0,
        "eval_times": [0.0, 20.0, 40.0],
        "seed_base": 5,
    },
}


# ---------------------------------------------------------------- config


def test_default_config_builds():
    cfg = AppConfig()
    assert cfg.map.width == 15
    assert cfg.env.budget == 150.0
    assert cfg.experiment.budget == 200.0
    assert cfg.experiment.eval_times == (50.0, 100.0, 150.0, 200.0)


def test_config_from_dict_partial_overrides():
    cfg = config_from_dict({"map": {"width": 10}, "ppo": {"lr": 1e-3}})
    assert cfg.map.width == 10
    assert cfg.map.height == 15
    assert cfg.ppo.lr == 1e-3


def test_config_rejects_unknown_section_and_key():
    with pytest.raises(ConfigError):
        config_from_dict({"nope": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"map": {"widht": 3}})


def test_config_roi_section_propagates_to_env():
    cfg = config_from_dict({"roi": {"mu_th": 0.3, "beta": 0.5}})
    assert cfg.env.roi.mu_th == 0.3
    assert cfg.env.roi.beta == 0.5


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"map": {"width": 9, "height": 9}}))
    cfg = load_config(path, overrides={"map": {"width": 12}})
    assert cfg.map.width == 12
    assert cfg.map.height == 9
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_experiment_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(planner="alien")
    with pytest.raises(ConfigError):
        ExperimentConfig(eval_times=(100.0, 50.0))
    with pytest.raises(ConfigError):
        ExperimentConfig(eval_times=(50.0, 300.0), budget=200.0)


# ---------------------------------------------------------------- run_eval


@pytest.fixture(scope="module")
def small_eval_result():
    cfg = config_from_dict(SMALL)
    return cfg, run_eval(cfg)


def test_eval_deterministic_csv(small_eval_result):
    cfg, first = small_eval_result
    second = run_eval(cfg)
    assert metrics_csv(first.rows) == metrics_csv(second.rows)


def test_eval_time_zero_rows_are_zero(small_eval_result):
    _, result = small_eval_result
    for row in result.rows:
        if row.time_s == 0.0:
            assert row.uncertainty_reduction_pct == pytest.approx(0.0, abs=1e-9)
            assert row.rmse_reduction_pct == pytest.approx(0.0, abs=1e-9)


def test_eval_uncertainty_series_nondecreasing(small_eval_result):
    _, result = small_eval_result
    for trial in {r.trial for r in result.rows}:
        series = [r.uncertainty_reduction_pct for r in result.rows if r.trial == trial]
        assert all(b >= a - 1e-9 for a, b in zip(series, series[1:]))


def test_eval_rows_cover_trials_and_times(small_eval_result):
    cfg, result = small_eval_result
    times = cfg.experiment.eval_times
    assert len(result.rows) == cfg.experiment.trials * len(times)
    assert {r.planner for r in result.rows} == {"random"}


def test_summary_matches_independent_recomputation(small_eval_result):
    _, result = small_eval_result
    # Recompute from the serialized CSV with a separate parser.
    rows = parse_metrics_csv(metrics_csv(result.rows))
    for entry in result.summary:
        vals = [
            r.uncertainty_reduction_pct
            for r in rows
            if r.planner == entry["planner"] and r.time_s == entry["time_s"]
        ]
        assert entry["uncertainty_mean"] == pytest.approx(np.mean(vals), abs=1e-9)
        if len(vals) > 1:
            assert entry["uncertainty_std"] == pytest.approx(np.std(vals, ddof=1), abs=1e-9)


def test_eval_policy_planner_with_fresh_checkpoint(tmp_path):
    net_cfg = NetConfig(embed_dim=8, heads=2, k_pe=3)
    ckpt = tmp_path / "net.bin"
    ckpt.write_bytes(PolicyNetwork(net_cfg, seed=0).serialize())
    payload = dict(SMALL)
    payload["experiment"] = dict(SMALL["experiment"], planner="policy", checkpoint=str(ckpt), trials=1)
    cfg = config_from_dict(payload)
    result = run_eval(cfg)
    assert len(result.rows) == 3
    assert all(np.isfinite(r.uncertainty_reduction_pct) for r in result.rows)


def test_eval_policy_missing_checkpoint_rejected():
    payload = dict(SMALL)
    payload["experiment"] = dict(SMALL["experiment"], planner="policy", checkpoint="/nope.bin")
    cfg = config_from_dict(payload)
    with pytest.raises(ConfigError):
        run_eval(cfg)


def test_eval_outputs_written(tmp_path, small_eval_result):
    _, result = small_eval_result
    paths = write_eval_outputs(result, tmp_path)
    assert paths["metrics"].read_text().startswith("trial,planner,time_s,")
    assert len(paths["runtimes"].read_text().splitlines()) == 1 + 2  # header + 2 trials
    assert paths["summary"].read_text().startswith("planner,time_s,")


# ---------------------------------------------------------------- plot data


def _rows_csv(values_by_trial, planner="random", time_s=50.0):
    header = "trial,planner,time_s,uncertainty_reduction_pct,rmse_reduction_pct"
    lines = [header]
    for trial, v in enumerate(values_by_trial):
        lines.append(f"{trial},{planner},{time_s!r},{v!r},{v / 2!r}")
    return "\n".join(lines) + "\n"


def test_plot_single_trial_std_zero():
    series = emit_plot_data([_rows_csv([42.0])])
    entry = series["random"][0]
    assert entry["uncertainty_std"] == 0.0
    assert entry["uncertainty_mean"] == 42.0


def test_plot_identical_trials_std_zero():
    series = emit_plot_data([_rows_csv([7.0, 7.0, 7.0, 7.0])])
    entry = series["random"][0]
    assert entry["uncertainty_std"] == 0.0
    assert entry["uncertainty_mean"] == 7.0


def test_plot_distinct_trials_sample_std():
    vals = [1.0, 2.0, 4.0, 9.0]
    series = emit_plot_data([_rows_csv(vals)])
    entry = series["random"][0]
    # Hand-computed sample standard deviation, n-1 denominator.
    mean = sum(vals) / 4
    var = sum((v - mean) ** 2 for v in vals) / 3
    assert entry["uncertainty_mean"] == pytest.approx(mean)
    assert entry["uncertainty_std"] == pytest.approx(var**0.5)


def test_plot_schema_mismatch_rejected():
    with pytest.raises(ValueError):
        emit_plot_data(["bad,header\n1,2\n"])


def test_plot_series_files(tmp_path):
    series = emit_plot_data([_rows_csv([1.0, 3.0])])
    files = write_plot_series(series, tmp_path)
    assert [f.name for f in files] == ["random_series.csv"]
    lines = files[0].read_text().splitlines()
    assert lines[0] == "time_s,uncertainty_mean,uncertainty_std,rmse_mean,rmse_std"


# ---------------------------------------------------------------- run_train


def test_run_train_writes_artifacts(tmp_path):
    cfg = config_from_dict(
        {
            "map": {"width": 4, "height": 4, "k": 4},
            "net": {"embed_dim": 8, "heads": 2, "k_pe": 3, "ff_dim": 12},
            "ppo": {"workers": 1, "batch_size": 32, "ppo_iters": 1, "lr": 1e-4},
            "env": {"budget": 20.0, "start_position": [1.25, 1.25, 14.0]},
        }
    )
    result = run_train(cfg, total_episodes=2, out_dir=tmp_path, seed=0, parallel=False)
    assert (tmp_path / "checkpoint.bin").exists()
    assert (tmp_path / "training_log.csv").exists()
    rows = (tmp_path / "training_log.csv").read_text().splitlines()
    assert len(rows) == 3  # header + 2 episodes
    manifest = json.loads((tmp_path / "checkpoint.json").read_text())
    assert manifest["episodes"] == 2
