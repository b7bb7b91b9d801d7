"""Evaluation campaigns, configuration plumbing, and metric emission.

One structured config drives everything: world geometry, belief and sensor
models, planner constants, and the experiment itself. run_eval executes
seeded trials of one planner, samples the belief at the requested mission
times, and reports uncertainty and error reduction percentages relative to
the uniform prior, plus the planner's mean per-decision wall time.

CSV layout: metric rows are fully reproducible from (config, seed_base,
trial), so they go to one file; wall-clock runtimes are inherently noisy
and go to a separate file, keeping the first byte-stable across runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from .baselines import CoveragePlanner, MctsConfig, MctsPlanner, RandomPlanner
from .belief import GpHyperparams
from .errors import ConfigError
from .groundtruth import FieldGenConfig, RoiConfig, generate_field, rmse_in_roi, roi_mask
from .policynet import NetConfig, PolicyNetwork, PolicyPlanner
from .roadmap import Roadmap, build_roadmap, node_footprints
from .sensor import SensorConfig
from .simenv import BeliefSim, EnvConfig, IppEnv
from .trainer import PpoConfig, TrainSetup, train, write_training_log

PLANNERS = ("policy", "random", "coverage", "mcts")


@dataclass(frozen=True)
class MapConfig:
    width: int = 15
    height: int = 15
    resolution: float = 2.5
    altitudes: tuple[float, ...] = (8.0, 14.0)
    k: int = 20

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError("map must be at least 2x2 cells")


@dataclass(frozen=True)
class ExperimentConfig:
    """One evaluation campaign: a planner, seeded trials, and sampling times."""

    planner: str = "random"
    trials: int = 4
    budget: float = 200.0
    eval_times: tuple[float, ...] = (50.0, 100.0, 150.0, 200.0)
    seed_base: int = 0
    checkpoint: str | None = None

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {PLANNERS}, got {self.planner!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        times = tuple(float(t) for t in self.eval_times)
        if list(times) != sorted(times):
            raise ConfigError("eval_times must be sorted ascending")
        if times and times[-1] > self.budget:
            raise ConfigError("eval_times must not exceed the budget")
        object.__setattr__(self, "eval_times", times)


@dataclass(frozen=True)
class AppConfig:
    """Root configuration; every section has working defaults."""

    map: MapConfig = dc_field(default_factory=MapConfig)
    gp: GpHyperparams = dc_field(default_factory=GpHyperparams)
    sensor: SensorConfig = dc_field(default_factory=SensorConfig)
    roi: RoiConfig = dc_field(default_factory=RoiConfig)
    env: EnvConfig = dc_field(default_factory=EnvConfig)
    gen: FieldGenConfig = dc_field(default_factory=FieldGenConfig)
    net: NetConfig = dc_field(default_factory=NetConfig)
    ppo: PpoConfig = dc_field(default_factory=PpoConfig)
    mcts: MctsConfig = dc_field(default_factory=MctsConfig)
    experiment: ExperimentConfig = dc_field(default_factory=ExperimentConfig)


_SECTIONS = {
    "map": MapConfig,
    "gp": GpHyperparams,
    "sensor": SensorConfig,
    "roi": RoiConfig,
    "env": EnvConfig,
    "gen": FieldGenConfig,
    "net": NetConfig,
    "ppo": PpoConfig,
    "mcts": MctsConfig,
    "experiment": ExperimentConfig,
}

_TUPLE_KEYS = {"altitudes", "eval_times", "start_position"}


def config_from_dict(data: dict) -> AppConfig:
    """Build the full configuration from a (possibly partial) nested dict."""
    kwargs = {}
    for section, payload in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(payload, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        cls = _SECTIONS[section]
        fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        for key in payload:
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in config section {section!r}")
        cleaned = {
            k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v
            for k, v in payload.items()
        }
        if section == "env" and "roi" in cleaned:
            cleaned["roi"] = RoiConfig(**cleaned["roi"])
        try:
            kwargs[section] = cls(**cleaned)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config section {section!r}: {exc}") from exc
    cfg = AppConfig(**kwargs)
    # The ROI rule lives on the env config the environment actually reads.
    if "roi" in data and "roi" not in data.get("env", {}):
        cfg = replace(cfg, env=replace(cfg.env, roi=cfg.roi))
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> AppConfig:
    """Read a JSON config file and apply nested {section: {key: value}} overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    for section, payload in (overrides or {}).items():
        data.setdefault(section, {}).update(payload)
    return config_from_dict(data)


@dataclass
class MetricRow:
    trial: int
    planner: str
    time_s: float
    uncertainty_reduction_pct: float
    rmse_reduction_pct: float
    decision_runtime_s: float


@dataclass
class EvalResult:
    rows: list[MetricRow]
    summary: list[dict]


def build_world(app: AppConfig) -> Roadmap:
    """Roadmap shared by every trial; geometry depends only on the map config."""
    template = generate_field(
        app.map.width, app.map.height, seed=0, gen=app.gen, resolution=app.map.resolution
    )
    return build_roadmap(template, app.map.altitudes, app.map.k, k_pe=app.net.k_pe)


def _make_planner(app: AppConfig, roadmap, footprints, seed: int):
    kind = app.experiment.planner
    if kind == "random":
        return RandomPlanner(seed)
    if kind == "coverage":
        return CoveragePlanner(roadmap, altitude=min(roadmap.altitude_levels))
    if kind == "mcts":
        sim = BeliefSim(
            roadmap,
            app.sensor,
            app.env.roi,
            app.env.speed,
            app.env.measurement_interval,
            footprints=footprints,
        )
        return MctsPlanner(sim, app.mcts, seed)
    if kind == "policy":
        if app.experiment.checkpoint is None:
            raise ConfigError("planner=policy requires a checkpoint")
        blob = Path(app.experiment.checkpoint).read_bytes()
        network = PolicyNetwork.deserialize(blob, app.net)
        return PolicyPlanner(network, roadmap.pe, seed=seed)
    raise ConfigError(f"unknown planner {kind!r}")


def run_eval(app: AppConfig, roadmap: Roadmap | None = None) -> EvalResult:
    """Run the configured campaign and compute reduction metrics at each eval time.

    Uncertainty reduction at time t is the full-map covariance trace
    relative to the uniform prior's, so the series is monotone in t. RMSE
    reduction is restricted to the regions of interest the belief
    identifies at t, normalized by the prior mean's error over the same
    cells. Both are 0 at t=0 by construction.
    """
    exp = app.experiment
    if exp.planner == "policy" and (
        exp.checkpoint is None or not Path(exp.checkpoint).exists()
    ):
        raise ConfigError(f"policy checkpoint not found: {exp.checkpoint}")
    roadmap = roadmap if roadmap is not None else build_world(app)
    footprints = node_footprints(roadmap, app.sensor)
    env_cfg = replace(app.env, budget=exp.budget)

    rows: list[MetricRow] = []
    for trial in range(exp.trials):
        seq = np.random.SeedSequence(entropy=(exp.seed_base, trial))
        field_seq, noise_seq, planner_seq = seq.spawn(3)
        truth = generate_field(
            app.map.width,
            app.map.height,
            seed=int(field_seq.generate_state(1)[0]),
            gen=app.gen,
            resolution=app.map.resolution,
        )
        env = IppEnv(truth, roadmap, env_cfg, sensor=app.sensor, gp=app.gp, footprints=footprints)
        planner = _make_planner(app, roadmap, footprints, int(planner_seq.generate_state(1)[0]))
        env.reset(seed=noise_seq, snapshot_times=exp.eval_times)

        decision_times: list[float] = []
        while not env.state.done:
            t0 = time.perf_counter()
            action = planner.select_action(env)
            decision_times.append(time.perf_counter() - t0)
            env.step(action)
        runtime = float(np.mean(decision_times)) if decision_times else 0.0

        for t_eval, mu_t, diag_t in env.snapshots:
            mu_c = np.clip(mu_t, 0.0, 1.0)
            sigma = np.sqrt(np.maximum(diag_t, 0.0))
            trace_t = float(np.sum(diag_t))
            trace_0 = app.gp.signal_variance * truth.n_cells
            roi = roi_mask(mu_c, sigma, app.env.roi)
            if roi.size == 0:
                roi = np.arange(truth.n_cells)
            rmse_t = rmse_in_roi(mu_c, truth, roi)
            rmse_0 = rmse_in_roi(np.full(truth.n_cells, 0.5), truth, roi)
            rows.append(
                MetricRow(
                    trial=trial,
                    planner=exp.planner,
                    time_s=t_eval,
                    uncertainty_reduction_pct=(trace_0 - trace_t) / trace_0 * 100.0,
                    rmse_reduction_pct=(rmse_0 - rmse_t) / rmse_0 * 100.0,
                    decision_runtime_s=runtime,
                )
            )

    return EvalResult(rows=rows, summary=summarize(rows))


def summarize(rows: list[MetricRow]) -> list[dict]:
    """Per (planner, time) means and sample standard deviations (n-1 denominator)."""
    out: list[dict] = []
    keys = sorted({(r.planner, r.time_s) for r in rows}, key=lambda x: (x[0], x[1]))
    for planner, t in keys:
        unc = np.array([r.uncertainty_reduction_pct for r in rows if (r.planner, r.time_s) == (planner, t)])
        rms = np.array([r.rmse_reduction_pct for r in rows if (r.planner, r.time_s) == (planner, t)])
        out.append(
            {
                "planner": planner,
                "time_s": t,
                "uncertainty_mean": float(unc.mean()),
                "uncertainty_std": float(unc.std(ddof=1)) if len(unc) > 1 else 0.0,
                "rmse_mean": float(rms.mean()),
                "rmse_std": float(rms.std(ddof=1)) if len(rms) > 1 else 0.0,
                "n": int(len(unc)),
            }
        )
    return out


METRICS_HEADER = "trial,planner,time_s,uncertainty_reduction_pct,rmse_reduction_pct"
RUNTIMES_HEADER = "trial,planner,decision_runtime_s"
SUMMARY_HEADER = "planner,time_s,uncertainty_mean,uncertainty_std,rmse_mean,rmse_std,n"


def metrics_csv(rows: list[MetricRow]) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r.trial},{r.planner},{r.time_s!r},"
            f"{r.uncertainty_reduction_pct!r},{r.rmse_reduction_pct!r}"
        )
    return "\n".join(lines) + "\n"


def runtimes_csv(rows: list[MetricRow]) -> str:
    lines = [RUNTIMES_HEADER]
    seen = set()
    for r in rows:
        if r.trial in seen:
            continue
        seen.add(r.trial)
        lines.append(f"{r.trial},{r.planner},{r.decision_runtime_s!r}")
    return "\n".join(lines) + "\n"


def summary_csv(summary: list[dict]) -> str:
    lines = [SUMMARY_HEADER]
    for s in summary:
        lines.append(
            f"{s['planner']},{s['time_s']!r},{s['uncertainty_mean']!r},{s['uncertainty_std']!r},"
            f"{s['rmse_mean']!r},{s['rmse_std']!r},{s['n']}"
        )
    return "\n".join(lines) + "\n"


def write_eval_outputs(result: EvalResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "runtimes": out / "runtimes.csv",
        "summary": out / "summary.csv",
    }
    paths["metrics"].write_text(metrics_csv(result.rows), encoding="utf-8", newline="\n")
    paths["runtimes"].write_text(runtimes_csv(result.rows), encoding="utf-8", newline="\n")
    paths["summary"].write_text(summary_csv(result.summary), encoding="utf-8", newline="\n")
    return paths


def parse_metrics_csv(text: str) -> list[MetricRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"metrics CSV must start with header {METRICS_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise ValueError(f"bad metrics row: {ln!r}")
        rows.append(
            MetricRow(
                trial=int(parts[0]),
                planner=parts[1],
                time_s=float(parts[2]),
                uncertainty_reduction_pct=float(parts[3]),
                rmse_reduction_pct=float(parts[4]),
                decision_runtime_s=0.0,
            )
        )
    return rows


def emit_plot_data(csv_texts: list[str]) -> dict[str, list[dict]]:
    """Aggregate metric CSVs into per-planner time series of mean and spread."""
    rows: list[MetricRow] = []
    for text in csv_texts:
        rows.extend(parse_metrics_csv(text))
    series: dict[str, list[dict]] = {}
    for s in summarize(rows):
        series.setdefault(s["planner"], []).append(s)
    return series


def write_plot_series(series: dict[str, list[dict]], out_dir: str | Path) -> list[Path]:
    """One series file per planner: time, mean, std for both metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for planner, entries in sorted(series.items()):
        lines = ["time_s,uncertainty_mean,uncertainty_std,rmse_mean,rmse_std"]
        for s in sorted(entries, key=lambda s: s["time_s"]):
            lines.append(
                f"{s['time_s']!r},{s['uncertainty_mean']!r},{s['uncertainty_std']!r},"
                f"{s['rmse_mean']!r},{s['rmse_std']!r}"
            )
        path = out / f"{planner}_series.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        written.append(path)
    return written


def run_train(
    app: AppConfig,
    total_episodes: int,
    out_dir: str | Path,
    seed: int = 0,
    randomize_start: bool = True,
    parallel: bool = True,
    progress=None,
):
    """Train per the config and leave checkpoint.bin, checkpoint.json, training_log.csv."""
    setup = TrainSetup(
        width=app.map.width,
        height=app.map.height,
        altitudes=app.map.altitudes,
        k=app.map.k,
        env=app.env,
        net=app.net,
        gen=app.gen,
        sensor=app.sensor,
        gp=app.gp,
        randomize_start=randomize_start,
    )
    result = train(
        app.ppo,
        setup,
        total_episodes,
        checkpoint_dir=out_dir,
        seed=seed,
        parallel=parallel,
        progress=progress,
    )
    write_training_log(result.log_rows, Path(out_dir) / "training_log.csv")
    return result
