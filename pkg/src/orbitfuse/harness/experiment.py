"""Train/evaluate runs and the ablation grids."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..codec import InitMode
from ..dynamics import Mode
from ..estimator import Model, TrainConfig, evaluate, parse_strategy, train
from .dataset import Dataset, benchmark_config, generate_dataset, load_dataset, write_json
from .metrics import MetricsReport, position_errors

log = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    eval_dataset: str
    train_dataset: str | None = None
    mode: str = "2d"
    init_mode: str = "screen"
    gain: str = "learned"
    noise_sigma: float | None = None  # checked against the datasets when given
    burn_in: int = 6
    rollout: int = 24
    steps: int = 5000
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    use_obs_loss: bool = True
    supervised: bool = False
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # rec, ae, obs
    checkpoint_in: str | None = None
    checkpoint_out: str | None = None

    def __post_init__(self):
        Mode(self.mode)
        InitMode(self.init_mode)
        if self.burn_in < 1 or self.rollout < 0 or self.steps < 0:
            raise ValueError("burn_in must be >= 1, rollout and steps >= 0")
        if not (self.gain == "learned" or self.gain.startswith("constant:")):
            raise ValueError(f"unknown gain strategy {self.gain!r}")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    def fingerprint_dict(self) -> dict:
        """Settings that determine the result; paths for outputs are left out."""
        d = self.to_dict()
        d.pop("checkpoint_out")
        return d


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    w_rec, w_ae, w_obs = cfg.loss_weights
    return TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                       use_obs_loss=cfg.use_obs_loss, supervised=cfg.supervised,
                       weight_rec=w_rec, weight_ae=w_ae, weight_obs=w_obs)


def build_model(cfg: ExperimentConfig, dataset: Dataset) -> Model:
    dc = dataset.config
    rng = np.random.default_rng(cfg.seed)
    strategy = parse_strategy(cfg.gain, dc.scene.num_objects, rng)
    return Model.create(dc.scene, dc.camera, cfg.init_mode, strategy, rng, plane_depth=dc.camera_distance)


def train_model(cfg: ExperimentConfig, train_ds: Dataset, model: Model | None = None, progress=None):
    """Build (unless given) and train a model on ``train_ds``; returns ``(model, TrainResult)``."""
    model = build_model(cfg, train_ds) if model is None else model
    result = train(model, train_ds.training_data(), _train_config(cfg), np.random.default_rng(cfg.seed),
                   progress=progress)
    return model, result


def _check_datasets(cfg: ExperimentConfig, eval_ds: Dataset, train_ds: Dataset | None) -> None:
    for ds in filter(None, (eval_ds, train_ds)):
        if ds.config.mode.value != cfg.mode:
            raise ExperimentError(f"{ds.path}: dataset mode {ds.config.mode.value} != experiment mode {cfg.mode}")
        if cfg.noise_sigma is not None and ds.config.noise_sigma != cfg.noise_sigma:
            raise ExperimentError(f"{ds.path}: noise sigma {ds.config.noise_sigma} != {cfg.noise_sigma}")
        if ds.episodes and cfg.burn_in + cfg.rollout > ds.episodes[0].num_frames:
            raise ExperimentError(f"burn-in {cfg.burn_in} + rollout {cfg.rollout} exceeds episode length")
    if not eval_ds.episodes:
        raise ExperimentError(f"{eval_ds.path}: no evaluation episodes")
    if train_ds is not None:
        shared = set(train_ds.episode_ids) & set(eval_ds.episode_ids)
        # holdout discipline
        assert not shared, f"train and eval share {len(shared)} episode ids"


def run_experiment(cfg: ExperimentConfig, datasets: dict | None = None, progress=None) -> MetricsReport:
    """Train (when a training set and steps are given), then evaluate rollout MAE on held-out episodes.

    ``datasets`` optionally maps dataset paths to already loaded :class:`Dataset`
    objects so ablation grids do not reload them per cell.
    """
    datasets = {} if datasets is None else datasets

    def get(path):
        key = str(Path(path).resolve())
        if key not in datasets:
            datasets[key] = load_dataset(path)
        return datasets[key]

    start = time.perf_counter()
    eval_ds = get(cfg.eval_dataset)
    train_ds = get(cfg.train_dataset) if cfg.train_dataset else None
    _check_datasets(cfg, eval_ds, train_ds)
    model = build_model(cfg, eval_ds)
    if cfg.checkpoint_in:
        model.load(cfg.checkpoint_in)
    extra = {"eval_episodes": len(eval_ds), "train_episodes": len(train_ds) if train_ds else 0}
    if train_ds is not None and cfg.steps > 0:
        _, result = train_model(cfg, train_ds, model, progress)
        extra["loss_first"] = result.losses[0]
        extra["loss_last"] = result.losses[-1]
        extra["loss_last100_mean"] = float(np.mean(result.losses[-100:]))
    if cfg.checkpoint_out:
        model.save(cfg.checkpoint_out)
    data = eval_ds.training_data()
    ev = evaluate(model, data.obs, cfg.burn_in, cfg.rollout)
    n, m = cfg.burn_in, cfg.rollout
    roll_err = position_errors(ev.rollout_positions, data.positions[:, n:n + m])
    burn_err = position_errors(ev.burn_in_positions, data.positions[:, :n])
    # rollout MAE over the same frames for every shorter burn-in, to see how much each observed frame helps
    extra["mae_by_burn_in"] = [_window_mae(model, data, k, n, m) for k in range(1, n + 1)]
    config = cfg.fingerprint_dict()
    config["eval_manifest_seed"] = eval_ds.master_seed
    config["train_manifest_seed"] = train_ds.master_seed if train_ds else None
    return MetricsReport.from_errors(roll_err, burn_err, ev.gains, config, time.perf_counter() - start, extra)


def _window_mae(model: Model, data, k: int, n: int, m: int) -> float:
    """MAE on frames ``n .. n+m-1`` after burning in only ``k <= n`` frames."""
    ev = evaluate(model, data.obs, k, n + m - k)
    return float(position_errors(ev.rollout_positions[:, n - k:], data.positions[:, n:n + m]).mean())


# ------------------------------------------------------------------ ablations

@dataclass
class Cell:
    name: str
    gain: str
    init_mode: str = "screen"
    use_obs_loss: bool = True
    supervised: bool = False


SUITES = {
    "2d-gain": [Cell(f"{'obs' if obs else 'no-obs'}/{gain}", gain, use_obs_loss=obs)
                for obs in (True, False) for gain in ("constant:1", "constant:0.5", "learned")],
    "3d-depth": [Cell(f"{mode}/learned", "learned", init_mode=mode) for mode in ("gtz", "depth", "screen")],
}
# reference cells for the prediction-only and supervised comparisons
EXTRA_CELLS = {
    "2d-gain": [Cell("obs/constant:0", "constant:0"), Cell("supervised/learned", "learned", supervised=True)],
    "3d-depth": [],
}


@dataclass
class AblationConfig:
    suite: str
    out_dir: str
    seeds: tuple[int, ...] = (0, 1, 2)
    steps: int = 5000
    batch_size: int = 16
    train_episodes: int = 5000
    eval_episodes: int = 100
    train_data_seed: int = 1000
    eval_data_seed: int = 2000
    noise_sigma: float = 2.0
    include_extra: bool = True
    cells: list[str] | None = None  # restrict to these cell names; [] gives an empty grid

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; choose from {sorted(SUITES)}")

    @property
    def mode(self) -> str:
        return "2d" if self.suite.startswith("2d") else "3d"

    def grid(self) -> list[Cell]:
        cells = list(SUITES[self.suite]) + (EXTRA_CELLS[self.suite] if self.include_extra else [])
        if self.cells is not None:
            wanted = set(self.cells)
            cells = [c for c in cells if c.name in wanted]
        return cells


@dataclass
class CellSummary:
    name: str
    maes: list[float]
    reports: list[MetricsReport] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.maes)) if self.maes else float("nan")

    @property
    def spread(self) -> float:
        """Sample standard deviation across seeds (0 for a single seed)."""
        return float(np.std(self.maes, ddof=1)) if len(self.maes) > 1 else 0.0

    def mean_axis(self) -> list[float]:
        if not self.reports:
            return [float("nan")] * 3
        return [float(x) for x in np.mean([r.per_axis_mae for r in self.reports], axis=0)]


def ensure_datasets(cfg: AblationConfig) -> tuple[Path, Path]:
    root = Path(cfg.out_dir) / "data"
    dc = benchmark_config(cfg.mode, cfg.noise_sigma)
    paths = []
    for split, n, seed in (("train", cfg.train_episodes, cfg.train_data_seed),
                           ("eval", cfg.eval_episodes, cfg.eval_data_seed)):
        path = root / f"{cfg.mode}-{split}"
        manifest = path / "manifest.json"
        ok = False
        if manifest.exists():
            m = json.loads(manifest.read_text())
            ok = (m.get("master_seed") == seed and len(m.get("episodes", [])) == n
                  and m.get("config") == dc.to_dict())
        if not ok:
            log.info("generating %s (%d episodes)", path, n)
            generate_dataset(dc, n, seed, path)
        paths.append(path)
    return paths[0], paths[1]


def run_ablation_suite(cfg: AblationConfig, progress=None) -> list[CellSummary]:
    """Run every (cell, seed); each finished cell is written to ``out_dir/cells`` and reused on rerun.

    A failing cell is recorded next to the others and the grid carries on.
    """
    grid = cfg.grid()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not grid:
        write_summary(out / f"{cfg.suite}-summary.json", cfg, [])
        return []
    train_path, eval_path = ensure_datasets(cfg)
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    datasets: dict = {}
    summaries = []
    for cell in grid:
        summary = CellSummary(cell.name, [])
        for seed in cfg.seeds:
            exp = ExperimentConfig(eval_dataset=str(eval_path), train_dataset=str(train_path), mode=cfg.mode,
                                   init_mode=cell.init_mode, gain=cell.gain, noise_sigma=cfg.noise_sigma,
                                   steps=cfg.steps, batch_size=cfg.batch_size, seed=seed,
                                   use_obs_loss=cell.use_obs_loss, supervised=cell.supervised)
            stem = f"{cfg.suite}-{cell.name.replace('/', '_').replace(':', '')}-seed{seed}"
            done, failed = cells_dir / f"{stem}.json", cells_dir / f"{stem}.error.json"
            report = _cached(done, exp, cfg)
            if report is None:
                try:
                    report = run_experiment(exp, datasets, progress=progress)
                except Exception as exc:  # keep the rest of the grid going
                    log.exception("cell %s seed %d failed", cell.name, seed)
                    write_json(failed, {"cell": cell.name, "seed": seed, "error": repr(exc)})
                    summary.errors.append(repr(exc))
                    continue
                report.save(done)
                failed.unlink(missing_ok=True)
            log.info("%s seed %d: rollout MAE %.4f", cell.name, seed, report.position_mae)
            summary.maes.append(report.position_mae)
            summary.reports.append(report)
        summaries.append(summary)
    write_summary(out / f"{cfg.suite}-summary.json", cfg, summaries)
    return summaries


def _cached(path: Path, exp: ExperimentConfig, cfg: AblationConfig) -> MetricsReport | None:
    if not path.exists():
        return None
    report = MetricsReport.load(path)
    expected = exp.fingerprint_dict()
    expected.update(eval_manifest_seed=cfg.eval_data_seed, train_manifest_seed=cfg.train_data_seed)
    stored = {k: report.config.get(k) for k in expected}
    sizes = (report.extra.get("train_episodes"), report.extra.get("eval_episodes"))
    if stored != expected or sizes != (cfg.train_episodes, cfg.eval_episodes):
        return None
    if "mae_by_burn_in" not in report.extra:
        return None
    return report


def write_summary(path: Path, cfg: AblationConfig, summaries: list[CellSummary]) -> None:
    write_json(path, {"suite": cfg.suite, "seeds": list(cfg.seeds), "steps": cfg.steps, "cells": [
        {"name": s.name, "mae_mean": s.mean, "mae_spread": s.spread, "maes": s.maes,
         "per_axis_mean": s.mean_axis(), "errors": s.errors} for s in summaries]})


def format_table(summaries: list[CellSummary]) -> str:
    lines = [f"{'cell':<24} {'rollout MAE':>12} {'spread':>8} {'x':>7} {'y':>7} {'z':>7}"]
    for s in summaries:
        x, y, z = s.mean_axis()
        lines.append(f"{s.name:<24} {s.mean:>12.4f} {s.spread:>8.4f} {x:>7.3f} {y:>7.3f} {z:>7.3f}"
                     + (f"  ({len(s.errors)} failed)" if s.errors else ""))
    return "\n".join(lines)
