"""Command line entry point: ``orbitfuse generate|train|eval|ablate|plot``.

Exit codes: 0 success, 1 invalid arguments or inputs, 2 runtime failure.
Log verbosity comes from ``ORBITFUSE_LOG_LEVEL`` (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..dynamics import Mode, SceneConfig
from ..estimator import evaluate
from .dataset import DatasetConfig, benchmark_config, decode_episode, generate_dataset, load_dataset
from .experiment import (
    AblationConfig,
    ExperimentConfig,
    build_model,
    format_table,
    run_ablation_suite,
    run_experiment,
    train_model,
)

log = logging.getLogger("orbitfuse")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _meta_path(checkpoint) -> Path:
    return Path(f"{checkpoint}.json")


def cmd_generate(args) -> int:
    if args.episodes < 0:
        raise UsageError("--episodes must be >= 0")
    if args.preset == "benchmark":
        config = benchmark_config(args.mode, args.noise_sigma)
    else:
        config = DatasetConfig(scene=SceneConfig(mode=Mode(args.mode)), noise_sigma=args.noise_sigma)
    manifest = generate_dataset(config, args.episodes, args.seed, args.out)
    print(f"wrote {len(manifest['episodes'])} episodes to {args.out} ({manifest['rejected_draws']} draws resampled)")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    cfg = ExperimentConfig(eval_dataset=args.eval_dataset or args.dataset, train_dataset=args.dataset,
                           mode=ds.config.mode.value, init_mode=args.init_mode, gain=args.gain, steps=args.steps,
                           batch_size=args.batch_size, seed=args.seed, use_obs_loss=not args.no_obs_loss,
                           supervised=args.supervised, checkpoint_out=args.checkpoint_out)
    if args.eval_dataset is None:
        # no held-out set given: train only
        model, result = train_model(cfg, ds)
        model.save(args.checkpoint_out)
        print(f"trained {cfg.steps} steps, final loss {result.losses[-1] if result.losses else float('nan'):.4f}")
    else:
        report = run_experiment(cfg)
        print(f"rollout position MAE {report.position_mae:.4f}")
        if args.report_out:
            report.save(args.report_out)
    _meta_path(args.checkpoint_out).write_text(json.dumps(
        {"init_mode": cfg.init_mode, "gain": cfg.gain, "mode": cfg.mode, "seed": cfg.seed}, sort_keys=True) + "\n")
    return EXIT_OK


def _model_meta(args) -> dict:
    meta_file = _meta_path(args.checkpoint)
    meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
    for key in ("init_mode", "gain"):
        if getattr(args, key, None):
            meta[key] = getattr(args, key)
    missing = [k for k in ("init_mode", "gain") if k not in meta]
    if missing:
        raise UsageError(f"checkpoint has no metadata file; pass --{missing[0].replace('_', '-')}")
    return meta


def cmd_eval(args) -> int:
    meta = _model_meta(args)
    ds = load_dataset(args.dataset)
    cfg = ExperimentConfig(eval_dataset=args.dataset, mode=ds.config.mode.value, init_mode=meta["init_mode"],
                           gain=meta["gain"], burn_in=args.burn_in, rollout=args.rollout, steps=0,
                           seed=meta.get("seed", 0), checkpoint_in=args.checkpoint)
    report = run_experiment(cfg, {str(Path(args.dataset).resolve()): ds})
    report.save(args.report_out)
    print(f"rollout position MAE {report.position_mae:.4f} (burn-in {report.burn_in_mae:.4f})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip() != "")
    cells = None if args.cells is None else [c for c in args.cells.split(",") if c]
    cfg = AblationConfig(suite=args.suite, out_dir=args.out_dir, seeds=seeds, steps=args.steps,
                         train_episodes=args.train_episodes, eval_episodes=args.eval_episodes, cells=cells)
    summaries = run_ablation_suite(cfg)
    print(format_table(summaries))
    return EXIT_OK if all(not s.errors for s in summaries) else EXIT_RUNTIME


def cmd_plot(args) -> int:
    from .plotting import plot_trajectories

    ep_path = Path(args.episode)
    manifest = json.loads((ep_path.parent / "manifest.json").read_text())
    config = DatasetConfig.from_dict(manifest["config"])
    episode = decode_episode(ep_path.read_bytes(), ep_path.stem, config.scene)
    predicted = []
    if args.checkpoint:
        meta = _model_meta(args)
        ds = load_dataset(ep_path.parent)
        cfg = ExperimentConfig(eval_dataset=str(ep_path.parent), mode=config.mode.value,
                               init_mode=meta["init_mode"], gain=meta["gain"], steps=0)
        model = build_model(cfg, ds)
        model.load(args.checkpoint)
        index = ds.episode_ids.index(episode.episode_id)
        data = ds.training_data().subset(np.array([index]))
        rollout = episode.num_frames - args.burn_in
        ev = evaluate(model, data.obs, args.burn_in, rollout)
        predicted = np.concatenate([ev.burn_in_positions[0], ev.rollout_positions[0]])
    plot_trajectories(episode, predicted, args.out, burn_in=args.burn_in)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orbitfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a dataset directory")
    g.add_argument("--mode", choices=["2d", "3d"], default="2d")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--noise-sigma", type=float, default=2.0)
    g.add_argument("--preset", choices=["benchmark", "default"], default="benchmark",
                   help="benchmark scene/camera (default) or the library defaults")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--dataset", required=True)
    t.add_argument("--init-mode", choices=["screen", "depth", "gtz"], default="screen")
    t.add_argument("--gain", default="learned", help="learned | constant:<k>")
    t.add_argument("--steps", type=int, default=5000)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-obs-loss", action="store_true")
    t.add_argument("--supervised", action="store_true")
    t.add_argument("--checkpoint-out", required=True)
    t.add_argument("--eval-dataset", help="held-out dataset to evaluate after training")
    t.add_argument("--report-out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--burn-in", type=int, default=6)
    e.add_argument("--rollout", type=int, default=24)
    e.add_argument("--report-out", required=True)
    e.add_argument("--init-mode", choices=["screen", "depth", "gtz"])
    e.add_argument("--gain")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--suite", choices=["2d-gain", "3d-depth"], required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--steps", type=int, default=5000)
    a.add_argument("--train-episodes", type=int, default=5000)
    a.add_argument("--eval-episodes", type=int, default=100)
    a.add_argument("--cells", help="comma-separated subset of cell names; empty string for none")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="SVG of one episode with optional predictions")
    pl.add_argument("--episode", required=True, help="path to an episode .bin inside a dataset directory")
    pl.add_argument("--checkpoint")
    pl.add_argument("--burn-in", type=int, default=6)
    pl.add_argument("--init-mode", choices=["screen", "depth", "gtz"])
    pl.add_argument("--gain")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    level = os.environ.get("ORBITFUSE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"failed: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
