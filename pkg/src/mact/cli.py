"""Command-line entry point: ``mact {gen-data,train,eval,rollout,ablate,plot}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .dataset import AugmentationSpec, load_manifest, record_episode, save_episode, write_manifest
from .errors import ConfigError, EpisodeFormatError, NumericError, ParameterError, RecordingError, TaskError
from .evaluation import (
    ExpertAgent,
    PolicyAgent,
    RolloutTrace,
    coverage_score,
    evaluate,
    evaluate_rollout,
    metrics_csv,
    sample_targets,
    summarize,
)
from .sim import EnvConfig, load_env_config, reset
from .taskgen import TaskSpec

log = logging.getLogger("mact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_config(args) -> EnvConfig:
    cfg = load_env_config(args.env_config) if args.env_config else EnvConfig()
    if getattr(args, "task", None):
        try:
            task = TaskSpec.from_dict(json.loads(Path(args.task).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot read task spec {args.task}: {exc}") from exc
        cfg = replace(cfg, task=task)
    if getattr(args, "kind", None):
        cfg = replace(cfg, task=replace(cfg.task, kind=args.kind))
    cfg.validate()
    return cfg


def _agent(args):
    if args.expert:
        return ExpertAgent(), "Script"
    from .net import load_checkpoint
    from .policy import EnsembleConfig, Policy

    model = load_checkpoint(args.checkpoint)
    ens = EnsembleConfig(alpha=args.alpha, mode=args.mode)
    return PolicyAgent(Policy(model, ens)), "MACT" if model.config.T > 1 else "ACT"


def cmd_gen_data(args) -> int:
    cfg = _env_config(args)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    out = Path(args.out)
    dirs = []
    for i in range(args.episodes):
        ep = record_episode(cfg, args.seed + i)
        dirs.append(save_episode(ep, out / f"episode_{i:04d}"))
        log.info("episode %d: %d steps", i, len(ep))
    write_manifest(dirs, out / "manifest.json")
    print(f"wrote {len(dirs)} episodes to {out}")
    return EXIT_OK


def _model_config(args, overrides: dict | None = None):
    from .net import ModelConfig

    data = json.loads(Path(args.model_config).read_text()) if args.model_config else {}
    data.update(overrides or {})
    try:
        cfg = ModelConfig.from_dict(data)
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc
    return cfg


def cmd_train(args) -> int:
    from .net import TrainConfig, save_checkpoint, train

    episodes = load_manifest(args.manifest)
    res = episodes[0].resolution
    mcfg = _model_config(args)
    if mcfg.image_size != res:
        raise ConfigError(f"model image_size {mcfg.image_size} does not match episode resolution {res}")
    hyper = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                        steps_per_epoch=args.steps_per_epoch,
                        augmentation=AugmentationSpec.default() if args.augment else None)
    result = train(episodes, mcfg, hyper, seed=args.seed,
                   log=lambda r: log.info("epoch %d loss %.4f", r["epoch"], r["loss"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.npz")
    result.write_curve(out / "loss.csv")
    print(f"final loss {result.final_loss:.4f}; checkpoint at {out / 'checkpoint.npz'}")
    return EXIT_OK


def _table_row(name: str, model_cfg, te: bool, summary: dict) -> str:
    mean, sd = summary["score"]
    if model_cfg is None:
        cols = ["-", "-", "-", "-"]
    else:
        cols = [str(model_cfg.T), str(model_cfg.K), "yes" if model_cfg.use_depth else "no", "yes" if te else "no"]
    return " | ".join([f"{name:<8}", *cols, f"{mean:6.1f} ± {sd:4.1f}"])


def cmd_eval(args) -> int:
    if args.rollouts < 1:
        raise UsageError("--rollouts must be >= 1")
    cfg = _env_config(args)
    agent, name = _agent(args)
    seeds = range(args.seed, args.seed + args.rollouts)
    rows = evaluate(agent, cfg, seeds, args.max_steps)
    text = metrics_csv(rows, args.out)
    model_cfg = None if args.expert else agent.policy.model.config
    print("method   | T | K | depth | TE | score")
    print(_table_row(name, model_cfg, args.mode == "ensemble", summarize(rows)))
    if not args.out:
        print(text, end="")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _env_config(args)
    agent, _ = _agent(args)
    trace, metrics = evaluate_rollout(agent, cfg, args.seed, args.max_steps)
    trace.to_csv(args.out)
    print(f"seed {args.seed}: coverage {metrics.coverage_pct:.1f}% penalty {metrics.penalty:.3f} "
          f"score {metrics.score:.2f}; trace at {args.out}")
    return EXIT_OK


GRID_ALIASES = {"depth": "use_depth", "te": "TE", "pos_embed": "use_pos_embed"}


def ablation_grid(grid: dict) -> list[dict]:
    """Cartesian product of the grid's value lists, one dict per cell."""
    grid = {GRID_ALIASES.get(k, k): v for k, v in grid.items()}
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def cmd_ablate(args) -> int:
    from .net import TrainConfig, train
    from .policy import EnsembleConfig, Policy

    spec = json.loads(Path(args.config).read_text())
    env = EnvConfig.from_dict(spec.get("env", {}))
    grid = ablation_grid(spec.get("grid", {"T": [1, 15]}))
    n_eps = spec.get("episodes", 10)
    episodes = [record_episode(env, spec.get("data_seed", 10_000) + i) for i in range(n_eps)]
    hyper = TrainConfig.from_dict(spec.get("train", {}))
    eval_seeds = range(spec.get("eval_seed", 0), spec.get("eval_seed", 0) + spec.get("rollouts", 5))
    lines = ["T,K,use_depth,use_pos_embed,TE,train_seed,final_loss,coverage_pct,penalty,score"]
    for cell in grid:
        te = bool(cell.get("TE", False))
        model_fields = {k: v for k, v in cell.items() if k != "TE"}
        overrides = {**spec.get("model", {}), **model_fields, "image_size": env.resolution}
        mcfg = _model_config(argparse.Namespace(model_config=None), overrides)
        for train_seed in spec.get("train_seeds", [0]):
            result = train(episodes, mcfg, hyper, seed=train_seed)
            policy = Policy(result.model, EnsembleConfig(mode="ensemble" if te else "chunked",
                                                         alpha=spec.get("alpha", 0.01)))
            summary = summarize(evaluate(PolicyAgent(policy), env, eval_seeds))
            lines.append(
                f"{mcfg.T},{mcfg.K},{int(mcfg.use_depth)},{int(mcfg.use_pos_embed)},{int(te)},{train_seed},{result.final_loss!r},"
                f"{summary['coverage_pct'][0]!r},{summary['penalty'][0]!r},{summary['score'][0]!r}"
            )
            print(_table_row("MACT" if mcfg.T > 1 else "ACT", mcfg, te, summary), flush=True)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def render_svg(traces: list[RolloutTrace], region=None, summary: str = "", size: int = 480) -> str:
    """2D overlay in the region frame: region outline as a polygon, one polyline per trace."""
    pts = [t.local_positions[:, :2] for t in traces]
    if region is not None:
        pts.append(region.boundary)
    allp = np.concatenate(pts)
    lo, hi = allp.min(0) - 5.0, allp.max(0) + 5.0
    scale = (size - 20) / float(max(hi - lo))

    def fmt(p):
        x = 10 + (p[:, 0] - lo[0]) * scale
        y = size - 30 - (p[:, 1] - lo[1]) * scale
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    colours = ["#1f77b4", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"]
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if region is not None:
        parts.append(f'<polygon points="{fmt(region.boundary)}" fill="#7fd18b" fill-opacity="0.5" stroke="#2a8c3a"/>')
    for i, t in enumerate(traces):
        colour = colours[i % len(colours)]
        parts.append(f'<polyline points="{fmt(t.local_positions[:, :2])}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
    if summary:
        parts.append(f'<text x="10" y="{size - 10}" font-family="monospace" font-size="12">{escape(summary)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    traces = [RolloutTrace.from_csv(p) for p in args.trace]
    region, summary = None, ""
    if args.seed is not None:
        cfg = _env_config(args)
        state, _ = reset(cfg, args.seed)
        region = state.region
        targets = sample_targets(state.region, state.field, cfg.task.kind, seed=args.seed)
        scores = [coverage_score(t, targets) for t in traces]
        summary = "; ".join(f"score {m.score:.1f} (cov {m.coverage_pct:.1f}%, pen {m.penalty:.2f})" for m in scores)
    Path(args.out).write_text(render_svg(traces, region, summary))
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mact", description="Memory-augmented action chunking workbench for surface scanning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def env_args(sp):
        sp.add_argument("--env-config", help="environment config JSON")
        sp.add_argument("--task", help="task spec JSON (overrides the config's task)")
        sp.add_argument("--kind", choices=["contour", "raster"], help="override task kind")

    def agent_args(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--checkpoint", help="trained checkpoint (.npz)")
        g.add_argument("--expert", action="store_true", help="use the scripted expert")
        sp.add_argument("--mode", choices=["ensemble", "chunked"], default="chunked")
        sp.add_argument("--alpha", type=float, default=0.01)
        sp.add_argument("--max-steps", type=int, default=None)

    sp = sub.add_parser("gen-data", help="record scripted-expert episodes")
    env_args(sp)
    sp.add_argument("--episodes", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model from a dataset manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model-config", help="model config JSON")
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--steps-per-epoch", type=int, default=None)
    sp.add_argument("--augment", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="seeded rollouts and a metrics table")
    env_args(sp)
    agent_args(sp)
    sp.add_argument("--rollouts", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="metrics CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rollout", help="one rollout written as a trace CSV")
    env_args(sp)
    agent_args(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("ablate", help="sweep (T, K, depth, TE) from an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="results CSV path")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot", help="render trace CSVs as an SVG overlay")
    sp.add_argument("trace", nargs="+")
    env_args(sp)
    sp.add_argument("--seed", type=int, default=None, help="episode seed, to draw the region and score")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mact: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"mact: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, EpisodeFormatError, TaskError, RecordingError, ParameterError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"mact: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
