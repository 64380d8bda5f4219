"""Command-line entry point: train / eval / bench / ablate / gen.

Configs are diff-friendly `key = value` text. Unknown keys are rejected;
defaults match the published hyperparameter settings. The M4D_SEED
environment variable overrides any configured seed.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import ablate, bench, report, training
from .checkpoint import load_checkpoint, save_checkpoint
from .geometry import load_pcv, save_pcv
from .model import Mamba4DConfig, Mamba4DModel

TASK_LABEL_KIND = {"recognition": "video", "action_seg": "frame",
                   "semantic_seg": "point"}


@dataclass
class RunConfig:
    model: Mamba4DConfig
    videos: int = 60
    frames: int = 8
    points: int = 64
    noise: float = 0.01
    base_rate: float = 0.35
    data: str = ""
    out: str = "m4d_out"
    eval_frac: float = 0.2
    early_stop_acc: float = 0.0   # 0 disables early stopping


class ConfigError(Exception):
    pass


def _parse_value(raw, kind):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean {raw!r}")
    if kind is tuple:
        return tuple(int(v) for v in raw.split(",") if v)
    return kind(raw)


def parse_config_text(text):
    """`key = value` lines (# comments) -> RunConfig; unknown keys rejected."""
    model_fields = {f.name: f for f in fields(Mamba4DConfig)}
    run_fields = {f.name: f for f in fields(RunConfig) if f.name != "model"}
    model_kv, run_kv = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in model_fields:
            f = model_fields[key]
            kind = {"decay_epochs": tuple}.get(key, type(getattr(Mamba4DConfig(), key)))
            model_kv[key] = _parse_value(raw, kind)
        elif key in run_fields:
            kind = type(getattr(RunConfig(Mamba4DConfig()), key))
            run_kv[key] = _parse_value(raw, kind)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "task" not in model_kv:
        raise ConfigError("missing required key 'task'")
    try:
        mc = Mamba4DConfig(**model_kv)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    cfg = RunConfig(model=mc, **run_kv)
    seed_env = os.environ.get("M4D_SEED")
    if seed_env is not None:
        cfg = replace(cfg, model=replace(mc, seed=int(seed_env)))
    return cfg


def load_run_config(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text)


def effective_config_text(cfg):
    lines = []
    for f in fields(Mamba4DConfig):
        v = getattr(cfg.model, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    for f in fields(RunConfig):
        if f.name == "model":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def _dataset(cfg):
    if cfg.data:
        path = Path(cfg.data)
        if path.is_dir():
            files = sorted(path.glob("*.pcv"))
            if not files:
                raise ConfigError(f"no .pcv files in {path}")
            return [load_pcv(p) for p in files]
        if not path.exists():
            raise ConfigError(f"dataset not found: {path}")
        return [load_pcv(path)]
    spec = training.SyntheticSpec(
        seed=cfg.model.seed, classes=cfg.model.classes, points=cfg.points,
        frames=cfg.frames, noise=cfg.noise, base_rate=cfg.base_rate,
        label_kind=TASK_LABEL_KIND[cfg.model.task])
    return training.make_dataset(spec, cfg.videos)


def _split(videos, eval_frac):
    n_eval = int(round(len(videos) * eval_frac))
    if n_eval == 0:
        return videos, []
    return videos[:-n_eval], videos[-n_eval:]


def cmd_train(args):
    cfg = load_run_config(args.config)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train_videos, eval_videos = _split(_dataset(cfg), cfg.eval_frac)
    log_lines = []
    model, _ = training.train_model(
        cfg.model, train_videos, log_lines=log_lines,
        early_stop_acc=cfg.early_stop_acc or None)
    if eval_videos:
        metrics = training.evaluate(model, eval_videos, clip_len=cfg.frames)
        for name, value in metrics.items():
            log_lines.append(f"metric={name} value={value:.6f} epoch=-1")
    save_checkpoint(((n, p.data) for n, p in model.named_params()),
                    out / "model.ckpt")
    (out / "config.txt").write_text(effective_config_text(cfg))
    (out / "metrics.log").write_text("\n".join(log_lines) + "\n")
    for line in log_lines:
        print(line)
    return 0


def cmd_eval(args):
    cfg_path = args.config or Path(args.ckpt).with_name("config.txt")
    cfg = load_run_config(cfg_path)
    cfg = replace(cfg, data=args.data)
    videos = _dataset(cfg)
    model = Mamba4DModel(cfg.model, c_in=videos[0].C)
    model.load_state(load_checkpoint(args.ckpt))
    metrics = training.evaluate(model, videos, clip_len=cfg.frames)
    for name, value in metrics.items():
        print(f"metric={name} value={value:.6f}")
    return 0


def cmd_bench(args):
    lengths = tuple(int(v) for v in args.lengths.split(","))
    kernels = tuple(args.kernels.split(","))
    records = bench.run_bench(lengths=lengths, kernels=kernels, d=args.d,
                              repeats=args.repeats)
    slopes = bench.fit_slopes(records)
    lines = [r.line() for r in records]
    lines += [f"kernel={k} slope={v:.4f}" for k, v in slopes.items()]
    for line in lines:
        print(line)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text("\n".join(lines) + "\n")
        report.plot_bench(records, slopes, out / "bench.png")
    return 0


def cmd_ablate(args):
    cfg = load_run_config(args.config)
    train_videos, eval_videos = _split(_dataset(cfg), cfg.eval_frac)
    rows = ablate.run_ablation(args.axis, cfg.model, train_videos, eval_videos)
    lines = [f"axis={args.axis} row={label} accuracy={acc:.4f}"
             for label, acc in rows]
    for line in lines:
        print(line)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablate_{args.axis}.txt").write_text("\n".join(lines) + "\n")
        report.plot_ablation(args.axis, rows, out / f"ablate_{args.axis}.png")
    return 0


def cmd_gen(args):
    try:
        text = Path(args.spec).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read spec {args.spec}: {e}") from None
    kv = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, raw = (p.strip() for p in line.split("=", 1))
        kv[key] = raw
    allowed = {f.name for f in fields(training.SyntheticSpec)} | {"cls"}
    unknown = set(kv) - allowed
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    cls = kv.pop("cls", None)
    spec_kwargs = {}
    for f in fields(training.SyntheticSpec):
        if f.name in kv:
            spec_kwargs[f.name] = _parse_value(kv[f.name], type(getattr(
                training.SyntheticSpec(), f.name)))
    seed_env = os.environ.get("M4D_SEED")
    if seed_env is not None:
        spec_kwargs["seed"] = int(seed_env)
    video = training.generate_synthetic(
        training.SyntheticSpec(**spec_kwargs),
        cls=None if cls is None else int(cls))
    save_pcv(video, args.out)
    print(f"wrote {args.out} (T={video.T} N={video.N} label_kind={video.label_kind})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="m4d",
                                     description="Point-cloud-video SSM backbone")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="runtime/memory scaling benchmark")
    p.add_argument("--lengths", default=",".join(str(L) for L in bench.DEFAULT_LENGTHS))
    p.add_argument("--kernels", default="ssm_seq,ssm_par,attention")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("ablate", help="toy-scale ablation sweep")
    p.add_argument("--axis", required=True, choices=ablate.AXES)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gen", help="generate a synthetic .pcv video")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
