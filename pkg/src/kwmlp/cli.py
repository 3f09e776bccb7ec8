"""Command-line entry point: ``kwmlp <command> [--config run.json] [--key value ...]``.

Any config key can be overridden on the command line, e.g.
``kwmlp train --data-root data/speech_commands_v0.02 --epochs 1``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .audio import load_wav, pad_or_trim, compute_mfcc, write_feature_cache
from .checkpoint import (CheckpointIntegrityError, CheckpointSchemaError, assign_tensors,
                         read_checkpoint, save_checkpoint)
from .config import ConfigError, RunConfig, mixer_recipe
from .dataset import CACHE_ENV, SPLITS, DatasetConfigError, FeatureStore, scan_dataset
from .mixer import count_mixer_macs
from .model import count_macs, count_params
from .training import evaluate, predict, train

log = logging.getLogger("kwmlp")

PAPER_PARAMS = 424_000
PAPER_MACS = 0.045e9


# ----------------------------------------------------------------------------
# config plumbing


def parse_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def load_config(args, extra: list[str]) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(parse_overrides(extra)) if extra else cfg


def open_dataset(cfg: RunConfig):
    if not cfg.data_root:
        raise ConfigError("data_root is not set (use --data-root PATH)")
    index = scan_dataset(cfg.data_root)
    if cfg.subset:
        index = index.subset(cfg.subset, cfg.seed)
    if len(index.label_names) > cfg.num_classes:
        raise ConfigError(f"dataset has {len(index.label_names)} labels but num_classes={cfg.num_classes}")
    cache = os.environ.get(CACHE_ENV) or cfg.cache_dir or None
    features = FeatureStore(cfg.data_root, cfg.mfcc_config(), cache_dir=cache, workers=cfg.workers,
                            preload=len(index.entries) <= 20_000)
    return index, features


def snapshot(cfg: RunConfig, label_names, **extra) -> dict:
    return {"config": cfg.to_dict(), "label_names": list(label_names), **extra}


def load_model(path):
    snap, tensors = read_checkpoint(path)
    try:
        cfg = RunConfig.from_dict(snap["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointSchemaError(f"checkpoint has no usable config snapshot: {exc}") from exc
    params = cfg.build_model()
    assign_tensors(params, tensors)
    return cfg, params, snap


# ----------------------------------------------------------------------------
# commands


def run_training(cfg: RunConfig, out_dir: Path) -> dict:
    """Train one arm into ``out_dir``; returns a summary dict."""
    index, features = open_dataset(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    params = cfg.build_model()

    def on_best(p, row):
        save_checkpoint(out_dir / "best.ckpt", snapshot(cfg, index.label_names, epoch=row["epoch"],
                                                        val_acc=row["val_acc"]), p)

    t0 = time.perf_counter()
    result = train(params, index, cfg.train_config(), features, out_dir / "metrics.csv", on_best=on_best)
    save_checkpoint(out_dir / "last.ckpt", snapshot(cfg, index.label_names, epoch=len(result.rows)), params)
    summary = {"epochs": len(result.rows), "best_epoch": result.best_epoch,
               "best_val_acc": result.best_val_acc, "seconds": time.perf_counter() - t0}
    if index.split("test"):
        _, best, _ = load_model(out_dir / "best.ckpt")
        summary["test_acc"], summary["test_loss"] = evaluate(best, index, "test", features,
                                                             cfg.label_smoothing, cfg.batch_size)
    features.close()
    return summary


def cmd_train(args, extra) -> int:
    cfg = load_config(args, extra)
    print(f"seed {cfg.seed}")
    summary = run_training(cfg, Path(cfg.output_dir))
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


def cmd_eval(args, extra) -> int:
    cfg, params, _ = load_model(args.checkpoint)
    if extra:
        cfg = cfg.with_overrides({k: v for k, v in parse_overrides(extra).items()
                                  if k in ("data_root", "cache_dir", "workers", "subset")})
    index, features = open_dataset(cfg)
    acc, loss = evaluate(params, index, args.split, features, cfg.label_smoothing, cfg.batch_size)
    print(f"{args.split} accuracy {acc:.4f}  loss {loss:.4f}  ({len(index.split(args.split))} clips)")
    return 0


def cmd_infer(args, extra) -> int:
    cfg, params, snap = load_model(args.checkpoint)
    labels = snap.get("label_names") or [str(i) for i in range(cfg.num_classes)]
    mfcc = compute_mfcc(pad_or_trim(load_wav(args.wav)), cfg.mfcc_config())
    probs = predict(params, mfcc)
    for i in np.argsort(-probs, kind="stable")[: args.top]:
        name = labels[i] if i < len(labels) else f"class_{i}"
        print(f"{name}:{probs[i]:.6f}")
    return 0


def cmd_features(args, extra) -> int:
    cfg = load_config(args, extra)
    target = Path(args.path)
    if target.is_dir():
        cache = os.environ.get(CACHE_ENV) or cfg.cache_dir or args.out
        if not cache:
            raise ConfigError("give --out DIR, cache_dir, or $" + CACHE_ENV + " for the feature cache")
        index = scan_dataset(target)
        store = FeatureStore(target, cfg.mfcc_config(), cache_dir=cache, workers=cfg.workers)
        for e in index.entries:
            store.load(e.path)
        store.close()
        print(f"cached {len(index.entries)} clips under {cache}")
        return 0
    mfcc = compute_mfcc(pad_or_trim(load_wav(target)), cfg.mfcc_config())
    if args.out:
        write_feature_cache(args.out, mfcc)
        print(f"wrote {mfcc.shape[0]}x{mfcc.shape[1]} features to {args.out}")
    else:
        print(f"shape {mfcc.shape}  min {mfcc.min():.4f}  max {mfcc.max():.4f}  mean {mfcc.mean():.4f}")
    return 0


def cmd_params(args, extra) -> int:
    cfg = load_config(args, extra)
    total, breakdown = count_params(cfg.build_model())
    grouped: dict[str, int] = {}
    for key, n in breakdown.items():
        parts = key.split(".")
        if parts[0] == "blocks":
            grouped[f"block {parts[1]}"] = grouped.get(f"block {parts[1]}", 0) + n
            grouped[f"  all blocks: {parts[2]}"] = grouped.get(f"  all blocks: {parts[2]}", 0) + n
        else:
            grouped[key] = n
    print(f"arch {cfg.arch}")
    for key in sorted(k for k in grouped if not k.startswith("block") and not k.startswith("  ")):
        print(f"{key:>22s} {grouped[key]:>10,d}")
    for key in sorted((k for k in grouped if k.startswith("block")), key=lambda k: int(k.split()[1])):
        print(f"{key:>22s} {grouped[key]:>10,d}")
    for key in sorted(k for k in grouped if k.startswith("  ")):
        print(f"{key:>22s} {grouped[key]:>10,d}")
    print(f"{'total':>22s} {total:>10,d}  ({total / 1e6:.3f} M)")
    if args.check:
        ok = abs(total - PAPER_PARAMS) <= 0.01 * PAPER_PARAMS
        print(f"check vs 424,000 +/-1%: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_flops(args, extra) -> int:
    cfg = load_config(args, extra)
    mcfg = cfg.model_config()
    macs = count_mixer_macs(mcfg) if cfg.arch == "mixer" else count_macs(mcfg)
    print(f"arch {cfg.arch}: {macs:,d} MACs per {mcfg.n_mfcc}x{mcfg.n_frames} input ({macs / 1e9:.4f} G, 1 MAC = 1 FLOP)")
    if args.check:
        ok = abs(macs - PAPER_MACS) <= 0.10 * PAPER_MACS
        print(f"check vs 0.045 G +/-10%: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_gradcheck(args, extra) -> int:
    from .gradcheck import TOLERANCE, run_suite
    if args.scale != "toy":
        raise ConfigError("only --scale toy is supported")
    tol = TOLERANCE if args.tol is None else args.tol
    suites = run_suite(args.arch, range(args.seeds))
    ok = True
    for name, errs in suites.items():
        worst = max(errs)
        passed = worst <= tol
        ok &= passed
        print(f"{name:12s} seeds={len(errs):3d}  max rel err {worst:.3e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def ablation_arms(which: str, cfg: RunConfig, same_recipe: bool = False) -> dict[str, RunConfig]:
    if which == "prenorm":
        base = cfg.with_overrides({"arch": "kwmlp"})
        return {"postnorm": base.with_overrides({"norm": "post"}),
                "prenorm": base.with_overrides({"norm": "pre"})}
    if which == "mixer":
        base = cfg.with_overrides({"arch": "kwmlp"})
        mixer = base.with_overrides({"arch": "mixer"}) if same_recipe else mixer_recipe(base)
        return {"kwmlp": base, "mixer": mixer}
    raise ConfigError(f"unknown ablation {which!r}")


def write_comparison(path: Path, arms: dict[str, Path]) -> None:
    curves = {}
    for name, arm_dir in arms.items():
        with open(arm_dir / "metrics.csv", newline="") as fh:
            curves[name] = list(csv.DictReader(fh))
    n = max(len(rows) for rows in curves.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + [f"{a}_{m}" for a in curves for m in ("val_loss", "val_acc")])
        for i in range(n):
            row = [i + 1]
            for rows in curves.values():
                row += [rows[i]["val_loss"], rows[i]["val_acc"]] if i < len(rows) else ["", ""]
            w.writerow(row)


def cmd_ablate(args, extra) -> int:
    cfg = load_config(args, extra)
    print(f"seed {cfg.seed}")
    out = Path(cfg.output_dir)
    arms = ablation_arms(args.which, cfg, args.same_recipe)
    dirs = {}
    for name, arm_cfg in arms.items():
        arm_dir = out / name
        print(f"== {name}")
        summary = run_training(arm_cfg.with_overrides({"output_dir": str(arm_dir)}), arm_dir)
        for k, v in summary.items():
            print(f"   {k}: {v}")
        dirs[name] = arm_dir
    write_comparison(out / "comparison.csv", dirs)
    print(f"validation curves: {out / 'comparison.csv'}")
    return 0


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kwmlp", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model (config keys as --key value)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and loss of a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="top-k labels for one WAV file")
    p.add_argument("checkpoint")
    p.add_argument("wav")
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("features", help="MFCC for one WAV, or fill the cache for a dataset directory")
    p.add_argument("path")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_features)

    for name, fn in (("params", cmd_params), ("flops", cmd_flops)):
        p = sub.add_parser(name, help=f"report {name} for a config")
        p.add_argument("--config")
        p.add_argument("--check", action="store_true", help="exit 1 outside the published figure's tolerance")
        p.set_defaults(func=fn)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--arch", default="all", choices=("kwmlp", "mixer", "all"))
    p.add_argument("--scale", default="toy")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=None, help="relative error bound (default 1e-4)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run both arms of an ablation with shared seed and data order")
    p.add_argument("which", choices=("prenorm", "mixer"))
    p.add_argument("--config")
    p.add_argument("--same-recipe", action="store_true",
                   help="mixer arm keeps the KW-MLP optimizer settings instead of Adam + exponential decay")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command in ("train", "ablate") else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if extra and args.command not in ("train", "eval", "features", "params", "flops", "ablate"):
        ap.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra)
    except (CheckpointIntegrityError, CheckpointSchemaError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
