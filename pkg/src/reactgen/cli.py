"""Command-line surface.

Verbs: make-dataset, train-vae, train-reactor, generate, evaluate, inspect.
Global flags (before the verb): --config, --seed, --precision, --preset, and
the ablation switches. Exit codes: 0 success, 2 configuration or usage
error, 3 file/parse error, 4 numeric or training failure.

A single --seed reseeds every stage deterministically (dataset, vae,
reactor, generate, evaluate get seed..seed+4), so one flag makes a whole run
reproducible without a config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

from reactgen import pipeline as pl
from reactgen.checkpoint import load_checkpoint, summarize
from reactgen.config import PRESETS, RunConfig, SeedsSection, load_config
from reactgen.engine import generate as engine_generate
from reactgen.errors import (CheckpointError, CheckpointMismatchError,
                             ConfigError, ContractError, MotionIOError,
                             ReactgenError, TrainingError)
from reactgen.evalsuite import (ClassifierSettings, run_protocol,
                                train_classifier, write_report)
from reactgen.motion import (InteractionPair, make_synthetic_dataset,
                             read_motion, write_motion)
from reactgen.rng import stream
from reactgen.tensor import set_default_dtype
from reactgen.vae import train_vae

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="reactgen",
        description="Action-reaction motion synthesis at desk scale.")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed; reseeds every stage")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--no-mum", action="store_true",
                   help="disable cross-unit modulation")
    p.add_argument("--mum-direction", choices=("b2h", "h2b", "both"))
    p.add_argument("--fusion", choices=("acf", "concat"))
    p.add_argument("--no-unit-division", action="store_true",
                   help="single whole-body unit (implies no modulation)")
    p.add_argument("--loss", choices=("diffusion", "l2"))

    sub = p.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("make-dataset", help="synthesize the paired dataset")
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("train-vae", help="stage one: unit tokenizers")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--curve", help="loss record path (default <out>.curve)")
    sp.add_argument("--resume", help="continue from an existing checkpoint")

    sp = sub.add_parser("train-reactor", help="stage two: masked reaction model")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--vae", required=True, help="stage-one checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve")

    sp = sub.add_parser("generate", help="synthesize reactions for action files")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--mode", choices=("offline", "online"))
    sp.add_argument("actions", nargs="+", help="action motion files")

    sp = sub.add_parser("evaluate", help="metric protocol on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="report path prefix")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--pairs", type=int, default=32,
                    help="S: diversity/multimodality pair count")
    sp.add_argument("--mode", choices=("offline", "online", "both"))
    sp.add_argument("--clf-steps", type=int, default=300)

    sp = sub.add_parser("inspect", help="describe a checkpoint")
    sp.add_argument("checkpoint")
    return p


def _configure(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.preset:
        cfg = dataclasses.replace(cfg, preset=args.preset)
    if args.seed is not None:
        s = args.seed
        cfg = dataclasses.replace(cfg, seeds=SeedsSection(s, s + 1, s + 2, s + 3, s + 4))
    ab = cfg.ablations
    if args.no_mum:
        ab = dataclasses.replace(ab, mum_mode="off")
    if args.mum_direction:
        ab = dataclasses.replace(ab, mum_mode=args.mum_direction)
    if args.fusion:
        ab = dataclasses.replace(ab, fusion=args.fusion)
    if args.no_unit_division:
        ab = dataclasses.replace(ab, unit_division=False)
    if args.loss:
        ab = dataclasses.replace(ab, loss=args.loss)
    return dataclasses.replace(cfg, ablations=ab)


# ---------------------------------------------------------------------------
# Dataset directory layout: manifest.json + pairs/NNNNN.{action,reaction}.mot

def _write_dataset(out_dir: str, cfg: RunConfig) -> dict:
    ds = cfg.dataset
    pairs = make_synthetic_dataset(ds.num_pairs, ds.n_frames, ds.num_classes,
                                   ds.lag, ds.noise_std, cfg.seeds.dataset,
                                   ds.fps)
    pair_dir = os.path.join(out_dir, "pairs")
    os.makedirs(pair_dir, exist_ok=True)
    records = []
    for i, p in enumerate(pairs):
        action = os.path.join("pairs", f"{i:05d}.action.mot")
        reaction = os.path.join("pairs", f"{i:05d}.reaction.mot")
        write_motion(os.path.join(out_dir, action), p.action)
        write_motion(os.path.join(out_dir, reaction), p.reaction)
        records.append({"action": action, "reaction": reaction,
                        "class": p.class_label, "split": p.split_tag})
    manifest = {
        "num_pairs": ds.num_pairs,
        "n_frames": ds.n_frames,
        "num_classes": ds.num_classes,
        "lag": ds.lag,
        "noise_std": ds.noise_std,
        "fps": ds.fps,
        "seed": cfg.seeds.dataset,
        "train_count": sum(1 for p in pairs if p.split_tag == "train"),
        "test_count": sum(1 for p in pairs if p.split_tag == "test"),
        "pairs": records,
    }
    canon = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    manifest["manifest_hash"] = hashlib.sha256(canon.encode()).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_dataset(path: str) -> list:
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MotionIOError(f"{manifest_path}: invalid manifest ({exc})") from None
    pairs = []
    for rec in manifest["pairs"]:
        pairs.append(InteractionPair(
            action=read_motion(os.path.join(path, rec["action"])),
            reaction=read_motion(os.path.join(path, rec["reaction"])),
            class_label=int(rec["class"]),
            split_tag=rec["split"],
        ))
    if not pairs:
        raise MotionIOError(f"{manifest_path}: manifest lists no pairs")
    return pairs


# ---------------------------------------------------------------------------
# Verbs.

def _cmd_make_dataset(cfg: RunConfig, args) -> int:
    manifest = _write_dataset(args.out, cfg)
    print(f"wrote {manifest['num_pairs']} pairs "
          f"({manifest['train_count']} train / {manifest['test_count']} test) "
          f"to {args.out}")
    print(f"manifest hash {manifest['manifest_hash']}")
    return EXIT_OK


def _progress(tag: str, every: int = 200):
    def cb(step, value):
        if step % every == 0:
            print(f"[{tag}] step {step}: loss {value:.5f}")
    return cb


def _cmd_train_vae(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(args.dataset)
    pipe = pl.build_pipeline(cfg)
    initial = None
    if args.resume:
        pl.load_stage_one(args.resume, pipe)
        initial = pipe.vaes
    stage = cfg.training.vae
    vaes, history = train_vae(
        dataset, pipe.groups, pl.vae_settings(cfg), steps=stage.steps,
        batch_size=stage.batch_size, seed=cfg.seeds.vae, lr=stage.lr,
        betas=(cfg.training.beta1, cfg.training.beta2),
        warmup_steps=stage.warmup_steps, progress=_progress("vae"),
        initial=initial)
    pipe.vaes = vaes
    pl.save_stage_one(args.out, pipe)
    pl.write_curve(args.curve or args.out + ".curve", history)
    print(f"saved stage-one checkpoint to {args.out} "
          f"(final loss {history[-1][1]:.5f})")
    return EXIT_OK


def _cmd_train_reactor(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(args.dataset)
    pipe = pl.build_pipeline(cfg)
    vae_part = pl.load_stage_one(args.vae, pipe)
    history, _ = pl.train_reactor(pipe, dataset, progress=_progress("reactor"))
    pl.save_stage_two(args.out, pipe, vae_part=vae_part)
    pl.write_curve(args.curve or args.out + ".curve", history)
    print(f"saved full checkpoint to {args.out} "
          f"(final loss {history[-1][1]:.5f})")
    return EXIT_OK


def _cmd_generate(cfg: RunConfig, args) -> int:
    pipe = pl.build_pipeline(cfg)
    pl.load_stage_two(args.checkpoint, pipe)
    os.makedirs(args.out_dir, exist_ok=True)
    gen_cfg = pl.generation_config(cfg, mode=args.mode)
    for src in args.actions:
        action = read_motion(src)
        if action.layout != pipe.layout:
            raise ContractError(
                f"{src}: layout K={action.layout.num_joints} does not match "
                f"the checkpoint's K={pipe.layout.num_joints}")
        reaction = engine_generate(action, pipe.vaes, pipe.reactor, pipe.heads,
                                   gen_cfg, pipe.groups)
        stem = os.path.splitext(os.path.basename(src))[0]
        dst = os.path.join(args.out_dir, f"{stem}.reaction.txt")
        write_motion(dst, reaction, comments=[
            f"seed={gen_cfg.seed} order_seed={gen_cfg.order_seed} "
            f"mode={gen_cfg.mode} T_iters={gen_cfg.T_iters} "
            f"num_steps={gen_cfg.num_steps}"])
        print(f"{src} -> {dst}")
    return EXIT_OK


def _cmd_evaluate(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(args.dataset)
    pipe = pl.build_pipeline(cfg)
    pl.load_stage_two(args.checkpoint, pipe)
    num_classes = max(p.class_label for p in dataset) + 1
    clf = train_classifier(
        dataset, ClassifierSettings(num_classes=num_classes, steps=args.clf_steps),
        stream(cfg.seeds.evaluate, "classifier"))
    print(f"classifier held-out accuracy {clf.holdout_acc:.3f}")
    modes = {"offline": ("offline",), "online": ("online",),
             "both": ("offline", "online")}.get(args.mode or "",
                                                (cfg.generation.mode,))
    for mode in modes:
        for split in ("train", "test"):
            rep = pl.make_rep_fn(pipe, clf, dataset, split,
                                 samples=args.samples, S=args.pairs, mode=mode)
            report = run_protocol(rep, reps=args.reps, seed=cfg.seeds.evaluate)
            base = f"{args.out}.{split}.{mode}"
            write_report(report, base + ".txt", base + ".json")
            print(f"[{split}-conditioned, {mode}] fid {report.fid:.4f} "
                  f"acc {report.acc:.3f} -> {base}.txt")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    header, entries = load_checkpoint(args.checkpoint)
    sys.stdout.write(summarize(header, entries))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        set_default_dtype(args.precision)
        if args.verb == "inspect":
            return _cmd_inspect(args)
        cfg = _configure(args)
        if args.verb == "make-dataset":
            return _cmd_make_dataset(cfg, args)
        if args.verb == "train-vae":
            return _cmd_train_vae(cfg, args)
        if args.verb == "train-reactor":
            return _cmd_train_reactor(cfg, args)
        if args.verb == "generate":
            return _cmd_generate(cfg, args)
        if args.verb == "evaluate":
            return _cmd_evaluate(cfg, args)
        raise ConfigError(f"unknown verb {args.verb!r}")  # unreachable
    except (ConfigError, ContractError, CheckpointMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MotionIOError, CheckpointError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ReactgenError as exc:  # anything package-raised but unclassified
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
