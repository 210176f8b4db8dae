"""Command-line entry point: ``prodelib <subcommand> ...``.

Every subcommand writes its outputs plus one ``manifest.json`` into an
output directory. Relative ``--out`` paths resolve under ``$PRODELIB_OUTPUT_ROOT``
when it is set. Exit codes: 0 success, 2 usage error, 1 runtime error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from . import corpus as C
from .harness.evaluation import OracleModel, evaluate
from .noising import META_MODES, ConfusionDictionary, build_confusions
from .training import HISTORY_FIELDS, PRESETS, DivergenceError, TrainConfig, merge_config, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "PRODELIB_OUTPUT_ROOT"

log = logging.getLogger("prodelib")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def output_dir(arg: str) -> Path:
    path = Path(arg)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic(path: Path, writer) -> Path:
    """Run ``writer(tmp_path)`` then move the result into place."""
    tmp = path.with_name(path.name + ".tmp" + path.suffix)
    writer(tmp)
    os.replace(tmp, path)
    return path


def build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, subcommand: str, config: dict, seed: int, artifacts: Sequence[Path],
                   started: float) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "artifacts": [str(p) for p in artifacts],
        "build": build_id(),
        "wall_time_s": round(time.time() - started, 3),
    }
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def parse_list(text: str, kind=float) -> list:
    try:
        return [kind(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"could not parse list {text!r}") from None


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: expected a mapping")
    return raw


def resolve_train_config(args) -> TrainConfig:
    """Preset < config file < command-line flags."""
    raw = load_config_file(getattr(args, "config", None))
    try:
        cfg = merge_config(PRESETS[getattr(args, "preset", None) or "full"](), raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    model, noise, sched = {}, {}, {}
    if args.mode is not None:
        model["mode"] = args.mode
    if args.alpha is not None:
        model["alpha"] = args.alpha
    if args.noise is not None:
        noise["meta"] = args.noise
    if args.lr is not None:
        sched["peak_lr"] = args.lr
    top = {}
    for key in ("epochs", "batch_size", "schedule_scale", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            top[key] = val
    try:
        return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **model),
                                   noise=dataclasses.replace(cfg.noise, **noise),
                                   schedule=dataclasses.replace(cfg.schedule, **sched), **top)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_data(path: str) -> list[C.Example]:
    if not Path(path).exists():
        raise UsageError(f"dataset {path} does not exist")
    return C.load_dataset(path)


# -- subcommands -------------------------------------------------------------------

def cmd_gen_data(args) -> list[Path]:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    spec = C.load_grammar(args.spec) if args.spec else C.GrammarSpec.from_dict(C.default_grammar())
    data = C.generate(spec, args.n, args.seed)
    out = output_dir(args.out)
    paths = [atomic(out / "data.jsonl", lambda p: C.save_dataset(data, p))]
    paths.append(atomic(out / "grammar.yaml", lambda p: C.save_grammar(spec, p)))
    counts = {s: len(C.by_split(data, s)) for s in C.SPLITS}
    print(f"wrote {len(data)} examples {counts} to {paths[0]}")
    args._config = {"spec": args.spec or "<default>", "n": args.n}
    return paths


def cmd_build_confusions(args) -> list[Path]:
    data = C.by_split(load_data(args.data), "train")
    if not data:
        raise RuntimeError(f"{args.data} has no train split")
    conf = build_confusions((ex.hyp_words, ex.gold_words) for ex in data)
    out = output_dir(args.out)
    path = atomic(out / "confusions.tsv", conf.save)
    top = conf.top_pair()
    print(f"{len(conf.rows())} confusion pairs from {len(data)} train examples; top pair: {top}")
    args._config = {"data": args.data}
    return [path]


def cmd_train(args) -> list[Path]:
    cfg = resolve_train_config(args)
    data = load_data(args.data)
    confusions = ConfusionDictionary.load(args.confusions) if args.confusions else None
    out = output_dir(args.out)
    res = train(cfg, data, confusions)
    ckpt = atomic(out / "model.npz", lambda p: res.model.save(p, {"train_config": cfg.to_dict()}))
    hist = out / "history.csv"

    def write_history(p):
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(",".join(HISTORY_FIELDS) + "\n")
            for row in res.history:
                fh.write(",".join(str(row[k]) for k in HISTORY_FIELDS) + "\n")

    atomic(hist, write_history)
    print(f"best eval EM {res.best_em:.4f} at epoch {res.best_epoch}; checkpoint {ckpt}")
    if res.skipped_infeasible:
        print(f"skipped {res.skipped_infeasible} infeasible CTC targets during training")
    args._config = cfg.to_dict()
    args.seed = cfg.seed
    return [ckpt, hist]


def _load_model(path: str, mode: str | None = None):
    from .model import DeliberationModel

    if not Path(path).exists():
        raise UsageError(f"checkpoint {path} does not exist")
    model, meta = DeliberationModel.load(path)
    if mode is not None and mode != model.mode:
        raise UsageError(f"mode mismatch: --mode {mode} but checkpoint {path} holds a {model.mode} model")
    return model


def cmd_eval(args) -> list[Path]:
    data = C.by_split(load_data(args.data), args.split)
    if not data:
        raise UsageError(f"{args.data} has no {args.split!r} examples")
    model = OracleModel() if args.oracle else _load_model(args.ckpt, args.mode)
    rep = evaluate(model, data)
    out = output_dir(args.out)
    path = atomic(out / "eval.csv", rep.write_csv)
    summary = atomic(out / "summary.txt", lambda p: p.write_text(rep.summary() + "\n", encoding="utf-8"))
    print(rep.summary())
    args._config = {"ckpt": "oracle" if args.oracle else args.ckpt, "data": args.data, "split": args.split}
    return [path, summary]


def cmd_bench(args) -> list[Path]:
    from .harness.latency import bench_latency, write_latency_csv

    models = {}
    for i, ck in enumerate(args.ckpt):
        m = _load_model(ck)
        models[f"{m.mode}" if m.mode not in models else f"{m.mode}_{i}"] = m
    lengths = parse_list(args.lengths, int)
    if not lengths or min(lengths) < 1:
        raise UsageError("--lengths needs positive integers")
    if args.data:
        example = load_data(args.data)[0]
    else:
        example = C.generate(C.GrammarSpec.from_dict(C.default_grammar()), 1, args.seed)[0]
    try:
        profiles = bench_latency(models, example, lengths, args.runs, args.warmup)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = output_dir(args.out)
    path = atomic(out / "latency.csv", lambda p: write_latency_csv(profiles, p))
    text = "\n".join(p.summary() for p in profiles.values())
    summary = atomic(out / "summary.txt", lambda p: p.write_text(text + "\n", encoding="utf-8"))
    print(text)
    args._config = {"ckpt": args.ckpt, "lengths": lengths, "runs": args.runs, "warmup": args.warmup}
    return [path, summary]


def cmd_sweep_alpha(args) -> list[Path]:
    from .harness.experiments import alpha_sweep, summarize, write_sweep_csv
    from .harness.latency import write_latency_csv

    cfg = resolve_train_config(args)
    alphas = parse_list(args.alphas)
    if not alphas or min(alphas) <= 1.0:
        raise UsageError("--alphas needs values above 1")
    data = load_data(args.data)
    rows, profiles = alpha_sweep(cfg, data, alphas, seed=cfg.seed, bench_runs=args.runs)
    out = output_dir(args.out)
    paths = [atomic(out / "sweep.csv", lambda p: write_sweep_csv(rows, p)),
             atomic(out / "latency.csv", lambda p: write_latency_csv(profiles, p))]
    print(summarize(rows))
    args._config = {"train": cfg.to_dict(), "alphas": alphas}
    args.seed = cfg.seed
    return paths


def cmd_ablate_noise(args) -> list[Path]:
    from .harness.experiments import denoise_ablation, summarize, write_sweep_csv

    cfg = resolve_train_config(args)
    seeds = parse_list(args.seeds, int)
    data = load_data(args.data)
    rows = denoise_ablation(cfg, data, seeds)
    out = output_dir(args.out)
    path = atomic(out / "sweep.csv", lambda p: write_sweep_csv(rows, p))
    print(summarize(rows))
    args._config = {"train": cfg.to_dict(), "seeds": seeds}
    return [path]


# -- parser ------------------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="full",
                   help="base settings: 'full' (long schedule) or 'desk' (8 epochs, one CPU core)")
    p.add_argument("--config", help="training config file (YAML/JSON mapping of TrainConfig fields)")
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--mode", choices=("ctc", "mask_predict", "autoregressive"), help="decoder mode")
    p.add_argument("--alpha", type=float, help="fuzzy length scale for ctc mode")
    p.add_argument("--noise", choices=META_MODES, help="noise meta-operation")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--epochs", type=int, help="number of epochs (default: length of the schedule)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="examples per step")
    p.add_argument("--schedule-scale", dest="schedule_scale", type=float,
                   help="multiply warmup/hold/decay stage lengths")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodelib", description="Train, evaluate and benchmark the deliberation parser.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", help="grammar spec file (default: built-in grammar)")
    p.add_argument("--n", type=int, required=True, help="number of examples across all splits")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-confusions", help="extract a word confusion dictionary from the train split")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest (extraction is deterministic)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_confusions)

    p = sub.add_parser("train", help="train one model")
    _train_flags(p)
    p.add_argument("--confusions", help="confusion TSV (default: extracted from the train split)")
    p.add_argument("--seed", type=int, help="training seed (overrides the config file)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exact match with the ASR-error breakdown")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt", help="model checkpoint")
    src.add_argument("--oracle", action="store_true", help="score gold parses (pipeline check)")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--split", default="test", choices=C.SPLITS, help="split to score")
    p.add_argument("--mode", choices=("ctc", "mask_predict", "autoregressive"),
                   help="expected checkpoint mode; a mismatch is an error")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest (decoding is deterministic)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="decoder latency across forced output lengths")
    p.add_argument("--ckpt", nargs="+", required=True, help="one or more checkpoints")
    p.add_argument("--lengths", default="5,10,15,20,25,30,35,40,45,50", help="comma-separated output lengths")
    p.add_argument("--runs", type=int, default=50, help="timed runs per length (>= 50)")
    p.add_argument("--warmup", type=int, default=5, help="discarded warmup runs per length (>= 5)")
    p.add_argument("--data", help="dataset whose first example is encoded (default: a generated one)")
    p.add_argument("--seed", type=int, default=0, help="seed for the generated input example")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-alpha", help="train one ctc model per alpha; EM and latency")
    _train_flags(p)
    p.add_argument("--alphas", default="1.1,1.3,2,3,4", help="comma-separated alpha values (> 1)")
    p.add_argument("--runs", type=int, default=50, help="timed runs per latency point")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("ablate-noise", help="sampling / deletion-only / substitution-only / no-noise over seeds")
    _train_flags(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--seed", type=int, help="unused base seed (per-run seeds come from --seeds)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate_noise)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    started = time.time()
    args._config = {}
    try:
        artifacts = args.func(args)
        write_manifest(output_dir(args.out), args.command, args._config, args.seed, artifacts, started)
    except UsageError as exc:
        print(f"prodelib {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"prodelib {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (C.SpecError, C.DatasetFormatError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"prodelib {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
