"""Command-line entry points: data preparation, training, evaluation and ablations."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datamodel import (
    Dataset,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    load_split,
    make_split,
    save_dataset,
    save_split,
)
from .evaluation import curve_csv, evaluate
from .textfeat import build_vocab, read_corpus, tfidf
from .training import (
    ABLATIONS,
    TrainConfig,
    load_checkpoint,
    load_config,
    prepare_data,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("cyclezsl")

SINGLE_GAN = "single_gan"


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Config for one ablation row; ``single_gan`` switches the inverse pair off."""
    if variant == SINGLE_GAN:
        return dataclasses.replace(cfg, cyc_coeff=0.0, cls_inverse_coeff=0.0, inverse_enabled=False)
    return dataclasses.replace(cfg, ablation=variant)


def run_ablation(ds: Dataset, split, cfg: TrainConfig, seeds, variants=ABLATIONS + (SINGLE_GAN,),
                 n: int = 60, k: int = 1) -> dict[str, list[float]]:
    """Unseen Top-1 per variant and seed."""
    table: dict[str, list[float]] = {}
    for variant in variants:
        for seed in seeds:
            vcfg = dataclasses.replace(variant_config(cfg, variant), seed=seed)
            state = train(prepare_data(ds, split, vcfg.dtype), vcfg)
            report = evaluate(state.theta, state.spec, state.scaler, ds, split, n=n, k=k, seed=seed)
            table.setdefault(variant, []).append(report.top1_unseen)
            log.info("%s seed %d: top1 %.4f", variant, seed, report.top1_unseen)
    return table


def ablation_csv(table: dict[str, list[float]], seeds) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant"] + [f"seed_{s}" for s in seeds] + ["mean"])
    for variant, vals in table.items():
        writer.writerow([variant] + [f"{v:.4f}" for v in vals] + [f"{np.mean(vals):.4f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------


def _cmd_prepare(args) -> int:
    corpus = read_corpus(args.corpus)
    mat = tfidf(corpus, build_vocab(corpus, min_df=args.min_df))
    visual = np.load(args.visual)
    raw_labels = np.load(args.labels, allow_pickle=False)
    if raw_labels.dtype.kind in "US":
        index = {name: i for i, name in enumerate(corpus.class_ids)}
        missing = sorted(set(raw_labels.tolist()) - set(index))
        if missing:
            raise SystemExit(f"labels without a document: {missing[:5]}")
        labels = np.array([index[v] for v in raw_labels.tolist()], dtype=np.int64)
    else:
        labels = raw_labels.astype(np.int64)
    super_class = None
    if args.super_classes:
        mapping = json.loads(Path(args.super_classes).read_text(encoding="utf-8"))
        super_class = np.array([int(mapping[c]) for c in corpus.class_ids])
    ds = Dataset(visual.astype(np.float32), mat.matrix.astype(np.float32), labels, list(corpus.class_ids), super_class)
    ds.validate()
    out = Path(args.out)
    save_dataset(ds, out)
    (out / "vocab.json").write_text(json.dumps(list(mat.vocab.tokens)), encoding="utf-8")
    if args.split_style:
        save_split(make_split(ds, args.split_style, args.unseen_fraction, args.seed), out / "split.json")
    print(f"wrote {len(labels)} samples, {len(corpus.class_ids)} classes, {len(mat.vocab)} tokens to {out}")
    return 0


def _cmd_synth(args) -> int:
    cfg = SynthConfig(num_classes=args.num_classes, num_seen=args.num_seen, samples_per_class=args.samples_per_class,
                      d_s=args.d_s, d_v=args.d_v, noise_scale=args.noise_scale, seed=args.seed)
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    save_dataset(ds, out)
    unseen_fraction = (cfg.num_classes - cfg.num_seen) / cfg.num_classes
    save_split(make_split(ds, args.split_style, unseen_fraction, args.seed), out / "split.json")
    print(f"wrote synthetic dataset and split.json to {out}")
    return 0


def _load_train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        overrides[key] = json.loads(raw)
    return TrainConfig.from_dict({**cfg.to_dict(), **overrides})


def _split_for(args, ds: Dataset):
    path = Path(args.split) if args.split else Path(args.data) / "split.json"
    return load_split(path)


def _cmd_train(args) -> int:
    cfg = _load_train_config(args)
    ds = load_dataset(args.data)
    split = _split_for(args, ds)
    data = prepare_data(ds, split, cfg.dtype)
    every = max(1, cfg.iterations // 10)

    def progress(state):
        if state.iteration % every == 0:
            row = state.history[-1]
            log.info("iteration %d  d1 %.4f  g1 %.4f  cyc %.4f", state.iteration, row["loss_d1"], row["loss_g1"],
                     row["loss_cyc"])

    state = train(data, cfg, progress=progress)
    out = Path(args.out)
    save_checkpoint(state, out)
    write_history(state.history, out / "loss.csv")
    print(f"checkpoint and loss.csv written to {out}")
    return 0


def _eval_report(args):
    state = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    split = _split_for(args, ds)
    seed = state.config.seed if args.seed is None else args.seed
    return evaluate(state.theta, state.spec, state.scaler, ds, split, n=args.n, k=args.k, seed=seed,
                    config_hash=state.config.digest())


def _cmd_eval(args) -> int:
    report = _eval_report(args)
    text = report.to_json(include_timing=args.timing)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"top1_unseen {report.top1_unseen:.4f}  ausuc {report.ausuc:.4f}")
    return 0


def _cmd_gzsl(args) -> int:
    report = _eval_report(args)
    Path(args.out).write_text(curve_csv(report.curve), encoding="utf-8")
    print(f"ausuc {report.ausuc:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    ds = load_dataset(args.data)
    split = _split_for(args, ds)
    table = run_ablation(ds, split, cfg, args.seeds, n=args.n, k=args.k)
    text = ablation_csv(table, args.seeds)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclezsl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="class documents plus features -> TF-IDF dataset")
    p.add_argument("--corpus", required=True, help="directory with one .txt document per class")
    p.add_argument("--visual", required=True, help=".npy array of visual features, N x d_v")
    p.add_argument("--labels", required=True, help=".npy array of class indices or class names")
    p.add_argument("--super-classes", help="JSON object mapping class name to super-class id")
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--split-style", choices=("SCS", "SCE"))
    p.add_argument("--unseen-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("synth-data", help="write a synthetic dataset and split")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--num-seen", type=int, default=7)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--d-s", type=int, default=32)
    p.add_argument("--d-v", type=int, default=64)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--split-style", choices=("SCS", "SCE"), default="SCS")
    p.set_defaults(func=_cmd_synth)

    def add_training_args(p):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--split", help="split JSON (default: DATA/split.json)")
        p.add_argument("--config", help="JSON file of TrainConfig fields")
        p.add_argument("--set", action="append", metavar="KEY=JSON", help="override one config field")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train and write a checkpoint plus loss.csv")
    add_training_args(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    for name, func, help_ in (("eval", _cmd_eval, "zero-shot Top-1 and AUSUC report (JSON)"),
                              ("gzsl", _cmd_gzsl, "seen-unseen curve (CSV) and AUSUC")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split")
        p.add_argument("--seed", type=int, help="synthesis seed (default: the training seed)")
        p.add_argument("--n", type=int, default=60, help="synthesized samples per unseen class")
        p.add_argument("--k", type=int, default=1)
        if name == "eval":
            p.add_argument("--out")
            p.add_argument("--timing", action="store_true", help="include wall-clock timing in the JSON")
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="compare inverse-pair variants and the single-GAN reduction")
    add_training_args(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
