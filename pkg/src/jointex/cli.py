"""Command-line entry point: ``jointex train|eval|predict``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .data import CorpusError, Vocab, load_pretrained_embeddings, parse_corpus, write_corpus
from .evaluation import METRIC_COLUMNS, evaluate
from .model import MODE_NER, JointModel
from .trainer import DivergenceError, fit, predict_corpus

logger = logging.getLogger("jointex")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _fail(code: int, kind: str, msg) -> int:
    print(f"error [{kind}]: {msg}", file=sys.stderr)
    return code


def _rngs(seed: int):
    init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(train_ss)


def cmd_train(config_path, alpha=None, adv=None, seed=None) -> int:
    overrides = {"alpha": alpha, "seed": seed}
    if adv is not None:
        overrides["adv"] = adv == "on"
    try:
        cfg = load_config(config_path, overrides)
        cfg.require_corpora()
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", e)
    try:
        train = parse_corpus(cfg.train_path)
        dev = parse_corpus(cfg.dev_path)
    except (CorpusError, OSError) as e:
        return _fail(EXIT_DATA, "data", e)
    if not train or not dev:
        return _fail(EXIT_DATA, "data", "training and development corpora must be non-empty")

    init_rng, train_rng = _rngs(cfg.effective_seed)
    vocab = Vocab.build(train)
    word_table = None
    if cfg.embeddings_path:
        try:
            word_table, stats = load_pretrained_embeddings(cfg.embeddings_path, vocab, init_rng,
                                                           trainable=cfg.train_word_embeddings)
        except (CorpusError, OSError) as e:
            return _fail(EXIT_DATA, "data", e)
        cfg.word_dim = stats["dim"]
        print(f"embeddings: {stats['found']}/{stats['vocab']} words covered ({100 * stats['coverage']:.1f}%)")
    model = JointModel(cfg.model_config(), vocab, init_rng, word_table=word_table)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out / "config.json")
    try:
        report = fit(model, train, dev, cfg.train_config(), adv=cfg.adv_config(), rng=train_rng,
                     metrics_path=out / "metrics.csv", checkpoint_path=cfg.checkpoint_path)
    except (DivergenceError, NonFiniteError) as e:
        return _fail(EXIT_DIVERGED, "divergence", e)
    final = report.best_report
    text = final.to_text() if final is not None else "no evaluation recorded"
    (out / "dev_report.txt").write_text(text + "\n", encoding="utf-8")
    print(f"best epoch {report.best_epoch} of {report.epochs_run}; checkpoint {cfg.checkpoint_path}")
    print(text)
    return EXIT_OK


def cmd_eval(config_path, checkpoint, corpus, mode) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", e)
    try:
        model = load_checkpoint(checkpoint)
    except CheckpointError as e:
        return _fail(EXIT_DATA, "checkpoint", e)
    if mode == "R" and model.config.mode == MODE_NER:
        return _fail(EXIT_CONFIG, "config",
                     "relaxed (R) evaluation assumes known entity boundaries; use an EC-softmax checkpoint")
    try:
        gold = parse_corpus(corpus)
    except (CorpusError, OSError) as e:
        return _fail(EXIT_DATA, "data", e)
    report = evaluate(gold, predict_corpus(model, gold), mode)
    print(report.to_text())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "eval.csv"
    new = not csv_path.exists()
    with open(csv_path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in report.row("", Path(corpus).name).items()})
    return EXIT_OK


def cmd_predict(checkpoint, in_path, out_path) -> int:
    try:
        model = load_checkpoint(checkpoint)
    except CheckpointError as e:
        return _fail(EXIT_DATA, "checkpoint", e)
    try:
        sentences = parse_corpus(in_path, require_labels=False, validate=False)
    except (CorpusError, OSError) as e:
        return _fail(EXIT_DATA, "data", e)
    write_corpus(predict_corpus(model, sentences), out_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointex", description="Joint entity and relation extraction.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and keep the best dev checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--alpha", type=float)
    t.add_argument("--adv", choices=["on", "off"])
    t.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="score a checkpoint on a labelled corpus")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--mode", choices=["S", "B", "R"], default="S")

    p = sub.add_parser("predict", help="tag a corpus and write predictions in the same format")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "train":
        return cmd_train(args.config, args.alpha, args.adv, args.seed)
    if args.command == "eval":
        return cmd_eval(args.config, args.checkpoint, args.corpus, args.mode)
    return cmd_predict(args.checkpoint, args.in_path, args.out_path)


if __name__ == "__main__":
    sys.exit(main())
