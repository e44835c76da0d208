"""Command line entry point: train, eval, predict, gradcheck.

All commands are driven by one structured config file with repeatable
``--set section.key=value`` overrides. Exit codes are stable contracts:
0 ok, 2 config error, 3 data error, 4 compatibility error, 5 numeric
failure. ``NESTOR_THREADS`` caps worker parallelism for read-only
inference (default 1, fully sequential).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import apply_override, load_config, resolve
from .data import load_conll_bio, load_jsonl_spans
from .errors import (
    CompatibilityError,
    ConfigError,
    DataError,
    NestorError,
    NonFiniteError,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPAT = 4
EXIT_NUMERIC = 5


def worker_count() -> int:
    raw = os.environ.get("NESTOR_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _load_dataset(path, fmt):
    if path is None:
        raise DataError("dataset path is not set")
    if not Path(path).exists():
        raise DataError(f"dataset file {path} does not exist")
    if fmt == "conll":
        examples, warnings = load_conll_bio(path)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        return examples
    return load_jsonl_spans(path)


def _resolved_config(args) -> dict:
    doc = load_config(args.config) if args.config else {}
    for assignment in args.set or []:
        apply_override(doc, assignment)
        print(f"override: {assignment}")
    if getattr(args, "seed", None) is not None:
        apply_override(doc, f"train.seed={args.seed}")
        print(f"override: train.seed={args.seed}")
    cfg = resolve(doc)
    return cfg


def _build_model(cfg, vocabs):
    from .encoder import load_contextual_store, load_word_vectors
    from .model import Model

    e = cfg["embeddings"]
    word_vectors = None
    if e["word_path"]:
        word_vectors, dim, warnings = load_word_vectors(e["word_path"])
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        if dim != e["word_dim"]:
            raise ConfigError(
                f"embeddings.word_dim {e['word_dim']} does not match vector file dim {dim}"
            )
    contextual, contextual_dim = None, None
    if e["use_contextual"]:
        if not e["contextual_path"]:
            raise ConfigError("embeddings.use_contextual requires embeddings.contextual_path")
        contextual, contextual_dim, warnings = load_contextual_store(e["contextual_path"])
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
    return Model(cfg, vocabs, word_vectors=word_vectors,
                 contextual=contextual, contextual_dim=contextual_dim)


def cmd_train(args) -> int:
    from .encoder import Vocabularies
    from .trainer import TrainConfig, fit

    cfg = _resolved_config(args)
    print(json.dumps(cfg, indent=2))
    if not cfg["data"]["train"]:
        raise ConfigError("missing config key data.train")
    train_data = _load_dataset(cfg["data"]["train"], cfg["data"]["format"])
    dev_data = (
        _load_dataset(cfg["data"]["dev"], cfg["data"]["format"]) if cfg["data"]["dev"] else []
    )
    vocabs = Vocabularies.build(train_data + dev_data)
    model = _build_model(cfg, vocabs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2))
    tcfg = TrainConfig.from_config(cfg, len(train_data))
    log_path = out / "metrics.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_fh:
        def log(record):
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
            dev = record.get("dev", {}).get("overall", {})
            line = f"epoch {record['epoch']:>4}  loss {record['loss']:.4f}"
            if dev:
                line += f"  dev_f1 {dev['f1']:.4f}"
            print(line)

        fit(model, train_data, dev_data, tcfg, checkpoint_path=out / "best.ckpt", log=log)
    print(f"checkpoint: {out / 'best.ckpt'}")
    print(f"metrics log: {log_path}")
    return 0


def _check_labels(model, examples):
    known = set(model.vocabs.types)
    unknown = sorted({e.type for ex in examples for e in ex.entities} - known)
    if unknown:
        raise CompatibilityError(f"unknown entity labels in data: {', '.join(unknown)}")


def _ensure_contextual(model):
    """Checkpoints do not embed the contextual store; reload it from the
    path recorded in the model config when the channel is enabled."""
    if not model.encoder.use_contextual or model.encoder.store.contextual is not None:
        return
    from .encoder import load_contextual_store

    path = model.config["embeddings"]["contextual_path"]
    if not path:
        raise ConfigError(
            "checkpoint uses the contextual channel but embeddings.contextual_path is unset"
        )
    store, dim, warnings = load_contextual_store(path)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if dim != model.contextual_dim:
        raise CompatibilityError(
            f"contextual store dim {dim} does not match checkpoint dim {model.contextual_dim}"
        )
    model.encoder.store.contextual = store


def cmd_eval(args) -> int:
    from .trainer import evaluate, load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    _ensure_contextual(model)
    fmt = args.format or model.config["data"]["format"]
    examples = _load_dataset(args.data, fmt)
    _check_labels(model, examples)
    report = evaluate(model, examples, workers=worker_count())
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"report: {args.out}")
    return 0


def cmd_predict(args) -> int:
    from .trainer import decode_groups, group_by_length, load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    _ensure_contextual(model)
    examples = _load_dataset(args.input, "jsonl")
    rows = {}
    groups = group_by_length(examples)
    for group, decoded in zip(groups, decode_groups(model, groups, worker_count())):
        for ex, ents in zip(group, decoded):
            rows[ex.id] = {
                "id": ex.id,
                "entities": [
                    {
                        "start": p.start,
                        "end": p.end,
                        "type": model.vocabs.types[p.type_id],
                        "score": p.score,
                    }
                    for p in ents
                ],
            }
    with open(args.out, "w", encoding="utf-8") as fh:
        for sid in sorted(rows):
            fh.write(json.dumps(rows[sid], ensure_ascii=False) + "\n")
    print(f"predictions: {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    if args.config or args.set or getattr(args, "seed", None) is not None:
        _resolved_config(args)  # validate; the suite itself is fixed at 64-bit
    results = run_suite()
    for r in results:
        print(r.line())
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"{len(failures)} gradient check(s) failed")
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestor",
        description="Proposer-regressor set prediction for flat and nested NER",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required):
        p.add_argument("--config", required=config_required, help="JSON or YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")

    p_train = sub.add_parser("train", help="train a model and write the best-dev checkpoint")
    add_common(p_train, config_required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--format", choices=["jsonl", "conll"])
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.set_defaults(fn=cmd_eval)

    p_pred = sub.add_parser("predict", help="emit predictions for unlabeled JSONL input")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--in", dest="input", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(fn=cmd_predict)

    p_grad = sub.add_parser("gradcheck", help="run the 64-bit gradient check suite")
    add_common(p_grad, config_required=False)
    p_grad.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CompatibilityError as e:
        print(f"compatibility error: {e}", file=sys.stderr)
        return EXIT_COMPAT
    except (NonFiniteError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except NestorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
