"""Command line fronts for the two export operations."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportJob, ExporterError, export_contextual, export_static


def main_contextual(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-contextual",
        description="Pool pretrained subtoken vectors back to one vector per token",
    )
    parser.add_argument("--model", required=True, help="model identifier or local path")
    parser.add_argument("--in", dest="input", required=True, help="JSONL with id/tokens")
    parser.add_argument("--out", required=True, help="contextual JSONL output")
    parser.add_argument("--pooling", default="mean", choices=["mean"])
    args = parser.parse_args(argv)
    try:
        manifest = export_contextual(
            ExportJob(input_path=args.input, model_id=args.model,
                      output_path=args.out, pooling=args.pooling)
        )
    except ExporterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} (dim {manifest['dim']})")
    return 0


def main_static(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-static",
        description="Restrict a word2vec-text vector file to a vocabulary",
    )
    parser.add_argument("--vectors", required=True, help="source word2vec text file")
    parser.add_argument("--vocab", required=True, help="one token per line")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        stats = export_static(args.vocab, args.vectors, args.out)
    except ExporterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}: kept {stats['kept']}, missing {stats['missing']}")
    return 0


if __name__ == "__main__":
    sys.exit(main_contextual())
