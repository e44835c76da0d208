"""Materialize pretrained embedding channels as files.

Contextual export encodes each sentence once (all tokens, with special
tokens around them) and mean-pools the final-hidden-layer rows of every
token's subtokens back to one vector per token. Tokens are wordpiece-split
individually so the subtoken-to-token mapping is exact for any tokenizer.

All writes are atomic: a temp file in the target directory, then rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Optional


class ExporterError(Exception):
    """Anything that prevents a well-formed export; message says what."""


@dataclass
class ExportJob:
    input_path: str  # JSONL with {"id": str, "tokens": [str]}
    model_id: str  # pretrained model identifier or local path
    output_path: str
    pooling: str = "mean"


def _atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".export-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_sentences(path) -> list:
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid, tokens = str(obj["id"]), [str(t) for t in obj["tokens"]]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ExporterError(f"{path}:{lineno}: malformed sentence ({e})") from e
            if not tokens:
                raise ExporterError(f"{path}:{lineno}: sentence {sid!r} has no tokens")
            sentences.append((sid, tokens))
    return sentences


def load_model(model_id: str):
    """Resolve tokenizer and encoder; failures surface as ExporterError."""
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as e:
        raise ExporterError(f"transformers/torch not available: {e}") from e
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as e:
        raise ExporterError(f"cannot load pretrained model {model_id!r}: {e}") from e
    model.eval()
    return tokenizer, model, torch


def _frame_with_specials(tokenizer, flat_ids: list) -> list:
    """Surround content ids with the model's special-token frame; handles
    tokenizer APIs with and without build_inputs_with_special_tokens."""
    try:
        return list(tokenizer.build_inputs_with_special_tokens(flat_ids))
    except AttributeError:
        pass
    ids = list(flat_ids)
    cls_id = getattr(tokenizer, "cls_token_id", None)
    sep_id = getattr(tokenizer, "sep_token_id", None)
    if cls_id is not None:
        ids = [cls_id] + ids
    if sep_id is not None:
        ids = ids + [sep_id]
    return ids


def _encode_sentence(sid, tokens, tokenizer, model, torch):
    """One vector per token: final-hidden-layer subtoken rows, mean-pooled."""
    pieces = []
    counts = []
    for token in tokens:
        sub = tokenizer.tokenize(token)
        if len(sub) == 0:
            raise ExporterError(
                f"sentence {sid!r}: token {token!r} produced zero subtokens"
            )
        pieces.extend(sub)
        counts.append(len(sub))
    flat_ids = tokenizer.convert_tokens_to_ids(pieces)
    input_ids = _frame_with_specials(tokenizer, flat_ids)
    # locate the content inside the special-token frame
    start = 0
    while start + len(flat_ids) <= len(input_ids):
        if input_ids[start : start + len(flat_ids)] == flat_ids:
            break
        start += 1
    else:
        raise ExporterError(f"sentence {sid!r}: cannot locate content between special tokens")

    batch = torch.tensor([input_ids])
    with torch.no_grad():
        hidden = model(input_ids=batch, attention_mask=torch.ones_like(batch)).last_hidden_state[0]
    vectors = []
    offset = start
    for count in counts:
        rows = hidden[offset : offset + count]
        vectors.append(rows.mean(dim=0).tolist())
        offset += count
    return vectors


def export_contextual(job: ExportJob) -> dict:
    """Write the contextual JSONL plus a sidecar manifest; returns the
    manifest. Repeated runs over the same inputs are byte-identical."""
    if job.pooling != "mean":
        raise ExporterError(f"unsupported pooling {job.pooling!r} (only 'mean')")
    sentences = read_sentences(job.input_path)
    tokenizer, model, torch = load_model(job.model_id)
    lines = []
    dim = None
    for sid, tokens in sentences:
        vectors = _encode_sentence(sid, tokens, tokenizer, model, torch)
        if dim is None:
            dim = len(vectors[0])
        lines.append(json.dumps({"id": sid, "vectors": vectors}, ensure_ascii=False))
    _atomic_write(job.output_path, "\n".join(lines) + ("\n" if lines else ""))
    manifest = {"dim": int(dim or 0), "model": job.model_id, "pooling": job.pooling}
    _atomic_write(job.output_path + ".manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def export_static(vocab_path, vectors_path, output_path) -> dict:
    """Subset and reorder a word2vec-text file to a vocabulary list (one
    token per line). Unknown words are omitted and counted; the header is
    rewritten to the kept count."""
    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = [line.rstrip("\n") for line in fh if line.strip()]

    table = {}
    with open(vectors_path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ExporterError(f"{vectors_path}:1: expected '<count> <dim>' header")
        try:
            dim = int(header[1])
        except ValueError as e:
            raise ExporterError(f"{vectors_path}:1: non-integer header ({e})") from e
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ExporterError(
                    f"{vectors_path}:{lineno}: expected 1 token + {dim} values, "
                    f"got {len(parts)} fields"
                )
            try:
                [float(v) for v in parts[1:]]
            except ValueError as e:
                raise ExporterError(f"{vectors_path}:{lineno}: non-numeric value ({e})") from e
            table.setdefault(parts[0], parts[1:])

    kept, missing = [], 0
    for token in vocab:
        values = table.get(token)
        if values is None:
            missing += 1
        else:
            kept.append(token + " " + " ".join(values))
    _atomic_write(output_path, f"{len(kept)} {dim}\n" + "".join(l + "\n" for l in kept))
    return {"kept": len(kept), "missing": missing, "dim": dim}
