"""Exporter acceptance: everything this tool writes must load in the core
with zero warnings, with one vector per token, and byte-identically on
repeated runs."""

import json
from contextlib import contextmanager

import pytest

from nestor.encoder import load_contextual_store, load_word_vectors
from nestor_exporter.exporter import ExportJob, export_contextual, export_static


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def test_exporter_contract_with_core(tmp_path, tiny_model_dir):
    with criterion("exporter-contract (core loads outputs, zero warnings)"):
        src = tmp_path / "sentences.jsonl"
        rows = [
            ("a", ["red", "cats", "sun"]),
            ("b", ["we", "saw", "dogs", "near", "old"]),
            ("c", ["l0", "r0"]),
        ]
        with open(src, "w", encoding="utf-8") as fh:
            for sid, tokens in rows:
                fh.write(json.dumps({"id": sid, "tokens": tokens}) + "\n")

        # contextual channel ------------------------------------------------
        ctx_a, ctx_b = tmp_path / "ctx_a.jsonl", tmp_path / "ctx_b.jsonl"
        manifest = export_contextual(ExportJob(str(src), tiny_model_dir, str(ctx_a)))
        export_contextual(ExportJob(str(src), tiny_model_dir, str(ctx_b)))
        assert ctx_a.read_bytes() == ctx_b.read_bytes()

        store, dim, warnings = load_contextual_store(ctx_a)
        assert warnings == []
        assert dim == manifest["dim"]
        for sid, tokens in rows:
            assert store[sid].shape == (len(tokens), dim)

        # static channel ----------------------------------------------------
        source = tmp_path / "source_vectors.txt"
        with open(source, "w", encoding="utf-8") as fh:
            fh.write("4 3\n")
            fh.write("red 0.1 0.2 0.3\n")
            fh.write("sun -1.0 0.5 0.25\n")
            fh.write("we 1.5 -2.5 0.0\n")
            fh.write("unused 9.0 9.0 9.0\n")
        vocab = tmp_path / "vocab.txt"
        vocab.write_text("red\nsun\nwe\nn-o-t-t-h-e-r-e\n")
        out_a, out_b = tmp_path / "static_a.txt", tmp_path / "static_b.txt"
        stats = export_static(vocab, source, out_a)
        export_static(vocab, source, out_b)
        assert out_a.read_bytes() == out_b.read_bytes()
        assert stats == {"kept": 3, "missing": 1, "dim": 3}

        vectors, vdim, vwarnings = load_word_vectors(out_a)
        assert vwarnings == []
        assert vdim == 3 and set(vectors) == {"red", "sun", "we"}
        assert list(vectors["red"]) == [0.1, 0.2, 0.3]
