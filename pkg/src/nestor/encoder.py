"""Sentence encoding: character, contextual, word and POS channels fused
into the hidden matrix H.

The contextual channel is never computed in-process: vectors come
precomputed from a JSON-lines store (one object per sentence, one vector
per token). Static word vectors load from word2vec text format. Both
loaders return a warnings list alongside the data; they never silently
drop content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import DataError, EmptyInputError
from .numerics import BiGruParams, Param, Tensor

__all__ = [
    "Vocabularies",
    "EmbeddingStore",
    "EncoderParams",
    "EncodedSentence",
    "load_word_vectors",
    "load_contextual_store",
    "embed_chars",
    "embed_token",
    "encode_sentence",
    "encode_batch",
]

UNK = "<unk>"


@dataclass
class Vocabularies:
    """Dense id maps for words, characters, POS tags and entity types.

    Index 0 of word/char/pos is the unknown id. Entity types occupy
    [0, T); the None (no entity) category is fixed at index T.
    """

    word_to_id: dict
    char_to_id: dict
    pos_to_id: dict
    types: list

    @classmethod
    def build(cls, examples) -> "Vocabularies":
        words, chars, pos_tags, types = {UNK: 0}, {UNK: 0}, {UNK: 0}, []
        for ex in examples:
            for tok in ex.tokens:
                words.setdefault(tok, len(words))
                for ch in tok:
                    chars.setdefault(ch, len(chars))
            if ex.pos:
                for p in ex.pos:
                    pos_tags.setdefault(p, len(pos_tags))
            for ent in ex.entities:
                if ent.type not in types:
                    types.append(ent.type)
        return cls(word_to_id=words, char_to_id=chars, pos_to_id=pos_tags, types=sorted(types))

    @property
    def n_types(self):
        return len(self.types)

    @property
    def none_id(self):
        return len(self.types)

    def type_id(self, label) -> int:
        try:
            return self.types.index(label)
        except ValueError:
            raise DataError(f"unknown entity type {label!r}") from None

    def word_id(self, token):
        return self.word_to_id.get(token, 0)

    def char_ids(self, token):
        # empty token degrades to the unknown-char singleton
        if not token:
            return [0]
        return [self.char_to_id.get(ch, 0) for ch in token]

    def pos_id(self, tag):
        if tag is None:
            return 0
        return self.pos_to_id.get(tag, 0)

    def to_dict(self):
        return {
            "word_to_id": self.word_to_id,
            "char_to_id": self.char_to_id,
            "pos_to_id": self.pos_to_id,
            "types": self.types,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            word_to_id=dict(d["word_to_id"]),
            char_to_id=dict(d["char_to_id"]),
            pos_to_id=dict(d["pos_to_id"]),
            types=list(d["types"]),
        )


@dataclass
class EmbeddingStore:
    """Embedding tables plus the optional contextual vector store."""

    word_table: Param  # [V, d_w]
    char_table: Param  # [C, d_c]
    pos_table: Param  # [P, d_p]
    contextual: Optional[dict] = None  # sentence id -> [L, d_b]
    contextual_dim: int = 0


@dataclass
class EncoderParams:
    store: EmbeddingStore
    char_gru: BiGruParams
    fuse_gru: BiGruParams
    proj_w: Param  # [d, 2h]
    proj_b: Param  # [d]
    use_char: bool
    use_contextual: bool
    use_word: bool
    use_pos: bool
    max_len: int

    @property
    def channel_widths(self):
        """Concat widths in the fixed channel order (char, bert, word, pos)."""
        widths = []
        if self.use_char:
            widths.append(2 * self.char_gru.fw.hidden)
        if self.use_contextual:
            widths.append(self.store.contextual_dim)
        if self.use_word:
            widths.append(self.store.word_table.shape[-1])
        if self.use_pos:
            widths.append(self.store.pos_table.shape[-1])
        return widths


@dataclass
class EncodedSentence:
    H: Tensor  # [L, d]
    tokens: list


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def load_word_vectors(path) -> tuple:
    """word2vec text format: header "<count> <dim>", then one token and its
    values per line. Returns (token -> vector, dim, warnings)."""
    vectors, warnings = {}, []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected '<count> <dim>' header, got {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as e:
            raise DataError(f"{path}:1: non-integer header ({e})") from e
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected 1 token + {dim} values, got {len(parts)} fields"
                )
            token = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-numeric value ({e})") from e
            if token in vectors:
                warnings.append(f"{path}:{lineno}: duplicate token {token!r}, keeping first")
            else:
                vectors[token] = vec
    if len(vectors) != count:
        warnings.append(f"{path}: header declared {count} vectors, found {len(vectors)}")
    return vectors, dim, warnings


def save_word_vectors(vectors: dict, dim: int, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for token, vec in vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def load_contextual_store(path) -> tuple:
    """Contextual JSONL: {"id": str, "vectors": [[...], ...]}, one object per
    sentence with one vector per token. Returns (id -> array, dim, warnings)."""
    store, warnings = {}, []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            try:
                sid, rows = str(obj["id"]), obj["vectors"]
            except (KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: expected id/vectors fields ({e})") from e
            if not rows:
                raise DataError(f"{path}:{lineno}: sentence {sid!r} has no vectors")
            arr = np.array(rows, dtype=float)
            if arr.ndim != 2:
                raise DataError(f"{path}:{lineno}: ragged vector list for {sid!r}")
            if dim is None:
                dim = arr.shape[1]
            elif arr.shape[1] != dim:
                raise DataError(
                    f"{path}:{lineno}: dim {arr.shape[1]} for {sid!r}, expected {dim}"
                )
            if sid in store:
                warnings.append(f"{path}:{lineno}: duplicate sentence id {sid!r}, keeping first")
            else:
                store[sid] = arr
    return store, (dim or 0), warnings


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def embed_chars(char_ids, params: EncoderParams) -> Tensor:
    """Character ids -> char table -> BiGRU -> whole-sequence mean pool."""
    table = nx.embedding(params.store.char_table, np.asarray(char_ids))
    return nx.mean_pool(nx.bigru_encode(table, params.char_gru))


def embed_token(vocabs: Vocabularies, params: EncoderParams, sentence_id, position, token,
                pos_tag=None) -> Tensor:
    """Concatenation [char; contextual; word; pos] in this fixed order;
    disabled channels contribute zero width."""
    parts = []
    if params.use_char:
        parts.append(embed_chars(vocabs.char_ids(token), params))
    if params.use_contextual:
        parts.append(Tensor(_contextual_rows(params, sentence_id, position + 1)[position]))
    if params.use_word:
        parts.append(nx.embedding(params.store.word_table, np.asarray(vocabs.word_id(token))))
    if params.use_pos:
        parts.append(nx.embedding(params.store.pos_table, np.asarray(vocabs.pos_id(pos_tag))))
    if not parts:
        raise DataError("all embedding channels are disabled")
    return nx.concat(parts, axis=-1)


def _contextual_rows(params: EncoderParams, sentence_id, n_tokens) -> np.ndarray:
    store = params.store.contextual
    if store is None or sentence_id not in store:
        raise DataError(
            f"contextual channel enabled but no stored vectors for sentence {sentence_id!r}"
        )
    rows = store[sentence_id]
    if rows.shape[0] < n_tokens:
        raise DataError(
            f"sentence {sentence_id!r}: {rows.shape[0]} contextual vectors for {n_tokens} tokens"
        )
    return rows


def encode_batch(examples, vocabs: Vocabularies, params: EncoderParams) -> Tensor:
    """Encode same-length sentences together: [B, L, d].

    Character sequences are padded to the batch maximum and masked inside
    the BiGRU and the mean pool, so padding never leaks into the output.
    """
    if not examples:
        raise EmptyInputError("encode_batch: no sentences")
    L = len(examples[0].tokens)
    if L == 0:
        raise EmptyInputError(f"sentence {examples[0].id!r} is empty")
    for ex in examples:
        if len(ex.tokens) != L:
            raise DataError(f"encode_batch: mixed lengths {L} vs {len(ex.tokens)} ({ex.id!r})")
        if L > params.max_len:
            raise DataError(
                f"sentence {ex.id!r}: length {L} exceeds configured maximum {params.max_len}"
            )
    B = len(examples)
    dtype = params.proj_w.values.dtype
    parts = []

    if params.use_char:
        char_ids = [[vocabs.char_ids(t) for t in ex.tokens] for ex in examples]
        cmax = max(len(ids) for row in char_ids for ids in row)
        ids = np.zeros((B, L, cmax), dtype=np.int64)
        mask = np.zeros((B, L, cmax), dtype=np.float64)
        for b, row in enumerate(char_ids):
            for i, cs in enumerate(row):
                ids[b, i, : len(cs)] = cs
                mask[b, i, : len(cs)] = 1.0
        table = nx.embedding(params.store.char_table, ids)  # [B, L, C, d_c]
        states = nx.bigru_encode(table, params.char_gru, mask=mask)
        parts.append(nx.masked_mean_pool(states, mask))  # [B, L, 2h_c]

    if params.use_contextual:
        stacked = []
        for ex in examples:
            rows = _contextual_rows(params, ex.id, L)
            if rows.shape[0] != L:
                raise DataError(
                    f"sentence {ex.id!r}: {rows.shape[0]} contextual vectors for {L} tokens"
                )
            stacked.append(rows)
        parts.append(Tensor(np.stack(stacked).astype(dtype)))

    if params.use_word:
        wids = np.array([[vocabs.word_id(t) for t in ex.tokens] for ex in examples])
        parts.append(nx.embedding(params.store.word_table, wids))

    if params.use_pos:
        pids = np.array(
            [
                [vocabs.pos_id(ex.pos[i] if ex.pos else None) for i in range(L)]
                for ex in examples
            ]
        )
        parts.append(nx.embedding(params.store.pos_table, pids))

    if not parts:
        raise DataError("all embedding channels are disabled")
    hybrid = nx.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    fused = nx.bigru_encode(hybrid, params.fuse_gru)
    return nx.linear_affine(fused, params.proj_w, params.proj_b)


def encode_sentence(tokens, sentence_id, vocabs: Vocabularies, params: EncoderParams,
                    pos=None) -> EncodedSentence:
    """Single-sentence surface over encode_batch (B=1, squeezed)."""
    from .data import SentenceExample

    if len(tokens) == 0:
        raise EmptyInputError(f"sentence {sentence_id!r} is empty")
    if len(tokens) > params.max_len:
        raise DataError(
            f"sentence {sentence_id!r}: length {len(tokens)} exceeds configured "
            f"maximum {params.max_len}"
        )
    ex = SentenceExample(id=sentence_id, tokens=list(tokens), pos=pos)
    H = encode_batch([ex], vocabs, params)
    return EncodedSentence(H=nx.take(H, 0, axis=0), tokens=list(tokens))
