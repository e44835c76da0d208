"""Dataset ingestion and the synthetic nested corpus.

Two on-disk formats are supported:

- span JSONL: one object per line,
  ``{"id": str, "tokens": [str], "entities": [{"start": int, "end": int,
  "type": str}], "pos": [str]?}`` with inclusive end indices;
- CoNLL-style BIO: blank-line separated sentences, one ``token<sep>tag``
  pair per line (tab or whitespace), flat entities only.

The internal convention everywhere is token-indexed, end-inclusive spans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import DataError
from .numerics import Rng

__all__ = [
    "EntitySpan",
    "SentenceExample",
    "load_jsonl_spans",
    "save_jsonl_spans",
    "load_conll_bio",
    "spans_to_bio",
    "bio_to_spans",
    "synth_nested_corpus",
    "SynthCorpus",
    "containment_pairs",
]


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int  # inclusive
    type: str


@dataclass
class SentenceExample:
    id: str
    tokens: list
    entities: list = field(default_factory=list)
    pos: Optional[list] = None

    def __len__(self):
        return len(self.tokens)

    def validate(self):
        n = len(self.tokens)
        if n == 0:
            raise DataError(f"sentence {self.id!r}: empty token list")
        if self.pos is not None and len(self.pos) != n:
            raise DataError(
                f"sentence {self.id!r}: {len(self.pos)} POS tags for {n} tokens"
            )
        seen = set()
        for ent in self.entities:
            if not (0 <= ent.start <= ent.end < n):
                raise DataError(
                    f"sentence {self.id!r}: entity ({ent.start},{ent.end},{ent.type}) "
                    f"out of range for {n} tokens"
                )
            key = (ent.start, ent.end, ent.type)
            if key in seen:
                raise DataError(f"sentence {self.id!r}: duplicate entity {key}")
            seen.add(key)
        return self


def load_jsonl_spans(path) -> list:
    """Load and validate span-JSONL examples; errors carry line numbers."""
    examples = []
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
                entities = [
                    EntitySpan(int(e["start"]), int(e["end"]), str(e["type"]))
                    for e in obj.get("entities", [])
                ]
                ex = SentenceExample(
                    id=str(obj["id"]),
                    tokens=[str(t) for t in obj["tokens"]],
                    entities=entities,
                    pos=[str(p) for p in obj["pos"]] if obj.get("pos") is not None else None,
                )
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed example ({e})") from e
            examples.append(ex.validate())
    return examples


def save_jsonl_spans(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            obj = {
                "id": ex.id,
                "tokens": ex.tokens,
                "entities": [
                    {"start": e.start, "end": e.end, "type": e.type} for e in ex.entities
                ],
            }
            if ex.pos is not None:
                obj["pos"] = ex.pos
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def bio_to_spans(tags) -> tuple:
    """Contiguous B-X (I-X)* runs become spans. An I-X with no open run of
    the same type is treated as B-X and counted as a warning."""
    spans, warnings = [], []
    start, cur_type = None, None

    def close(end):
        nonlocal start, cur_type
        if cur_type is not None:
            spans.append(EntitySpan(start, end, cur_type))
        start, cur_type = None, None

    for i, tag in enumerate(tags):
        if tag == "O" or tag == "":
            close(i - 1)
        elif tag.startswith("B-"):
            close(i - 1)
            start, cur_type = i, tag[2:]
        elif tag.startswith("I-"):
            t = tag[2:]
            if cur_type != t:
                warnings.append(f"position {i}: I-{t} without open {t} run, treated as B-{t}")
                close(i - 1)
                start, cur_type = i, t
        else:
            raise DataError(f"position {i}: unknown BIO tag {tag!r}")
    close(len(tags) - 1)
    return spans, warnings


def spans_to_bio(n_tokens, entities) -> list:
    """Inverse of bio_to_spans for flat, non-overlapping entities."""
    tags = ["O"] * n_tokens
    for ent in sorted(entities):
        for i in range(ent.start, ent.end + 1):
            if tags[i] != "O":
                raise DataError(
                    f"overlapping entity ({ent.start},{ent.end},{ent.type}) cannot be BIO-encoded"
                )
        tags[ent.start] = f"B-{ent.type}"
        for i in range(ent.start + 1, ent.end + 1):
            tags[i] = f"I-{ent.type}"
    return tags


def load_conll_bio(path) -> tuple:
    """Parse blank-line separated ``token tag`` sentences.

    Returns (examples, warnings); orphan I-X tags are recovered as B-X and
    reported rather than dropped.
    """
    examples, warnings = [], []
    tokens, tags = [], []
    index = 0

    def flush(lineno):
        nonlocal tokens, tags, index
        if not tokens:
            return
        spans, w = bio_to_spans(tags)
        sid = f"conll-{index:05d}"
        warnings.extend(f"{path}:{lineno} ({sid}): {msg}" for msg in w)
        examples.append(SentenceExample(id=sid, tokens=tokens, entities=spans).validate())
        tokens, tags = [], []
        index += 1

    with open(path, "r", encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected 'token tag', got {line!r}")
            tokens.append(parts[0])
            tags.append(parts[-1])
        flush(lineno)
    return examples, warnings


def save_conll_bio(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            for tok, tag in zip(ex.tokens, spans_to_bio(len(ex.tokens), ex.entities)):
                fh.write(f"{tok}\t{tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# synthetic nested corpus
# ---------------------------------------------------------------------------

_FILLERS = ["the", "a", "on", "we", "saw", "red", "old", "big", "sun", "near", "ran", "two"]


@dataclass
class SynthCorpus:
    train: list
    dev: list
    stats: dict

    @property
    def sentences(self):
        return self.train + self.dev


def containment_pairs(entities) -> list:
    """All (outer, inner) pairs where outer strictly contains inner."""
    pairs = []
    for a in entities:
        for b in entities:
            if a is b:
                continue
            if a.start <= b.start and b.end <= a.end and (a.start, a.end) != (b.start, b.end):
                pairs.append((a, b))
    return pairs


def synth_nested_corpus(seed, n_sentences, max_len, n_types, nest_prob) -> SynthCorpus:
    """Deterministic template corpus where entity membership is decidable
    from surface tokens.

    An entity of type ``Tk`` is either the singleton token ``sk`` or a
    bracketed run ``lk ... rk`` (markers included in the span). A nested
    unit puts a complete entity of a *different* type strictly inside the
    brackets, so a ``nest_prob`` fraction of entities ends up strictly
    contained in another one.
    """
    if n_sentences <= 0 or max_len < 4 or n_types <= 0:
        raise DataError("synth_nested_corpus: parameters must be positive (max_len >= 4)")
    if not (0.0 <= nest_prob < 0.5):
        raise DataError("synth_nested_corpus: nest_prob must be in [0, 0.5)")
    rng = Rng(seed)
    # each nested unit yields one contained entity out of two, so the unit
    # probability solving rate = p/(1+p) is p = rate/(1-rate)
    p_unit = nest_prob / (1.0 - nest_prob)
    types = [f"T{i}" for i in range(n_types)]

    def emit_unit(budget):
        """Return (tokens, entity triples relative to unit start). Only
        called with budget >= 3 so nested and flat draws succeed at the
        same rate and the containment fraction stays at nest_prob."""
        t = int(rng.integers(0, n_types))
        want_nested = n_types >= 2 and rng.random() < p_unit
        if want_nested:
            u = int(rng.integers(0, n_types - 1))
            u = u if u < t else u + 1  # inner type differs from outer
            if budget >= 4 and rng.random() < 0.5:
                inner_toks, inner_ents = [f"l{u}", f"r{u}"], [(0, 1, types[u])]
            else:
                inner_toks, inner_ents = [f"s{u}"], [(0, 0, types[u])]
            max_pad = min(1, budget - 2 - len(inner_toks))
            pad = int(rng.integers(0, max_pad + 1)) if max_pad > 0 else 0
            toks = [f"l{t}"] + inner_toks + [rng.choice(_FILLERS) for _ in range(pad)] + [f"r{t}"]
            ents = [(0, len(toks) - 1, types[t])]
            ents += [(s + 1, e + 1, ty) for (s, e, ty) in inner_ents]
            return toks, ents
        if rng.random() < 0.4:
            return [f"s{t}"], [(0, 0, types[t])]
        pad = int(rng.integers(0, min(2, budget - 2) + 1))
        toks = [f"l{t}"] + [rng.choice(_FILLERS) for _ in range(pad)] + [f"r{t}"]
        return toks, [(0, len(toks) - 1, types[t])]

    sentences = []
    for n in range(n_sentences):
        target = int(rng.integers(min(6, max_len), max_len + 1))
        tokens, entities = [], []
        while len(tokens) < target:
            budget = target - len(tokens)
            if budget >= 3 and rng.random() < 0.45:
                toks, ents = emit_unit(budget)
                base = len(tokens)
                tokens.extend(toks)
                entities.extend(EntitySpan(base + s, base + e, ty) for s, e, ty in ents)
            else:
                tokens.append(rng.choice(_FILLERS))
        sentences.append(
            SentenceExample(id=f"synth-{n:04d}", tokens=tokens, entities=entities).validate()
        )

    train = [s for i, s in enumerate(sentences) if i % 4 != 3]
    dev = [s for i, s in enumerate(sentences) if i % 4 == 3]
    total = sum(len(s.entities) for s in sentences)
    contained = sum(
        len({(b.start, b.end, b.type) for _, b in containment_pairs(s.entities)})
        for s in sentences
    )
    stats = {
        "sentences": n_sentences,
        "train_sentences": len(train),
        "dev_sentences": len(dev),
        "entities": total,
        "contained_entities": contained,
        "nesting_rate": contained / total if total else 0.0,
    }
    return SynthCorpus(train=train, dev=dev, stats=stats)
