"""Exact-match precision/recall/F1, overall and bucketed by entity length."""

from __future__ import annotations

import json
from dataclasses import dataclass

__all__ = ["BucketScore", "MetricsReport", "score", "length_bucket"]

BUCKETS = ["1", "2", "3", "4", "5+"]


def length_bucket(span) -> str:
    n = span.end - span.start + 1
    return str(n) if n < 5 else "5+"


@dataclass
class BucketScore:
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    @property
    def precision(self):
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self):
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "correct": self.correct,
        }


@dataclass
class MetricsReport:
    overall: BucketScore
    by_length: dict

    def to_dict(self):
        return {
            "overall": self.overall.to_dict(),
            "by_length": {k: v.to_dict() for k, v in self.by_length.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self):
        rows = [("all", self.overall)] + [(k, self.by_length[k]) for k in BUCKETS]
        lines = [f"{'len':>4}  {'prec':>7}  {'rec':>7}  {'f1':>7}  {'gold':>5}  {'pred':>5}"]
        for name, s in rows:
            lines.append(
                f"{name:>4}  {s.precision:7.4f}  {s.recall:7.4f}  {s.f1:7.4f}"
                f"  {s.gold:5d}  {s.predicted:5d}"
            )
        return "\n".join(lines)


def score(predictions, golds) -> MetricsReport:
    """Micro-averaged exact (start, end, type) match over parallel lists of
    per-sentence entity collections, bucketed by span length."""
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} prediction sets vs {len(golds)} gold sets")
    overall = BucketScore()
    by_length = {k: BucketScore() for k in BUCKETS}
    for pred, gold in zip(predictions, golds):
        pred_keys = {(p.start, p.end, p.type) for p in pred}
        gold_keys = {(g.start, g.end, g.type) for g in gold}
        for g in gold:
            overall.gold += 1
            by_length[length_bucket(g)].gold += 1
        if len(pred_keys) != len(pred):
            raise ValueError("duplicate (start, end, type) triples in a prediction set")
        for p in pred:
            overall.predicted += 1
            by_length[length_bucket(p)].predicted += 1
            if (p.start, p.end, p.type) in gold_keys:
                overall.correct += 1
                by_length[length_bucket(p)].correct += 1
    return MetricsReport(overall=overall, by_length=by_length)
