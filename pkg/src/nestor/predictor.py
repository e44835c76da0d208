"""Prediction head: category and joint span distributions, set decoding.

The span distribution is a joint pointer: a start pointer score between
the query and every token (shared projection on both sides), an end
pointer likewise, plus the same Gaussian-like spatial prior machinery the
attention layers use (with the head's own parameters). Scores live on the
triangular support {(s, e) : 0 <= s <= e < L}, enumerated lexicographically,
and normalize to one over exactly L(L+1)/2 entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import MlpParams, Param, Tensor
from .regressor import _spatial_fields

__all__ = [
    "HeadParams",
    "ProposalDistributions",
    "PredictedEntity",
    "span_support",
    "category_distribution",
    "span_distribution",
    "sentence_distributions",
    "decode",
]


@dataclass
class HeadParams:
    final_mlp: MlpParams  # d -> T+1, the head's own last logits update
    start_w: Param; start_b: Param  # [p, d], [p]: shared on query and token side
    end_w: Param; end_b: Param
    spatial_mlp: MlpParams  # d -> 5, head-owned prior parameters
    epsilon: float


@dataclass
class ProposalDistributions:
    """Per-proposal output distributions (plain arrays, one proposal)."""

    p_c: np.ndarray  # [T+1]
    spans: np.ndarray  # [S, 2] int, lexicographic
    p_n: np.ndarray  # [S]

    def span_prob(self, s: int, e: int) -> float:
        idx = _span_index(self.spans, s, e)
        return float(self.p_n[idx])


@dataclass(frozen=True)
class PredictedEntity:
    start: int
    end: int  # inclusive
    type_id: int
    score: float


def span_support(sentence_len: int) -> np.ndarray:
    """All (s, e) integer pairs with 0 <= s <= e < L in lexicographic order."""
    return np.array(
        [(s, e) for s in range(sentence_len) for e in range(s, sentence_len)], dtype=np.int64
    )


def _span_index(spans: np.ndarray, s: int, e: int) -> int:
    # lexicographic layout: offset of start s is s*L - s*(s-1)/2 over length L
    L = int(spans[-1, 1]) + 1
    if not (0 <= s <= e < L):
        raise IndexError(f"span ({s},{e}) outside support for length {L}")
    return s * L - (s * (s - 1)) // 2 + (e - s)


def category_distribution(q: Tensor, c: Tensor, head: HeadParams) -> Tensor:
    """p_c = softmax(c + MLP(q)); the head owns this final logits update."""
    return nx.softmax_lastdim(c + nx.mlp_apply(q, head.final_mlp))


def span_distribution(q: Tensor, n: Tensor, H: Tensor, head: HeadParams) -> tuple:
    """Joint span distribution per proposal: softmax over the triangular
    support of logG(s, e) + (pointer score)/sqrt(d).

    q, n: [..., L, d] and [..., L, 2]; H: [..., L, d] token representations.
    Returns (p_n [..., L, S], spans [S, 2]).
    """
    L = H.shape[-2]
    d = H.shape[-1]
    spans = span_support(L)
    s_idx, e_idx = spans[:, 0], spans[:, 1]

    q_s = nx.linear_affine(q, head.start_w, head.start_b)  # [..., L, p]
    h_s = nx.linear_affine(H, head.start_w, head.start_b)
    dot_s = nx.matmul(q_s, nx.swapaxes(h_s, -1, -2))  # [..., L(query), L(token)]
    q_e = nx.linear_affine(q, head.end_w, head.end_b)
    h_e = nx.linear_affine(H, head.end_w, head.end_b)
    dot_e = nx.matmul(q_e, nx.swapaxes(h_e, -1, -2))
    pointer = nx.take_lastdim(dot_s, s_idx) + nx.take_lastdim(dot_e, e_idx)  # [..., L, S]

    mu, _, theta = _spatial_fields(q, n, head.spatial_mlp, head.epsilon)  # [..., L, 2 / 2x2]
    lead = mu.shape[:-2]
    coords = nx.constant(spans.astype(q.values.dtype))  # [S, 2]
    diff = coords - nx.reshape(mu, lead + (L, 1, 2))  # [..., L, S, 2]
    row = nx.reshape(diff, lead + (L, spans.shape[0], 1, 2))
    theta_e = nx.reshape(theta, lead + (L, 1, 2, 2))
    quad = nx.sum_axis(nx.sum_axis(nx.matmul(row, theta_e) * row, axis=-1), axis=-1)

    logits = -quad + pointer * (1.0 / np.sqrt(d))
    return nx.softmax_lastdim(logits), spans


def sentence_distributions(p_c_values: np.ndarray, p_n_values: np.ndarray,
                           spans: np.ndarray) -> list:
    """Per-proposal ProposalDistributions for one sentence ([L, T+1], [L, S])."""
    return [
        ProposalDistributions(p_c=p_c_values[i], spans=spans, p_n=p_n_values[i])
        for i in range(p_c_values.shape[0])
    ]


def decode(dists, none_id: int) -> list:
    """Keep a proposal's best (span, category) pair when the category is not
    None and p_c(t) * p_n(s, e) >= p_c(None). Duplicate triples collapse to
    the highest score; output is sorted for determinism."""
    best = {}
    for d in dists:
        t = int(np.argmax(d.p_c))  # argmax ties break to the lowest index
        if t == none_id:
            continue
        si = int(np.argmax(d.p_n))  # lexicographic order makes ties deterministic
        score = float(d.p_c[t] * d.p_n[si])
        if score < float(d.p_c[none_id]):
            continue
        s, e = int(d.spans[si, 0]), int(d.spans[si, 1])
        key = (s, e, t)
        if key not in best or score > best[key]:
            best[key] = score
    return [
        PredictedEntity(start=s, end=e, type_id=t, score=best[(s, e, t)])
        for (s, e, t) in sorted(best)
    ]
