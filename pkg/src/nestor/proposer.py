"""Bidirectional feature pyramid and per-token entity proposals.

Level 0 is the encoder output; each convolution of kernel k shortens the
sequence by k-1, so a feature at index i of level l covers the token span
(i, i + v_l - 1) with v_0 = 1 and v_l = 1 - l + sum(k_1..k_l). Levels stop
existing once their length would drop below one (short sentences simply
truncate the pyramid).

The backward sweep sends refined features down through transposed
convolutions; a sliding mean pool of the raw encoder output is added in as
a residual at every level before the final normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import ShapeError
from .numerics import BiGruParams, MlpParams, Param, Tensor

__all__ = [
    "PyramidConfig",
    "PyramidLevel",
    "Proposal",
    "ProposalSet",
    "PyramidParams",
    "span_of_feature",
    "forward_pass",
    "backward_pass",
    "fuse_proposals",
]


@dataclass
class PyramidConfig:
    kernel_sizes: list

    def span_length(self, level: int) -> int:
        """v_0 = 1, v_l = 1 - l + sum of the first l kernel sizes."""
        if level < 0 or level > len(self.kernel_sizes):
            raise ShapeError(f"pyramid level {level} does not exist for kernels {self.kernel_sizes}")
        return 1 - level + sum(self.kernel_sizes[:level])

    def level_length(self, level: int, sentence_len: int) -> int:
        return sentence_len - self.span_length(level) + 1

    def num_levels(self, sentence_len: int) -> int:
        """Levels that actually exist for a sentence: length must stay >= 1."""
        n = 0
        for level in range(len(self.kernel_sizes) + 1):
            if self.level_length(level, sentence_len) < 1:
                break
            n += 1
        return n


@dataclass
class PyramidLevel:
    level: int
    span_length: int
    forward_features: Tensor  # [..., L_l, d]
    refined_features: Optional[Tensor] = None
    spans: list = field(default_factory=list)  # per-feature (s, e), end inclusive


@dataclass
class Proposal:
    """Per-token entity proposal: query vector, category logits and a
    continuous (start, end) span location."""

    q: Tensor  # [d]
    c: Tensor  # [T+1]
    n: tuple  # (start, end) floats


@dataclass
class ProposalSet:
    """Batched proposal fields plus the fused feature bookkeeping."""

    Q: Tensor  # [..., L, d]
    C: Tensor  # [..., L, T+1]
    N: Tensor  # [..., L, 2]
    feature_spans: np.ndarray  # [F, 2]
    membership: np.ndarray  # [L, F] bool
    weights: Tensor  # [..., L, 2, F] softmax weights over member features

    def as_list(self) -> list:
        """Per-token Proposal objects (single-sentence tensors only)."""
        if self.Q.ndim != 2:
            raise ShapeError(f"as_list expects unbatched proposals, got {self.Q.shape}")
        out = []
        for j in range(self.Q.shape[0]):
            n = self.N.values[j]
            out.append(
                Proposal(
                    q=nx.take(self.Q, j, axis=0),
                    c=nx.take(self.C, j, axis=0),
                    n=(float(n[0]), float(n[1])),
                )
            )
        return out


@dataclass
class PyramidLevelParams:
    ln_in: tuple  # (gamma, beta) before the forward BiGRU
    gru: BiGruParams
    proj_w: Param
    proj_b: Param
    ln_out: tuple  # (gamma, beta) closing the backward refinement
    top_w: Param  # used when this level is the pyramid top
    top_b: Param
    # present on all but the last level (they connect level l and l+1)
    conv_w: Optional[Param] = None
    conv_b: Optional[Param] = None
    tconv_w: Optional[Param] = None
    tconv_b: Optional[Param] = None
    back_ln: Optional[tuple] = None
    back_gru: Optional[BiGruParams] = None
    comb_w: Optional[Param] = None
    comb_b: Optional[Param] = None


@dataclass
class PyramidParams:
    levels: list  # PyramidLevelParams, one per possible level
    score_mlp: MlpParams  # d -> 2 start/end scores, shared across levels
    logits_mlp: MlpParams  # d -> T+1 category logits


def span_of_feature(i: int, level: int, cfg: PyramidConfig, sentence_len: int) -> tuple:
    """Token span (s, e), end inclusive, covered by feature i of a level."""
    if level >= cfg.num_levels(sentence_len):
        raise ShapeError(
            f"pyramid level {level} does not exist for sentence length {sentence_len}"
        )
    v = cfg.span_length(level)
    if not (0 <= i < sentence_len - v + 1):
        raise ShapeError(f"feature index {i} out of range at level {level}")
    return (i, i + v - 1)


def forward_pass(H: Tensor, cfg: PyramidConfig, params: PyramidParams) -> list:
    """Bottom-up sweep: per level LayerNorm -> BiGRU -> affine gives the
    forward features; convolution + gelu feeds the next level."""
    sentence_len = H.shape[-2]
    n_levels = cfg.num_levels(sentence_len)
    levels = []
    x = H
    for level in range(n_levels):
        p = params.levels[level]
        gamma, beta = p.ln_in
        hf = nx.linear_affine(nx.bigru_encode(nx.layer_norm(x, gamma, beta), p.gru),
                              p.proj_w, p.proj_b)
        v = cfg.span_length(level)
        spans = [(i, i + v - 1) for i in range(cfg.level_length(level, sentence_len))]
        levels.append(
            PyramidLevel(level=level, span_length=v, forward_features=hf, spans=spans)
        )
        if level + 1 < n_levels:
            x = nx.gelu(nx.conv1d_valid(hf, cfg.kernel_sizes[level], p.conv_w, p.conv_b))
    return levels


def backward_pass(H: Tensor, levels: list, cfg: PyramidConfig,
                  params: PyramidParams) -> list:
    """Top-down sweep filling refined_features on every level.

    The top level has no higher neighbor, so its refinement is the pooled
    residual plus an affine image of its own forward features. Below that,
    each level concatenates its forward features with a BiGRU reading of
    the transposed-convolution expansion from above.
    """
    if not levels:
        raise ShapeError("backward_pass: empty pyramid")
    top = len(levels) - 1
    for l in range(top, -1, -1):
        p = params.levels[l]
        lvl = levels[l]
        pooled = nx.mean_pool(H, window=lvl.span_length)
        if l == top:
            mixed = nx.linear_affine(lvl.forward_features, p.top_w, p.top_b)
        else:
            above = levels[l + 1].refined_features
            k = cfg.kernel_sizes[l]
            down = nx.gelu(nx.tconv1d(above, k, p.tconv_w, p.tconv_b))
            if down.shape[-2] != lvl.forward_features.shape[-2]:
                raise ShapeError(
                    f"backward_pass: tconv produced length {down.shape[-2]} at level {l}, "
                    f"expected {lvl.forward_features.shape[-2]}"
                )
            g_in, b_in = p.back_ln
            fed_back = nx.bigru_encode(nx.layer_norm(down, g_in, b_in), p.back_gru)
            mixed = nx.linear_affine(
                nx.concat([lvl.forward_features, fed_back], axis=-1), p.comb_w, p.comb_b
            )
        gamma, beta = p.ln_out
        lvl.refined_features = nx.layer_norm(pooled + mixed, gamma, beta)
    return [lvl.refined_features for lvl in levels]


def membership_mask(cfg: PyramidConfig, sentence_len: int) -> tuple:
    """(spans [F, 2], mask [L, F]) over all pyramid features: mask[j, f] is
    True when feature f's span contains token j. Level 0 guarantees every
    token at least one member."""
    spans = []
    for level in range(cfg.num_levels(sentence_len)):
        v = cfg.span_length(level)
        spans.extend((i, i + v - 1) for i in range(cfg.level_length(level, sentence_len)))
    spans = np.array(spans, dtype=float)
    tokens = np.arange(sentence_len)[:, None]
    mask = (spans[None, :, 0] <= tokens) & (tokens <= spans[None, :, 1])
    assert mask.any(axis=1).all(), "level 0 must give every token a member feature"
    return spans, mask


def fuse_proposals(levels: list, cfg: PyramidConfig, params: PyramidParams,
                   refined: Optional[list] = None) -> ProposalSet:
    """Initialize one proposal per token from the (refined) pyramid.

    Start and end scores are normalized independently over the member
    features of each token, so the fused location is a convex combination
    of member span endpoints, componentwise. Queries are the bottom-level
    features; category logits derive from the queries.
    """
    feats_per_level = refined if refined is not None else [lvl.refined_features for lvl in levels]
    if feats_per_level[0] is None:
        raise ShapeError("fuse_proposals: refined features missing (run backward_pass)")
    sentence_len = feats_per_level[0].shape[-2]
    spans, mask = membership_mask(cfg, sentence_len)
    if spans.shape[0] != sum(f.shape[-2] for f in feats_per_level):
        raise ShapeError("fuse_proposals: pyramid does not match the sentence length")

    feats = nx.concat(feats_per_level, axis=-2)  # [..., F, d]
    scores = nx.mlp_apply(feats, params.score_mlp)  # [..., F, 2]
    scores_t = nx.swapaxes(scores, -1, -2)  # [..., 2, F]
    lead = scores_t.shape[:-2]
    expanded = nx.reshape(scores_t, lead + (1, 2, spans.shape[0]))
    dtype = feats.values.dtype
    neg = np.where(mask[:, None, :], 0.0, -np.inf).astype(dtype)
    weights = nx.softmax_lastdim(expanded + nx.constant(neg))  # [..., L, 2, F]
    locations = nx.sum_axis(weights * nx.constant(spans.T.astype(dtype)), axis=-1)  # [..., L, 2]

    queries = feats_per_level[0]
    logits = nx.mlp_apply(queries, params.logits_mlp)
    return ProposalSet(
        Q=queries,
        C=logits,
        N=locations,
        feature_spans=spans,
        membership=mask,
        weights=weights,
    )
