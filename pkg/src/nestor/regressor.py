"""Iterative proposal refinement with spatially modulated attention.

Each layer re-estimates the full proposal triple: the query vector (via
attention + a GRU-style gate), the span location (as a head-weighted
average of per-head prior centers) and the category logits (an additive
delta). The attention logits receive an additive log Gaussian-like prior
-(x - mu)^T Theta (x - mu) centered near each proposal's current span;
Theta is built as L L^T + eps*I from a learned lower-triangular factor so
it is always symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .numerics import MlpParams, Param, Tensor

__all__ = [
    "AblationFlags",
    "SpatialPrior",
    "GateParams",
    "RegressorLayerParams",
    "RegressorParams",
    "RegressorLayerState",
    "category_embed",
    "spatial_params",
    "log_gaussian_like",
    "sma_heads",
    "fuse_heads_location",
    "aggregate_heads_query",
    "gated_update",
    "iterate_logits",
    "regress",
]


@dataclass
class AblationFlags:
    """Switches mirroring the removable components; True means enabled."""

    backward_block: bool = True
    spatial_modulation: bool = True
    gated_update: bool = True
    category_embedding: bool = True
    location_iteration: bool = True
    logits_iteration: bool = True

    @classmethod
    def from_config(cls, section: dict) -> "AblationFlags":
        return cls(**{k: bool(v) for k, v in section.items()})


@dataclass
class SpatialPrior:
    """One Gaussian-like prior: center mu, raw triangular factor, and the
    derived precision Theta = L L^T + eps*I."""

    mu: Tensor  # [..., 2]
    theta_raw: Tensor  # [..., 3]
    theta: Tensor  # [..., 2, 2]


@dataclass
class GateParams:
    w_xr: Param; b_xr: Param; w_hr: Param; b_hr: Param
    w_xz: Param; b_xz: Param; w_hz: Param; b_hz: Param
    w_xn: Param; b_xn: Param; w_hn: Param; b_hn: Param


@dataclass
class RegressorLayerParams:
    w_q: Param; b_q: Param
    w_k: Param; b_k: Param
    w_v: Param; b_v: Param
    spatial_mlp: MlpParams  # d/M -> 5 (delta-n 2, theta-raw 3)
    fuse_mlp: MlpParams  # d/M -> 2 start/end head scores
    out_w: Param  # [d, d], per-head blocks of columns
    out_b: Param  # [d]
    gate: GateParams
    logits_mlp: MlpParams  # d -> T+1


@dataclass
class RegressorParams:
    category_matrix: Param  # [d, T+1], shared across layers
    layers: list
    heads: int
    epsilon: float


@dataclass
class RegressorLayerState:
    """Post-layer snapshot kept for inspection and tests."""

    Q: Tensor
    C: Tensor
    N: Tensor
    head_outputs: Tensor  # [..., M, L, d/M]
    attention: Tensor  # [..., M, L, L]
    centers: Tensor  # [..., L, M, 2]
    precisions: Tensor  # [..., L, M, 2, 2]


def category_embed(q: Tensor, c: Tensor, category_matrix: Param) -> Tensor:
    """h' = q + H^c softmax(c): mixes the type embedding columns by the
    current category belief, analogous to additive positional encoding."""
    alpha = nx.softmax_lastdim(c)
    return q + nx.matmul(alpha, nx.transpose2d(category_matrix.tensor))


def _spatial_fields(h_q: Tensor, n: Tensor, mlp: MlpParams, eps: float) -> tuple:
    """(mu, theta) from per-head queries. h_q: [..., d_h], n broadcastable
    to [..., 2]. theta = L L^T + eps*I with L lower-triangular."""
    out = nx.mlp_apply(h_q, mlp)  # [..., 5]
    delta = nx.slice_axis(out, -1, 0, 2)
    traw = nx.slice_axis(out, -1, 2, 5)
    mu = n + delta
    t0 = nx.slice_axis(traw, -1, 0, 1)
    t1 = nx.slice_axis(traw, -1, 1, 2)
    t2 = nx.slice_axis(traw, -1, 2, 3)
    zero = nx.constant(np.zeros(t0.shape, dtype=t0.values.dtype))
    lower = nx.stack([nx.concat([t0, zero], axis=-1), nx.concat([t1, t2], axis=-1)], axis=-2)
    eye = nx.constant(eps * np.eye(2, dtype=t0.values.dtype))
    theta = nx.matmul(lower, nx.swapaxes(lower, -1, -2)) + eye
    return mu, traw, theta


def spatial_params(h_q: Tensor, n, mlp: MlpParams, eps: float = 1e-4) -> SpatialPrior:
    """Build the Gaussian-like prior for one query projection."""
    n_t = n if isinstance(n, Tensor) else nx.constant(np.asarray(n, dtype=h_q.values.dtype))
    mu, traw, theta = _spatial_fields(h_q, n_t, mlp, eps)
    return SpatialPrior(mu=mu, theta_raw=traw, theta=theta)


def log_gaussian_like(prior: SpatialPrior, x) -> Tensor:
    """log G(x) = -(x - mu)^T Theta (x - mu): zero at the center, negative
    everywhere else, decaying with distance."""
    x_t = x if isinstance(x, Tensor) else nx.constant(np.asarray(x, dtype=prior.mu.values.dtype))
    diff = x_t - prior.mu  # [..., 2]
    row = nx.reshape(diff, diff.shape[:-1] + (1, 2))
    quad = nx.sum_axis(nx.sum_axis(nx.matmul(row, prior.theta) * row, axis=-1), axis=-1)
    return -quad


def _split_heads(x: Tensor, heads: int) -> Tensor:
    lead = x.shape[:-1]
    d = x.shape[-1]
    return nx.reshape(x, lead + (heads, d // heads))


def sma_heads(hq: Tensor, n: Tensor, layer: RegressorLayerParams, heads: int,
              eps: float, modulated: bool = True) -> tuple:
    """Spatially modulated multi-head attention over the proposals.

    Returns (o, alpha, mu, theta): per-head outputs [..., M, L, d/M],
    attention rows [..., M, L, L], and the per-proposal-per-head prior
    parameters. With `modulated` False the log-prior term is dropped and
    this is vanilla scaled dot-product attention.
    """
    d = hq.shape[-1]
    L = hq.shape[-2]
    if d % heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    lead = hq.shape[:-2]

    q = _split_heads(nx.linear_affine(hq, layer.w_q, layer.b_q), heads)  # [..., L, M, dh]
    k = _split_heads(nx.linear_affine(hq, layer.w_k, layer.b_k), heads)
    v = _split_heads(nx.linear_affine(hq, layer.w_v, layer.b_v), heads)

    n_e = nx.reshape(n, lead + (L, 1, 2))
    mu, _, theta = _spatial_fields(q, n_e, layer.spatial_mlp, eps)  # [..., L, M, 2/2x2]

    qm = nx.swapaxes(q, -3, -2)  # [..., M, L, dh]
    km = nx.swapaxes(k, -3, -2)
    vm = nx.swapaxes(v, -3, -2)
    scores = nx.matmul(qm, nx.swapaxes(km, -1, -2)) * (1.0 / np.sqrt(dh))  # [..., M, L(q), L(k)]

    if modulated:
        keys = nx.reshape(n, lead + (1, 1, L, 2))
        mu_e = nx.reshape(mu, lead + (L, heads, 1, 2))
        diff = keys - mu_e  # [..., L, M, L, 2]
        row = nx.reshape(diff, lead + (L, heads, L, 1, 2))
        theta_e = nx.reshape(theta, lead + (L, heads, 1, 2, 2))
        quad = nx.sum_axis(nx.sum_axis(nx.matmul(row, theta_e) * row, axis=-1), axis=-1)
        scores = scores + nx.swapaxes(-quad, -3, -2)  # align to [..., M, L, L]

    alpha = nx.softmax_lastdim(scores)
    o = nx.matmul(alpha, vm)  # [..., M, L, dh]
    return o, alpha, mu, theta


def fuse_heads_location(o: Tensor, mu: Tensor, fuse_mlp: MlpParams) -> Tensor:
    """New span locations: per-component softmax over heads of MLP scores,
    then the weighted average of each head's prior center."""
    r = nx.mlp_apply(o, fuse_mlp)  # [..., M, L, 2]
    r = nx.swapaxes(r, -3, -2)  # [..., L, M, 2]
    weights = nx.softmax_lastdim(nx.swapaxes(r, -1, -2))  # [..., L, 2, M]
    centers = nx.swapaxes(mu, -1, -2)  # [..., L, 2, M]
    return nx.sum_axis(weights * centers, axis=-1)  # [..., L, 2]


def aggregate_heads_query(o: Tensor, out_w: Param, out_b: Param) -> Tensor:
    """Sum of per-head affine maps; implemented as one affine over the
    concatenated heads (column block m of the matrix is W_m, the bias is
    the summed per-head bias)."""
    merged = nx.swapaxes(o, -3, -2)  # [..., L, M, dh]
    lead = merged.shape[:-2]
    flat = nx.reshape(merged, lead + (merged.shape[-2] * merged.shape[-1],))
    return nx.linear_affine(flat, out_w, out_b)


def gated_update(h: Tensor, x: Tensor, p: GateParams) -> Tensor:
    """GRU-style gate replacing the transformer feed-forward block: the
    attention outcome x is the input, the pre-attention state h is the
    hidden state being updated."""
    r = nx.sigmoid(nx.linear_affine(x, p.w_xr, p.b_xr) + nx.linear_affine(h, p.w_hr, p.b_hr))
    z = nx.sigmoid(nx.linear_affine(x, p.w_xz, p.b_xz) + nx.linear_affine(h, p.w_hz, p.b_hz))
    cand = nx.tanh(nx.linear_affine(x, p.w_xn, p.b_xn) + r * nx.linear_affine(h, p.w_hn, p.b_hn))
    return (1.0 - z) * cand + z * h


def iterate_logits(q_new: Tensor, c: Tensor, logits_mlp: MlpParams) -> Tensor:
    """Additive logits correction: c + MLP(q)."""
    return c + nx.mlp_apply(q_new, logits_mlp)


def regress(Q: Tensor, C: Tensor, N: Tensor, params: RegressorParams,
            flags: Optional[AblationFlags] = None, n_layers: Optional[int] = None) -> tuple:
    """Run the refinement stack; returns (Q, C, N, trace). With zero layers
    the proposals pass through untouched."""
    flags = flags or AblationFlags()
    layers = params.layers if n_layers is None else params.layers[:n_layers]
    trace = []
    for layer in layers:
        h = category_embed(Q, C, params.category_matrix) if flags.category_embedding else Q
        o, alpha, mu, theta = sma_heads(
            h, N, layer, params.heads, params.epsilon, modulated=flags.spatial_modulation
        )
        n_new = fuse_heads_location(o, mu, layer.fuse_mlp) if flags.location_iteration else N
        q_prime = aggregate_heads_query(o, layer.out_w, layer.out_b)
        q_new = gated_update(h, q_prime, layer.gate) if flags.gated_update else q_prime
        c_new = iterate_logits(q_new, C, layer.logits_mlp) if flags.logits_iteration else C
        Q, C, N = q_new, c_new, n_new
        trace.append(
            RegressorLayerState(
                Q=Q, C=C, N=N, head_outputs=o, attention=alpha, centers=mu, precisions=theta
            )
        )
    return Q, C, N, trace
