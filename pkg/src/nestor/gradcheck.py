"""Gradient-check suite: every differentiable primitive plus the composed
pipeline (encoder -> pyramid -> regressor -> head -> matching loss) on a
tiny 64-bit model, all against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import resolve
from .data import SentenceExample
from .encoder import Vocabularies
from .model import Model
from .numerics import Rng, Tensor, finite_diff_gradcheck
from .predictor import ProposalDistributions
from .trainer import assign, bipartite_loss, targets_of

__all__ = ["CheckResult", "primitive_checks", "composed_pipeline_check", "run_suite"]

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return self.max_error <= self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_rel_err={self.max_error:.3e} tol={self.tolerance:.0e}"


def _check(name, build_scalar, tensors, h=1e-5, tol=TOLERANCE) -> CheckResult:
    worst = 0.0
    for t in tensors:
        err = finite_diff_gradcheck(lambda _: build_scalar(), t, h=h)
        worst = max(worst, err)
    return CheckResult(name=name, max_error=worst, tolerance=tol)


def primitive_checks(seed: int = 0) -> list:
    """One gradcheck per numerics primitive on a random small instance."""
    rng = Rng(seed)
    registry: dict = {}
    from .model import ParamFactory

    f = ParamFactory(rng, np.float64, registry)
    results = []

    x = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    w, b = f.matrix("lin.w", 2, 4), f.vector("lin.b", 2)
    results.append(
        _check("linear_affine", lambda: nx.sum_axis(nx.tanh(nx.linear_affine(x, w, b))),
               [x, w.tensor, b.tensor])
    )

    seq = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    cw, cb = f.conv("conv.w", 4, 2, 3), f.vector("conv.b", 4)
    results.append(
        _check("conv1d_valid", lambda: nx.sum_axis(nx.tanh(nx.conv1d_valid(seq, 2, cw, cb))),
               [seq, cw.tensor, cb.tensor])
    )

    tw, tb = f.tconv("tconv.w", 3, 2, 4), f.vector("tconv.b", 4)
    results.append(
        _check("tconv1d", lambda: nx.sum_axis(nx.tanh(nx.tconv1d(seq, 2, tw, tb))),
               [seq, tw.tensor, tb.tensor])
    )

    gru = f.gru("gru", 3, 2)
    gru_tensors = [seq]
    for d in (gru.fw, gru.bw):
        gru_tensors += [d.w_x.tensor, d.b_x.tensor, d.w_h.tensor, d.b_h.tensor]
    results.append(
        _check("bigru_encode", lambda: nx.sum_axis(nx.bigru_encode(seq, gru)), gru_tensors)
    )

    g, be = f.layer_norm("ln", 3)
    results.append(
        _check("layer_norm", lambda: nx.sum_axis(nx.sigmoid(nx.layer_norm(seq, g, be))),
               [seq, g.tensor, be.tensor])
    )

    coeff = nx.constant(rng.uniform(-1, 1, (3, 4)))
    results.append(
        _check("softmax_lastdim", lambda: nx.sum_axis(nx.softmax_lastdim(x) * coeff), [x])
    )

    for name in ("gelu", "sigmoid", "tanh"):
        act = getattr(nx, name)
        results.append(_check(name, lambda a=act: nx.sum_axis(a(x)), [x]))

    pool_w = nx.constant(rng.uniform(-1, 1, (4, 3)))
    results.append(
        _check("mean_pool", lambda: nx.sum_axis(nx.mean_pool(seq, window=2) * pool_w), [seq])
    )

    mlp = f.mlp("mlp", [4, 5, 2])
    mlp_tensors = [x] + [t for pair in mlp.layers for t in (pair[0].tensor, pair[1].tensor)]
    results.append(_check("mlp_apply", lambda: nx.sum_axis(nx.mlp_apply(x, mlp)), mlp_tensors))

    table = f.table("emb", 6, 3)
    ids = np.array([0, 2, 5, 2])
    results.append(
        _check("embedding", lambda: nx.sum_axis(nx.tanh(nx.embedding(table, ids))),
               [table.tensor])
    )
    return results


def _pipeline_fixture():
    examples = [
        SentenceExample(id="gc-0", tokens=["aa", "bb", "aa"],
                        entities=[]),
        SentenceExample(id="gc-1", tokens=["bb", "cc", "dd"],
                        entities=[]),
    ]
    from .data import EntitySpan

    target = SentenceExample(
        id="gc-2", tokens=["aa", "cc", "bb"],
        entities=[EntitySpan(0, 1, "A"), EntitySpan(2, 2, "B")],
    )
    vocabs = Vocabularies.build(examples + [target])
    cfg = resolve(
        {
            "model": {"dim": 16, "heads": 2, "kernel_sizes": [2], "regressor_layers": 2,
                      "gru_hidden": 2, "mlp_hidden": 3, "max_len": 8},
            "embeddings": {"char_dim": 2, "word_dim": 2},
            "train": {"seed": 12, "precision": "float64"},
        }
    )
    model = Model(cfg, vocabs)
    return model, target


def composed_pipeline_check(h: float = 1e-5) -> list:
    """Finite-difference check of the matching loss against every model
    parameter on a 3-token sentence (assignment frozen at the base point).

    Probes are grouped by pipeline stage, and stages strictly upstream of
    the perturbed parameters are cached as constants: the loss value is
    unchanged since they do not depend on the probe, which keeps the full
    per-coordinate sweep inside the runtime budget.
    """
    from . import encoder as enc
    from . import predictor as pred
    from . import proposer as prop
    from . import regressor as reg

    model, sentence = _pipeline_fixture()
    targets = targets_of(sentence, model.vocabs)
    none_id = model.vocabs.none_id

    def from_hidden(H):
        levels = prop.forward_pass(H, model.pyramid_cfg, model.pyramid)
        prop.backward_pass(H, levels, model.pyramid_cfg, model.pyramid)
        return prop.fuse_proposals(levels, model.pyramid_cfg, model.pyramid)

    def from_proposals(Q, C, N):
        return reg.regress(Q, C, N, model.regressor, model.ablation)[:3]

    def loss_from_head(Q, C, N, H, assignment):
        p_c = pred.category_distribution(Q, C, model.head)
        p_n, spans = pred.span_distribution(Q, N, H, model.head)
        return bipartite_loss(
            assignment, targets, nx.take(p_c, 0, axis=0), nx.take(p_n, 0, axis=0),
            spans, none_id,
        )

    with nx.no_grad():
        base = model.forward_batch([sentence])
    frozen, _ = assign(targets, model.distributions_for(base, 0), none_id)

    def encode():
        return enc.encode_batch([sentence], model.vocabs, model.encoder)

    def full_loss():
        H = encode()
        pset = from_hidden(H)
        Q, C, N = from_proposals(pset.Q, pset.C, pset.N)
        return loss_from_head(Q, C, N, H, frozen)

    H_const = base.H.detach()
    P_const = (base.proposals.Q.detach(), base.proposals.C.detach(), base.proposals.N.detach())
    R_const = (base.Q.detach(), base.C.detach(), base.N.detach())

    def pyramid_loss():
        pset = from_hidden(H_const)
        Q, C, N = from_proposals(pset.Q, pset.C, pset.N)
        return loss_from_head(Q, C, N, H_const, frozen)

    def regressor_loss():
        Q, C, N = from_proposals(*P_const)
        return loss_from_head(Q, C, N, H_const, frozen)

    def head_loss():
        return loss_from_head(*R_const, H_const, frozen)

    stage_fns = {
        "encoder": full_loss,
        "pyramid": pyramid_loss,
        "regressor": regressor_loss,
        "head": head_loss,
    }
    groups: dict = {}
    for name, p in model.params.items():
        groups.setdefault(name.split(".")[0], []).append(p.tensor)
    return [
        _check(f"pipeline.{stage}", stage_fns[stage], groups[stage], h=h)
        for stage in ("encoder", "pyramid", "regressor", "head")
    ]


def run_suite(seed: int = 0) -> list:
    return primitive_checks(seed) + composed_pipeline_check()
