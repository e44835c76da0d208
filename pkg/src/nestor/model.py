"""Full network assembly: parameter construction and the forward pass
from raw sentences to per-proposal output distributions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import encoder as enc
from . import numerics as nx
from . import predictor as pred
from . import proposer as prop
from . import regressor as reg
from .errors import ConfigError, ShapeError
from .numerics import BiGruParams, GruDirectionParams, MlpParams, Param, Rng, Tensor

__all__ = ["Model", "BatchOutput", "ParamFactory"]


class ParamFactory:
    """Creates named parameters with deterministic initialization and a
    uniqueness-checked registry."""

    def __init__(self, rng: Rng, dtype, registry: dict):
        self.rng = rng
        self.dtype = dtype
        self.registry = registry

    def _add(self, name, values, trainable=True) -> Param:
        if name in self.registry:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Param(Tensor(np.asarray(values, dtype=self.dtype)), name=name, trainable=trainable)
        self.registry[name] = p
        return p

    def matrix(self, name, d_out, d_in) -> Param:
        limit = np.sqrt(6.0 / (d_in + d_out))
        return self._add(name, self.rng.uniform(-limit, limit, (d_out, d_in)))

    def vector(self, name, d, fill=0.0) -> Param:
        return self._add(name, np.full(d, fill))

    def table(self, name, rows, dim) -> Param:
        limit = np.sqrt(3.0 / dim)
        return self._add(name, self.rng.uniform(-limit, limit, (rows, dim)))

    def conv(self, name, d_out, k, d_in) -> Param:
        limit = np.sqrt(6.0 / (k * d_in + d_out))
        return self._add(name, self.rng.uniform(-limit, limit, (d_out, k, d_in)))

    def tconv(self, name, c_in, k, c_out) -> Param:
        limit = np.sqrt(6.0 / (c_in + k * c_out))
        return self._add(name, self.rng.uniform(-limit, limit, (c_in, k, c_out)))

    def layer_norm(self, name, d) -> tuple:
        return self.vector(f"{name}.gamma", d, fill=1.0), self.vector(f"{name}.beta", d)

    def gru(self, name, d_in, hidden) -> BiGruParams:
        def direction(tag):
            return GruDirectionParams(
                w_x=self.matrix(f"{name}.{tag}.w_x", 3 * hidden, d_in),
                b_x=self.vector(f"{name}.{tag}.b_x", 3 * hidden),
                w_h=self.matrix(f"{name}.{tag}.w_h", 3 * hidden, hidden),
                b_h=self.vector(f"{name}.{tag}.b_h", 3 * hidden),
            )

        return BiGruParams(fw=direction("fw"), bw=direction("bw"))

    def mlp(self, name, sizes, activation="gelu") -> MlpParams:
        layers = [
            (self.matrix(f"{name}.w{i}", o, i_), self.vector(f"{name}.b{i}", o))
            for i, (i_, o) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        return MlpParams(layers=layers, activation=activation)


@dataclass
class BatchOutput:
    examples: list
    H: Tensor  # [B, L, d]
    proposals: prop.ProposalSet
    trace: list
    Q: Tensor
    C: Tensor
    N: Tensor
    p_c: Tensor  # [B, L, T+1]
    p_n: Tensor  # [B, L, S]
    spans: np.ndarray  # [S, 2]


class Model:
    """The proposer-regressor entity detection network.

    Construction is deterministic given (config, vocabularies): parameters
    are drawn from a single seeded stream in a fixed order. Word vectors
    and the contextual store are optional overlays.
    """

    def __init__(self, config: dict, vocabs, word_vectors: Optional[dict] = None,
                 contextual: Optional[dict] = None, contextual_dim: Optional[int] = None,
                 dtype=None):
        self.config = config
        self.vocabs = vocabs
        m, e = config["model"], config["embeddings"]
        self.dim = m["dim"]
        self.heads = m["heads"]
        if self.dim % self.heads != 0:
            raise ConfigError(f"model.dim {self.dim} not divisible by model.heads {self.heads}")
        self.dtype = dtype if dtype is not None else (
            np.float32 if config["train"]["precision"] == "float32" else np.float64
        )
        self.ablation = reg.AblationFlags.from_config(config["ablation"])
        self.pyramid_cfg = prop.PyramidConfig(kernel_sizes=list(m["kernel_sizes"]))
        self.params: dict = {}
        rng = Rng(config["train"]["seed"])
        f = ParamFactory(rng, self.dtype, self.params)

        d = self.dim
        gh = m["gru_hidden"] or d // 2
        mh = m["mlp_hidden"] or d
        T1 = vocabs.n_types + 1
        eps = m["epsilon_psd"]

        # encoder ----------------------------------------------------------
        if e["use_contextual"]:
            if contextual_dim is None and contextual:
                contextual_dim = next(iter(contextual.values())).shape[1]
            if not contextual_dim:
                raise ConfigError(
                    "embeddings.use_contextual requires a contextual store or explicit dim"
                )
        self.contextual_dim = int(contextual_dim or 0)
        store = enc.EmbeddingStore(
            word_table=f.table("encoder.word_table", len(vocabs.word_to_id), e["word_dim"]),
            char_table=f.table("encoder.char_table", len(vocabs.char_to_id), e["char_dim"]),
            pos_table=f.table("encoder.pos_table", len(vocabs.pos_to_id), e["pos_dim"]),
            contextual=contextual,
            contextual_dim=self.contextual_dim,
        )
        if word_vectors:
            self.words_loaded = self._overlay_word_vectors(store.word_table, word_vectors)
        else:
            self.words_loaded = 0
        char_gru = f.gru("encoder.char_gru", e["char_dim"], e["char_dim"])
        width = 0
        if e["use_char"]:
            width += 2 * e["char_dim"]
        if e["use_contextual"]:
            width += self.contextual_dim
        if e["use_word"]:
            width += e["word_dim"]
        if e["use_pos"]:
            width += e["pos_dim"]
        if width == 0:
            raise ConfigError("at least one embedding channel must be enabled")
        self.encoder = enc.EncoderParams(
            store=store,
            char_gru=char_gru,
            fuse_gru=f.gru("encoder.fuse_gru", width, gh),
            proj_w=f.matrix("encoder.proj.w", d, 2 * gh),
            proj_b=f.vector("encoder.proj.b", d),
            use_char=e["use_char"],
            use_contextual=e["use_contextual"],
            use_word=e["use_word"],
            use_pos=e["use_pos"],
            max_len=m["max_len"],
        )

        # proposer ----------------------------------------------------------
        kernels = self.pyramid_cfg.kernel_sizes
        levels = []
        for l in range(len(kernels) + 1):
            name = f"pyramid.l{l}"
            lp = prop.PyramidLevelParams(
                ln_in=f.layer_norm(f"{name}.ln_in", d),
                gru=f.gru(f"{name}.gru", d, gh),
                proj_w=f.matrix(f"{name}.proj.w", d, 2 * gh),
                proj_b=f.vector(f"{name}.proj.b", d),
                ln_out=f.layer_norm(f"{name}.ln_out", d),
                top_w=f.matrix(f"{name}.top.w", d, d),
                top_b=f.vector(f"{name}.top.b", d),
            )
            if l < len(kernels):
                k = kernels[l]
                lp.conv_w = f.conv(f"{name}.conv.w", d, k, d)
                lp.conv_b = f.vector(f"{name}.conv.b", d)
                lp.tconv_w = f.tconv(f"{name}.tconv.w", d, k, d)
                lp.tconv_b = f.vector(f"{name}.tconv.b", d)
                lp.back_ln = f.layer_norm(f"{name}.back_ln", d)
                lp.back_gru = f.gru(f"{name}.back_gru", d, gh)
                lp.comb_w = f.matrix(f"{name}.comb.w", d, d + 2 * gh)
                lp.comb_b = f.vector(f"{name}.comb.b", d)
            levels.append(lp)
        self.pyramid = prop.PyramidParams(
            levels=levels,
            score_mlp=f.mlp("pyramid.score_mlp", [d, mh, 2]),
            logits_mlp=f.mlp("pyramid.logits_mlp", [d, mh, T1]),
        )

        # regressor ---------------------------------------------------------
        dh = d // self.heads
        rlayers = []
        for i in range(m["regressor_layers"]):
            name = f"regressor.l{i}"
            rlayers.append(
                reg.RegressorLayerParams(
                    w_q=f.matrix(f"{name}.q.w", d, d), b_q=f.vector(f"{name}.q.b", d),
                    w_k=f.matrix(f"{name}.k.w", d, d), b_k=f.vector(f"{name}.k.b", d),
                    w_v=f.matrix(f"{name}.v.w", d, d), b_v=f.vector(f"{name}.v.b", d),
                    spatial_mlp=f.mlp(f"{name}.spatial_mlp", [dh, mh, 5]),
                    fuse_mlp=f.mlp(f"{name}.fuse_mlp", [dh, mh, 2]),
                    out_w=f.matrix(f"{name}.out.w", d, d),
                    out_b=f.vector(f"{name}.out.b", d),
                    gate=reg.GateParams(
                        w_xr=f.matrix(f"{name}.gate.w_xr", d, d), b_xr=f.vector(f"{name}.gate.b_xr", d),
                        w_hr=f.matrix(f"{name}.gate.w_hr", d, d), b_hr=f.vector(f"{name}.gate.b_hr", d),
                        w_xz=f.matrix(f"{name}.gate.w_xz", d, d), b_xz=f.vector(f"{name}.gate.b_xz", d),
                        w_hz=f.matrix(f"{name}.gate.w_hz", d, d), b_hz=f.vector(f"{name}.gate.b_hz", d),
                        w_xn=f.matrix(f"{name}.gate.w_xn", d, d), b_xn=f.vector(f"{name}.gate.b_xn", d),
                        w_hn=f.matrix(f"{name}.gate.w_hn", d, d), b_hn=f.vector(f"{name}.gate.b_hn", d),
                    ),
                    logits_mlp=f.mlp(f"{name}.logits_mlp", [d, mh, T1]),
                )
            )
        self.regressor = reg.RegressorParams(
            category_matrix=f.matrix("regressor.category_matrix", d, T1),
            layers=rlayers,
            heads=self.heads,
            epsilon=eps,
        )

        # prediction head -----------------------------------------------------
        self.head = pred.HeadParams(
            final_mlp=f.mlp("head.final_mlp", [d, mh, T1]),
            start_w=f.matrix("head.start.w", d, d), start_b=f.vector("head.start.b", d),
            end_w=f.matrix("head.end.w", d, d), end_b=f.vector("head.end.b", d),
            spatial_mlp=f.mlp("head.spatial_mlp", [d, mh, 5]),
            epsilon=eps,
        )

    # -----------------------------------------------------------------------
    def _overlay_word_vectors(self, table: Param, vectors: dict) -> int:
        dim = table.shape[1]
        loaded = 0
        for token, idx in self.vocabs.word_to_id.items():
            vec = vectors.get(token)
            if vec is None:
                continue
            if len(vec) != dim:
                raise ShapeError(
                    f"word vector for {token!r} has dim {len(vec)}, table expects {dim}"
                )
            table.values[idx] = np.asarray(vec, dtype=self.dtype)
            loaded += 1
        return loaded

    def parameters(self) -> list:
        return list(self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    # -----------------------------------------------------------------------
    def forward_batch(self, examples: list) -> BatchOutput:
        """Forward a group of same-length sentences: encoder -> pyramid ->
        proposal fuse -> regressor stack -> output distributions."""
        H = enc.encode_batch(examples, self.vocabs, self.encoder)
        levels = prop.forward_pass(H, self.pyramid_cfg, self.pyramid)
        if self.ablation.backward_block:
            prop.backward_pass(H, levels, self.pyramid_cfg, self.pyramid)
            refined = [lvl.refined_features for lvl in levels]
        else:
            refined = [lvl.forward_features for lvl in levels]
        pset = prop.fuse_proposals(levels, self.pyramid_cfg, self.pyramid, refined=refined)
        Q, C, N, trace = reg.regress(pset.Q, pset.C, pset.N, self.regressor, self.ablation)
        p_c = pred.category_distribution(Q, C, self.head)
        p_n, spans = pred.span_distribution(Q, N, H, self.head)
        return BatchOutput(
            examples=examples, H=H, proposals=pset, trace=trace,
            Q=Q, C=C, N=N, p_c=p_c, p_n=p_n, spans=spans,
        )

    def forward_sentence(self, example) -> BatchOutput:
        return self.forward_batch([example])

    def distributions_for(self, out: BatchOutput, b: int) -> list:
        return pred.sentence_distributions(out.p_c.values[b], out.p_n.values[b], out.spans)

    def decode_batch(self, examples: list) -> list:
        """Decode entity sets for same-length sentences (inference mode)."""
        with nx.no_grad():
            out = self.forward_batch(examples)
        none_id = self.vocabs.none_id
        return [pred.decode(self.distributions_for(out, b), none_id) for b in range(len(examples))]
