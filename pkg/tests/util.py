"""Shared helpers for the test suite."""

import numpy as np

from nestor.numerics import (
    BiGruParams,
    GruDirectionParams,
    MlpParams,
    Param,
    Rng,
    Tensor,
)


def param(name, values):
    return Param(Tensor(np.asarray(values, dtype=float), requires_grad=True), name)


def rand_param(rng: Rng, name, shape, scale=0.5):
    return param(name, rng.uniform(-scale, scale, shape))


def rand_tensor(rng: Rng, shape, scale=0.5, requires_grad=True):
    return Tensor(rng.uniform(-scale, scale, shape), requires_grad=requires_grad)


def rand_gru(rng: Rng, name, d_in, hidden):
    def direction(tag):
        return GruDirectionParams(
            w_x=rand_param(rng, f"{name}.{tag}.w_x", (3 * hidden, d_in)),
            b_x=rand_param(rng, f"{name}.{tag}.b_x", (3 * hidden,)),
            w_h=rand_param(rng, f"{name}.{tag}.w_h", (3 * hidden, hidden)),
            b_h=rand_param(rng, f"{name}.{tag}.b_h", (3 * hidden,)),
        )

    return BiGruParams(fw=direction("fw"), bw=direction("bw"))


def rand_mlp(rng: Rng, name, sizes, activation="gelu"):
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(
            (
                rand_param(rng, f"{name}.w{i}", (d_out, d_in)),
                rand_param(rng, f"{name}.b{i}", (d_out,)),
            )
        )
    return MlpParams(layers=layers, activation=activation)


def gru_param_tensors(p: BiGruParams):
    out = []
    for d in (p.fw, p.bw):
        out.extend([d.w_x.tensor, d.b_x.tensor, d.w_h.tensor, d.b_h.tensor])
    return out
