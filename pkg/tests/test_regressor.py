import numpy as np
import pytest

from nestor import numerics as nx
from nestor.errors import ConfigError
from nestor.model import ParamFactory
from nestor.numerics import Rng, Tensor, finite_diff_gradcheck
from nestor.regressor import (
    AblationFlags,
    GateParams,
    RegressorLayerParams,
    RegressorParams,
    aggregate_heads_query,
    category_embed,
    fuse_heads_location,
    gated_update,
    iterate_logits,
    log_gaussian_like,
    regress,
    sma_heads,
    spatial_params,
)


def make_layer(f: ParamFactory, name, d, heads, hidden, n_cats):
    dh = d // heads
    return RegressorLayerParams(
        w_q=f.matrix(f"{name}.q.w", d, d), b_q=f.vector(f"{name}.q.b", d),
        w_k=f.matrix(f"{name}.k.w", d, d), b_k=f.vector(f"{name}.k.b", d),
        w_v=f.matrix(f"{name}.v.w", d, d), b_v=f.vector(f"{name}.v.b", d),
        spatial_mlp=f.mlp(f"{name}.spatial", [dh, hidden, 5]),
        fuse_mlp=f.mlp(f"{name}.fuse", [dh, hidden, 2]),
        out_w=f.matrix(f"{name}.out.w", d, d),
        out_b=f.vector(f"{name}.out.b", d),
        gate=GateParams(
            w_xr=f.matrix(f"{name}.g.w_xr", d, d), b_xr=f.vector(f"{name}.g.b_xr", d),
            w_hr=f.matrix(f"{name}.g.w_hr", d, d), b_hr=f.vector(f"{name}.g.b_hr", d),
            w_xz=f.matrix(f"{name}.g.w_xz", d, d), b_xz=f.vector(f"{name}.g.b_xz", d),
            w_hz=f.matrix(f"{name}.g.w_hz", d, d), b_hz=f.vector(f"{name}.g.b_hz", d),
            w_xn=f.matrix(f"{name}.g.w_xn", d, d), b_xn=f.vector(f"{name}.g.b_xn", d),
            w_hn=f.matrix(f"{name}.g.w_hn", d, d), b_hn=f.vector(f"{name}.g.b_hn", d),
        ),
        logits_mlp=f.mlp(f"{name}.logits", [d, hidden, n_cats]),
    )


def make_params(seed=0, d=8, heads=2, layers=2, n_cats=4, hidden=6, eps=1e-4):
    registry = {}
    f = ParamFactory(Rng(seed), np.float64, registry)
    params = RegressorParams(
        category_matrix=f.matrix("hc", d, n_cats),
        layers=[make_layer(f, f"l{i}", d, heads, hidden, n_cats) for i in range(layers)],
        heads=heads,
        epsilon=eps,
    )
    return params, registry


def rand_state(seed, L=4, d=8, n_cats=4):
    rng = Rng(seed)
    Q = Tensor(rng.uniform(-1, 1, (L, d)), requires_grad=True)
    C = Tensor(rng.uniform(-1, 1, (L, n_cats)), requires_grad=True)
    N = Tensor(rng.uniform(0, L - 1.0, (L, 2)), requires_grad=True)
    return Q, C, N


def zero_mlp(mlp):
    for w, b in mlp.layers:
        w.values = np.zeros_like(w.values)
        b.values = np.zeros_like(b.values)


class TestCategoryEmbed:
    def test_near_one_hot_picks_column(self):
        params, _ = make_params(n_cats=2)
        rng = Rng(1)
        q = Tensor(rng.uniform(-1, 1, (8,)))
        c = Tensor(np.array([10.0, -10.0]))
        out = category_embed(q, c, params.category_matrix)
        expect = q.values + params.category_matrix.values[:, 0]
        tol = 1e-7 * np.abs(params.category_matrix.values).max()
        assert np.max(np.abs(out.values - expect)) <= tol

    def test_uniform_mixes_column_mean(self):
        params, _ = make_params()
        q = Tensor(np.zeros(8))
        c = Tensor(np.zeros(4))
        out = category_embed(q, c, params.category_matrix)
        assert np.allclose(out.values, params.category_matrix.values.mean(axis=1))

    def test_gradcheck(self):
        params, _ = make_params(seed=47)
        rng = Rng(47)
        q = Tensor(rng.uniform(-1, 1, (3, 8)), requires_grad=True)
        c = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        for t in (q, c, params.category_matrix.tensor):
            err = finite_diff_gradcheck(
                lambda _: nx.sum_axis(nx.tanh(category_embed(q, c, params.category_matrix))), t
            )
            assert err <= 1e-4


class TestSpatialPrior:
    def test_zero_mlp_centers_on_location(self):
        params, _ = make_params()
        layer = params.layers[0]
        zero_mlp(layer.spatial_mlp)
        prior = spatial_params(Tensor(np.ones(4)), (1.5, 2.5), layer.spatial_mlp, eps=1e-4)
        assert np.allclose(prior.mu.values, [1.5, 2.5])
        assert np.allclose(prior.theta.values, 1e-4 * np.eye(2))

    def test_theta_positive_definite_100_draws(self):
        params, _ = make_params(seed=8)
        layer = params.layers[0]
        for seed in range(100):
            h = Tensor(Rng(seed).uniform(-3, 3, (4,)))
            prior = spatial_params(h, (0.0, 0.0), layer.spatial_mlp, eps=1e-4)
            eigs = np.linalg.eigvalsh(prior.theta.values)
            assert eigs.min() >= 1e-4 - 1e-12

    def test_theta_exactly_symmetric(self):
        params, _ = make_params(seed=9)
        prior = spatial_params(
            Tensor(Rng(3).uniform(-1, 1, (4,))), (0.0, 0.0), params.layers[0].spatial_mlp
        )
        t = prior.theta.values
        assert np.max(np.abs(t - t.T)) == 0.0


class TestLogGaussianLike:
    def identity_prior(self, mu):
        from nestor.regressor import SpatialPrior

        return SpatialPrior(
            mu=Tensor(np.asarray(mu, dtype=float)),
            theta_raw=Tensor(np.zeros(3)),
            theta=Tensor(np.eye(2)),
        )

    def test_center_is_zero(self):
        assert log_gaussian_like(self.identity_prior((0, 0)), (0.0, 0.0)).values == 0.0

    def test_unit_quadratic(self):
        out = log_gaussian_like(self.identity_prior((0, 0)), (1.0, 1.0))
        assert np.allclose(out.values, -2.0)

    def test_monotone_decay(self):
        p = self.identity_prior((0, 0))
        assert log_gaussian_like(p, (2.0, 0.0)).values < log_gaussian_like(p, (1.0, 0.0)).values


class TestSmaHeads:
    def test_prior_off_matches_vanilla(self):
        params, _ = make_params(seed=10, eps=1e-12)
        layer = params.layers[0]
        zero_mlp(layer.spatial_mlp)  # delta-n = 0, theta_raw = 0 => prior ~ eps only
        rng = Rng(11)
        h = Tensor(rng.uniform(-1, 1, (4, 8)))
        n = Tensor(rng.uniform(0, 3, (4, 2)))
        _, a_mod, _, _ = sma_heads(h, n, layer, 2, params.epsilon, modulated=True)
        _, a_plain, _, _ = sma_heads(h, n, layer, 2, params.epsilon, modulated=False)
        assert np.max(np.abs(a_mod.values - a_plain.values)) <= 1e-6

    def test_single_token_attention_is_one(self):
        params, _ = make_params(seed=12)
        h = Tensor(Rng(13).uniform(-1, 1, (1, 8)))
        n = Tensor(np.zeros((1, 2)))
        _, alpha, _, _ = sma_heads(h, n, params.layers[0], 2, params.epsilon)
        assert np.allclose(alpha.values, 1.0)

    def test_rows_sum_to_one_and_gradcheck(self):
        params, registry = make_params(seed=53, layers=1)
        layer = params.layers[0]
        rng = Rng(53)
        h = Tensor(rng.uniform(-1, 1, (3, 8)), requires_grad=True)
        n = Tensor(rng.uniform(0, 2, (3, 2)), requires_grad=True)
        o, alpha, _, _ = sma_heads(h, n, layer, 2, params.epsilon)
        assert np.allclose(alpha.values.sum(axis=-1), 1.0, atol=1e-6)

        def loss():
            o2, a2, _, _ = sma_heads(h, n, layer, 2, params.epsilon)
            return nx.sum_axis(nx.tanh(o2)) + nx.sum_axis(a2 * a2)

        for t in [h, n, layer.w_q.tensor, layer.spatial_mlp.layers[0][0].tensor,
                  layer.spatial_mlp.layers[-1][1].tensor, layer.w_v.tensor]:
            err = finite_diff_gradcheck(lambda _: loss(), t)
            assert err <= 1e-4

    def test_indivisible_heads_rejected(self):
        params, _ = make_params()
        h = Tensor(np.zeros((2, 8)))
        n = Tensor(np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            sma_heads(h, n, params.layers[0], 3, params.epsilon)


class TestFuseHeadsLocation:
    def test_uniform_weights_average_centers(self):
        params, _ = make_params()
        layer = params.layers[0]
        zero_mlp(layer.fuse_mlp)
        o = Tensor(Rng(4).uniform(-1, 1, (2, 1, 4)))  # [M=2, L=1, dh]
        mu = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))  # [L=1, M=2, 2]
        out = fuse_heads_location(o, mu, layer.fuse_mlp)
        assert np.allclose(out.values, [[2.0, 3.0]])

    def test_single_head_passthrough(self):
        params, _ = make_params(heads=1)
        layer = params.layers[0]
        o = Tensor(Rng(5).uniform(-1, 1, (1, 3, 8)))
        mu = Tensor(Rng(6).uniform(0, 4, (3, 1, 2)))
        out = fuse_heads_location(o, mu, layer.fuse_mlp)
        assert np.allclose(out.values, mu.values[:, 0, :])

    def test_componentwise_hull(self):
        for seed in range(20):
            params, _ = make_params(seed=seed)
            layer = params.layers[0]
            o = Tensor(Rng(seed + 50).uniform(-2, 2, (2, 3, 4)))
            mu = Tensor(Rng(seed + 90).uniform(-1, 5, (3, 2, 2)))
            out = fuse_heads_location(o, mu, layer.fuse_mlp).values
            lo, hi = mu.values.min(axis=1), mu.values.max(axis=1)
            assert (out >= lo - 1e-9).all() and (out <= hi + 1e-9).all()

    def test_head_weight_rows_sum_to_one(self):
        params, _ = make_params(seed=33)
        layer = params.layers[0]
        o = Tensor(Rng(34).uniform(-2, 2, (2, 3, 4)))
        r = nx.swapaxes(nx.mlp_apply(o, layer.fuse_mlp), -3, -2)
        weights = nx.softmax_lastdim(nx.swapaxes(r, -1, -2)).values
        assert np.allclose(weights.sum(-1), 1.0, atol=1e-6)


class TestAggregateHeads:
    def test_zero_weights_leave_bias(self):
        params, _ = make_params()
        layer = params.layers[0]
        layer.out_w.values = np.zeros_like(layer.out_w.values)
        layer.out_b.values = np.arange(8.0)
        o = Tensor(Rng(7).uniform(-1, 1, (2, 3, 4)))
        out = aggregate_heads_query(o, layer.out_w, layer.out_b)
        assert np.allclose(out.values, np.tile(np.arange(8.0), (3, 1)))

    def test_single_head_is_affine(self):
        params, _ = make_params(heads=1)
        layer = params.layers[0]
        o = Tensor(Rng(8).uniform(-1, 1, (1, 3, 8)))
        out = aggregate_heads_query(o, layer.out_w, layer.out_b)
        expect = o.values[0] @ layer.out_w.values.T + layer.out_b.values
        assert np.allclose(out.values, expect)

    def test_gradcheck(self):
        params, _ = make_params(seed=59)
        layer = params.layers[0]
        o = Tensor(Rng(59).uniform(-1, 1, (2, 3, 4)), requires_grad=True)
        for t in (o, layer.out_w.tensor, layer.out_b.tensor):
            err = finite_diff_gradcheck(
                lambda _: nx.sum_axis(nx.tanh(aggregate_heads_query(o, layer.out_w, layer.out_b))),
                t,
            )
            assert err <= 1e-4


class TestGatedUpdate:
    def test_carry_gate_returns_hidden(self):
        params, _ = make_params(seed=14)
        gate = params.layers[0].gate
        gate.b_xz.values = np.full(8, 60.0)  # z ~ 1
        rng = Rng(15)
        h = Tensor(rng.uniform(-1, 1, (8,)))
        x = Tensor(rng.uniform(-1, 1, (8,)))
        out = gated_update(h, x, gate)
        assert np.max(np.abs(out.values - h.values)) <= 1e-6

    def test_overwrite_gate_returns_candidate(self):
        params, _ = make_params(seed=16)
        gate = params.layers[0].gate
        gate.b_xz.values = np.full(8, -60.0)  # z ~ 0
        gate.b_xr.values = np.full(8, 60.0)  # r ~ 1
        rng = Rng(17)
        h = Tensor(rng.uniform(-1, 1, (8,)))
        x = Tensor(rng.uniform(-1, 1, (8,)))
        out = gated_update(h, x, gate)
        cand = np.tanh(
            x.values @ gate.w_xn.values.T + gate.b_xn.values
            + (h.values @ gate.w_hn.values.T + gate.b_hn.values)
        )
        assert np.max(np.abs(out.values - cand)) <= 1e-6

    def test_output_between_candidate_and_hidden(self):
        from scipy.special import expit

        params, _ = make_params(seed=18)
        gate = params.layers[0].gate
        rng = Rng(19)
        h = Tensor(rng.uniform(-1, 1, (8,)))
        x = Tensor(rng.uniform(-1, 1, (8,)))
        out = gated_update(h, x, gate).values
        r = expit(x.values @ gate.w_xr.values.T + gate.b_xr.values
                  + h.values @ gate.w_hr.values.T + gate.b_hr.values)
        cand = np.tanh(x.values @ gate.w_xn.values.T + gate.b_xn.values
                       + r * (h.values @ gate.w_hn.values.T + gate.b_hn.values))
        lo = np.minimum(cand, h.values)
        hi = np.maximum(cand, h.values)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


class TestIterateLogits:
    def test_zero_mlp_identity(self):
        params, _ = make_params()
        layer = params.layers[0]
        zero_mlp(layer.logits_mlp)
        c = Tensor(Rng(20).uniform(-1, 1, (3, 4)))
        q = Tensor(Rng(21).uniform(-1, 1, (3, 8)))
        assert np.allclose(iterate_logits(q, c, layer.logits_mlp).values, c.values)

    def test_deltas_accumulate(self):
        params, _ = make_params(seed=22)
        l0, l1 = params.layers
        q = Tensor(Rng(23).uniform(-1, 1, (8,)))
        c0 = Tensor(np.zeros(4))
        c1 = iterate_logits(q, c0, l0.logits_mlp)
        c2 = iterate_logits(q, c1, l1.logits_mlp)
        d1 = nx.mlp_apply(q, l0.logits_mlp).values
        d2 = nx.mlp_apply(q, l1.logits_mlp).values
        assert np.allclose(c2.values, d1 + d2)

    def test_gradient_reaches_both_inputs(self):
        params, _ = make_params(seed=61)
        layer = params.layers[0]
        q = Tensor(Rng(61).uniform(-1, 1, (8,)), requires_grad=True)
        c = Tensor(Rng(62).uniform(-1, 1, (4,)), requires_grad=True)
        nx.sum_axis(iterate_logits(q, c, layer.logits_mlp)).backward()
        assert q.grad is not None and np.abs(q.grad).sum() > 0
        assert c.grad is not None and np.abs(c.grad).sum() > 0


class TestRegress:
    def test_zero_layers_pass_through(self):
        params, _ = make_params()
        Q, C, N = rand_state(24)
        q2, c2, n2, trace = regress(Q, C, N, params, n_layers=0)
        assert q2 is Q and c2 is C and n2 is N and trace == []

    def test_shapes_stable_across_layers(self):
        params, _ = make_params(seed=25, d=64, heads=4, layers=3, n_cats=4)
        Q, C, N = rand_state(26, L=5, d=64, n_cats=4)
        q2, c2, n2, trace = regress(Q, C, N, params)
        assert q2.shape == (5, 64) and c2.shape == (5, 4) and n2.shape == (5, 2)
        assert len(trace) == 3
        for state in trace:
            assert state.attention.shape == (4, 5, 5)
            assert np.allclose(state.attention.values.sum(-1), 1.0, atol=1e-6)

    def test_locations_stay_finite_through_ten_layers(self):
        params, _ = make_params(seed=27, layers=10)
        Q, C, N = rand_state(28, L=6)
        _, _, n2, trace = regress(Q, C, N, params)
        assert np.isfinite(n2.values).all()
        for st in trace:
            assert st.N.values.dtype == np.float64 and np.isfinite(st.N.values).all()

    def test_full_stack_gradcheck(self):
        params, registry = make_params(seed=67, d=4, heads=2, layers=2, n_cats=3, hidden=3)
        Q, C, N = rand_state(67, L=3, d=4, n_cats=3)
        coeff = Rng(68).uniform(-1, 1, (3, 4))

        def loss():
            q2, c2, n2, _ = regress(Q, C, N, params)
            return (
                nx.sum_axis(q2 * nx.constant(coeff))
                + nx.sum_axis(nx.tanh(c2))
                + nx.sum_axis(n2 * n2)
            )

        tensors = [Q, C, N] + [p.tensor for p in registry.values()]
        for t in tensors:
            err = finite_diff_gradcheck(lambda _: loss(), t)
            assert err <= 1e-4, f"gradient error {err}"

    def test_ablation_switches_type_check(self):
        params, _ = make_params(seed=29)
        Q, C, N = rand_state(30)
        for flag in ("spatial_modulation", "gated_update", "category_embedding",
                     "location_iteration", "logits_iteration"):
            flags = AblationFlags(**{flag: False})
            q2, c2, n2, _ = regress(Q, C, N, params, flags)
            assert q2.shape == Q.shape and c2.shape == C.shape and n2.shape == N.shape
        frozen = regress(Q, C, N, params, AblationFlags(location_iteration=False))[2]
        assert np.array_equal(frozen.values, N.values)
        same_c = regress(Q, C, N, params, AblationFlags(logits_iteration=False))[1]
        assert np.array_equal(same_c.values, C.values)
