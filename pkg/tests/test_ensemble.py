"""Finite-width laboratory tests.

The exact Jacobian and NTK paths are validated against three independent
oracles: explicit dense-matrix composition (exact for linear networks),
dense central finite differences of the forward map (arbitrary networks,
including the normalization coupling terms), and parameter-by-parameter
finite differences of an independently written forward pass with explicit
gain/shift parameters.
"""

import math
import os

import numpy as np
import pytest

from jacprop.activations import Activation
from jacprop.ensemble import (
    EnsembleConfig,
    NetworkParams,
    _block,
    _block_tangent,
    _forward_cached,
    empirical_chi,
    empirical_ntk,
    forward,
    jacobian_profile,
    n0_correction_check,
    partial_jacobian_norm,
    resolve_input,
)
from jacprop.meanfield import Hyper, NormMode, trace

RELU = Activation.relu()
ERF = Activation.erf()
GELU = Activation.gelu()
LINEAR = Activation.scale_invariant(1.0, 1.0)

ALL_MODES = [NormMode.VANILLA, NormMode.PRE_LN, NormMode.POST_LN]


def mini_forward(ws, bs, gammas, betas, act, hp, norm, x, groups=1):
    """Independent reimplementation with explicit LN parameters."""
    z = np.asarray(x, dtype=float)
    L = len(ws)
    for l in range(L):
        n_in = ws[l].shape[1]
        h = (hp.sigma_w / math.sqrt(n_in)) * (ws[l] @ z) + hp.sigma_b * bs[l]
        if l == L - 1:
            return h
        if norm is NormMode.VANILLA:
            z = act(h)
        elif norm is NormMode.PRE_LN:
            m = h.size // groups
            hg = h.reshape(groups, m)
            y = (hg - hg.mean(1, keepdims=True)) / np.sqrt(
                hg.var(1, keepdims=True) + 1e-12
            )
            z = act(gammas[l] * y.reshape(-1) + betas[l])
        else:
            a = act(h)
            m = a.size // groups
            ag = a.reshape(groups, m)
            y = (ag - ag.mean(1, keepdims=True)) / np.sqrt(
                ag.var(1, keepdims=True) + 1e-12
            )
            z = gammas[l] * y.reshape(-1) + betas[l]


def dense_layer_maps(params, act, hp, norm, x, groups=1):
    """Explicit per-layer Jacobian matrices, built column by column."""
    dims = params.layer_dims
    _, caches = _forward_cached(params, act, hp, norm, x, groups)
    maps = []
    for m in range(params.depth):
        scale = hp.sigma_w / math.sqrt(dims[m])
        if m == 0:
            maps.append(scale * params.weights[0])
        else:
            B = _block_tangent(caches[m], norm, groups, np.eye(dims[m]))
            maps.append(scale * params.weights[m] @ B)
    return maps


class TestForward:
    def test_hand_computed_first_layer(self):
        params = NetworkParams.draw([1, 1], seed=0)
        hp = Hyper(1.0, 0.0)
        c = 3.3
        hs = forward(params, RELU, hp, NormMode.VANILLA, np.array([c]))
        assert hs[1][0] == pytest.approx(params.weights[0][0, 0] * c)

    def test_bias_scaling(self):
        params = NetworkParams.draw([2, 3], seed=1)
        hp = Hyper(0.0, 2.0)
        hs = forward(params, RELU, hp, NormMode.VANILLA, np.zeros(2))
        np.testing.assert_allclose(hs[1], 2.0 * params.biases[0])

    def test_post_ln_normalization_is_exact(self):
        params = NetworkParams.draw([16, 64, 64, 64], seed=3)
        hp = Hyper(1.3, 0.4)
        x = np.random.default_rng(0).normal(size=16)
        _, caches = _forward_cached(params, GELU, hp, NormMode.POST_LN, x)
        for cache in caches[1:]:
            assert abs(np.mean(cache.z)) <= 1e-12
            assert np.mean(cache.z**2) == pytest.approx(1.0, abs=1e-9)

    def test_matches_independent_reimplementation(self):
        params = NetworkParams.draw([5, 8, 8, 8], seed=7)
        hp = Hyper(1.1, 0.6)
        x = np.random.default_rng(1).normal(size=5)
        gam = [np.ones(8)] * 2
        bet = [np.zeros(8)] * 2
        for norm in ALL_MODES:
            for act in (RELU, ERF, GELU):
                got = forward(params, act, hp, norm, x)[3]
                ref = mini_forward(params.weights, params.biases, gam, bet,
                                   act, hp, norm, x)
                np.testing.assert_allclose(got, ref, rtol=1e-13)

    def test_empirical_kernel_tracks_theory(self):
        # per-draw kernels random-walk by ~sqrt(l/N) per layer, so the
        # comparison averages over an ensemble
        width, depth, n = 2048, 12, 8
        hp = Hyper(math.sqrt(2), 0.1)
        x = np.random.default_rng(2).normal(size=64)
        k1 = hp.sw2 * float(x @ x) / 64 + hp.sb2
        tr = trace(RELU, NormMode.VANILLA, hp, depth=depth, k0=k1, l0=0)
        emp = np.zeros(depth + 1)
        for i in range(n):
            params = NetworkParams.draw([64] + [width] * depth, seed=5, init_index=i)
            hs = forward(params, RELU, hp, NormMode.VANILLA, x)
            for l in range(1, depth + 1):
                emp[l] += float(np.mean(hs[l] ** 2)) / n
        for l in range(1, depth + 1):
            assert emp[l] == pytest.approx(tr.K[l], rel=0.12)

    def test_wrong_input_shape_rejected(self):
        params = NetworkParams.draw([4, 8], seed=0)
        with pytest.raises(ValueError):
            forward(params, RELU, Hyper(1, 0), NormMode.VANILLA, np.zeros(5))


class TestPartialJacobianNorm:
    def test_linear_network_dense_weight_oracle(self):
        dims = [8, 16, 12, 20, 10]
        params = NetworkParams.draw(dims, seed=3)
        hp = Hyper(0.9, 0.7)
        x = np.random.default_rng(4).normal(size=8)
        M = np.eye(8)
        for l in range(4):
            M = (hp.sigma_w / math.sqrt(dims[l])) * params.weights[l] @ M
        got = partial_jacobian_norm(params, LINEAR, hp, NormMode.VANILLA, x, 0, 4)
        assert got == pytest.approx(np.sum(M * M) / dims[4], rel=1e-12)

    def test_width_two_hand_chain_rule(self):
        dims = [2, 2, 2, 2]
        params = NetworkParams.draw(dims, seed=9)
        hp = Hyper(1.2, 0.3)
        x = np.array([0.4, -1.1])
        hs = forward(params, ERF, hp, NormMode.VANILLA, x)
        s = hp.sigma_w / math.sqrt(2)
        M1 = s * params.weights[1] @ np.diag(ERF(hs[1], 1))
        M2 = s * params.weights[2] @ np.diag(ERF(hs[2], 1))
        M = M2 @ M1
        got = partial_jacobian_norm(params, ERF, hp, NormMode.VANILLA, x, 1, 3)
        assert got == pytest.approx(np.sum(M * M) / 2, rel=1e-12)

    @pytest.mark.parametrize("norm", ALL_MODES)
    @pytest.mark.parametrize("groups", [1, 2])
    def test_dense_composition_oracle(self, norm, groups):
        dims = [12, 32, 32, 32, 32]
        params = NetworkParams.draw(dims, seed=13)
        hp = Hyper(1.4, 0.5)
        x = np.random.default_rng(5).normal(size=12)
        maps = dense_layer_maps(params, GELU, hp, norm, x, groups)
        M = maps[3] @ maps[2] @ maps[1]
        got = partial_jacobian_norm(params, GELU, hp, norm, x, 1, 4, groups=groups)
        assert got == pytest.approx(np.sum(M * M) / dims[4], rel=1e-10)

    @pytest.mark.parametrize("norm", [NormMode.PRE_LN, NormMode.POST_LN])
    def test_normalization_jacobian_against_finite_differences(self, norm):
        dims = [6, 12, 12, 12]
        params = NetworkParams.draw(dims, seed=11)
        hp = Hyper(1.3, 0.4)
        x = np.random.default_rng(6).normal(size=6)
        got = partial_jacobian_norm(params, GELU, hp, norm, x, 1, 3)

        hs, _ = _forward_cached(params, GELU, hp, norm, x)
        eps = 1e-6

        def tail(h1):
            z = None
            h = h1
            for m in (1, 2):
                cache = _block(GELU, norm, 1, h)
                z = cache.z
                scale = hp.sigma_w / math.sqrt(dims[m])
                h = scale * (params.weights[m] @ z) + hp.sigma_b * params.biases[m]
            return h

        J = np.zeros((dims[3], dims[1]))
        for i in range(dims[1]):
            e = np.zeros(dims[1])
            e[i] = eps
            J[:, i] = (tail(hs[1] + e) - tail(hs[1] - e)) / (2 * eps)
        assert got == pytest.approx(np.sum(J * J) / dims[3], rel=1e-6)

    def test_one_step_shortcut_equals_generic(self):
        dims = [6, 24, 24]
        params = NetworkParams.draw(dims, seed=2)
        hp = Hyper(1.1, 0.2)
        x = np.random.default_rng(7).normal(size=6)
        for norm in ALL_MODES:
            quick = partial_jacobian_norm(params, ERF, hp, norm, x, 1, 2)
            prof = partial_jacobian_norm(params, ERF, hp, norm, x, 1, 2, profile=True)
            # same quantity, different contraction order: ulp-level only
            assert quick == pytest.approx(prof[2], rel=1e-13)

    def test_single_layer_from_input_expectation(self):
        # J^{0,1} = sigma_w^2 |W|_F^2 / (N0 N1) -> sigma_w^2 in expectation
        vals = []
        for i in range(16):
            params = NetworkParams.draw([64, 64], seed=21, init_index=i)
            x = np.ones(64)
            vals.append(
                partial_jacobian_norm(params, RELU, Hyper(1.0, 0.0),
                                      NormMode.VANILLA, x, 0, 1)
            )
        mean = np.mean(vals)
        stderr = np.std(vals, ddof=1) / 4.0
        assert abs(mean - 1.0) < 4 * stderr + 0.01

    def test_layer_bounds_enforced(self):
        params = NetworkParams.draw([4, 8, 8], seed=0)
        hp = Hyper(1, 0)
        x = np.zeros(4)
        with pytest.raises(ValueError):
            partial_jacobian_norm(params, RELU, hp, NormMode.VANILLA, x, 1, 1)
        with pytest.raises(ValueError):
            partial_jacobian_norm(params, RELU, hp, NormMode.VANILLA, x, 0, 3)
        with pytest.raises(ValueError):
            partial_jacobian_norm(params, RELU, hp, NormMode.VANILLA, x, -1, 2)


class TestEmpiricalNtk:
    def test_depth_one_equals_first_kernel_per_draw(self):
        params = NetworkParams.draw([8, 32], seed=17)
        hp = Hyper(1.3, 0.7)
        x = np.random.default_rng(8).normal(size=8)
        theta = empirical_ntk(params, RELU, hp, NormMode.VANILLA, x)
        k1 = hp.sw2 * float(x @ x) / 8 + hp.sb2
        assert theta == pytest.approx(k1, rel=1e-12)

    @pytest.mark.parametrize("norm", ALL_MODES)
    def test_finite_difference_parameter_gradients(self, norm):
        dims = [3, 2, 2]
        params = NetworkParams.draw(dims, seed=5)
        hp = Hyper(1.1, 0.6)
        x = np.random.default_rng(9).normal(size=3)
        got = empirical_ntk(params, ERF, hp, norm, x)

        gam = [np.ones(2)]
        bet = [np.zeros(2)]
        eps = 1e-6
        total = 0.0
        packs = [("w", params.weights), ("b", params.biases)]
        if norm is not NormMode.VANILLA:
            packs += [("g", gam), ("e", bet)]
        for which, arrs in packs:
            for li, arr in enumerate(arrs):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index

                    def run(sign):
                        ws = [a.copy() for a in params.weights]
                        bs = [b.copy() for b in params.biases]
                        gs = [g.copy() for g in gam]
                        es = [e.copy() for e in bet]
                        {"w": ws, "b": bs, "g": gs, "e": es}[which][li][idx] += sign * eps
                        return mini_forward(ws, bs, gs, es, ERF, hp, norm, x)

                    g = (run(+1) - run(-1)) / (2 * eps)
                    total += float(np.sum(g * g))
        assert got == pytest.approx(total / dims[2], rel=1e-6)

    def test_mean_matches_theory_at_relu_criticality(self):
        hp = Hyper(math.sqrt(2), 0.0)
        depth, width, n0 = 10, 256, 64
        x = np.random.default_rng(10).normal(size=n0)
        k1 = hp.sw2 * float(x @ x) / n0
        tr = trace(RELU, NormMode.VANILLA, hp, depth=depth, k0=k1, l0=0)
        vals = [
            empirical_ntk(NetworkParams.draw([n0] + [width] * depth, 99, i),
                          RELU, hp, NormMode.VANILLA, x)
            for i in range(12)
        ]
        assert np.mean(vals) == pytest.approx(tr.theta[depth], rel=0.10)

    def test_size_guard(self):
        params = NetworkParams.draw([4, 512], seed=0)
        with pytest.raises(ValueError):
            empirical_ntk(params, RELU, Hyper(1, 0), NormMode.VANILLA, np.zeros(4))
        empirical_ntk(params, RELU, Hyper(1, 0), NormMode.VANILLA, np.zeros(4),
                      allow_large=True)


class TestEnsembleDrivers:
    def _cfg(self, **kw):
        base = dict(width=128, input_dim=32, depth=8, n_init=6, seed=123,
                    hyper=Hyper(math.sqrt(2), 0.1), act=RELU)
        base.update(kw)
        return EnsembleConfig(**base)

    def test_determinism_bit_identical(self):
        a = empirical_chi(self._cfg())
        b = empirical_chi(self._cfg())
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_determinism_across_worker_counts(self):
        a = empirical_chi(self._cfg())
        os.environ["JACPROP_WORKERS"] = "3"
        try:
            b = empirical_chi(self._cfg())
        finally:
            del os.environ["JACPROP_WORKERS"]
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_profile_contains_chi_estimate_layer(self):
        est = jacobian_profile(self._cfg(), l0=0)
        assert est.per_layer is not None
        assert np.isnan(est.per_layer[0])
        assert est.per_layer[8] == pytest.approx(est.mean)

    def test_shared_vs_resampled_inputs(self):
        shared = self._cfg()
        assert np.array_equal(resolve_input(shared, 0), resolve_input(shared, 5))
        fresh = self._cfg(resample_inputs=True)
        assert not np.array_equal(resolve_input(fresh, 0), resolve_input(fresh, 5))

    def test_input_file_roundtrip(self, tmp_path):
        x = np.arange(32, dtype="<f4") / 7.0
        path = tmp_path / "input.bin"
        x.tofile(path)
        cfg = self._cfg(input_source=("file", str(path)))
        np.testing.assert_allclose(resolve_input(cfg, 0), x.astype(float))

    def test_groupnorm_counts_agree_within_errors(self):
        ests = {}
        for g in (1, 2, 4):
            cfg = self._cfg(width=256, depth=16, n_init=8, norm=NormMode.PRE_LN,
                            hyper=Hyper(1.6, 0.4), groups=g)
            ests[g] = empirical_chi(cfg)
        for g in (2, 4):
            gap = abs(ests[g].mean - ests[1].mean)
            assert gap <= 3 * (ests[g].stderr + ests[1].stderr) + 5e-3

    def test_kernel_error_shrinks_with_width(self):
        hp = Hyper(1.0, 0.3)
        layer = 6
        errs = {}
        for width in (256, 1024, 4096):
            rel = []
            for i in range(4):
                params = NetworkParams.draw([32] + [width] * layer, 31, i)
                x = resolve_input(self._cfg(), 0)
                hs = forward(params, ERF, hp, NormMode.VANILLA, x)
                k1 = hp.sw2 * float(x @ x) / 32 + hp.sb2
                tr = trace(ERF, NormMode.VANILLA, hp, depth=layer, k0=k1, l0=0)
                rel.append(abs(np.mean(hs[layer] ** 2) - tr.K[layer]) / tr.K[layer])
            errs[width] = np.mean(rel)
        assert errs[4096] <= errs[256]

    def test_relu_pre_ln_closed_form_cell(self):
        # sigma_w = 3, sigma_b = 1: multiplier 9/11 from the pre-LN form
        cfg = self._cfg(width=400, depth=30, n_init=12, norm=NormMode.PRE_LN,
                        hyper=Hyper(3.0, 1.0), input_dim=100, seed=42)
        est = empirical_chi(cfg)
        assert abs(est.mean - 9 / 11) <= 3 * est.stderr

    def test_n0_correction_suppressed_at_large_input_dim(self):
        # at N0 = 4096 the corrected and uncorrected predictions agree
        # to better than 0.1%
        hp = Hyper(1.0, 0.0)
        tr = trace(ERF, NormMode.VANILLA, hp, depth=2, k0=1.0, l0=0)
        from jacprop.meanfield import j0_corrected

        corr = j0_corrected(ERF, hp, tr, n0=4096, input_norm=1.0, layer=2)
        assert abs(corr - tr.J[2]) / tr.J[2] <= 1e-3

    def test_n0_correction_identical_for_scale_invariant(self):
        cfg = self._cfg(act=RELU, input_dim=8, depth=2, n_init=3)
        rep = n0_correction_check(cfg)
        assert rep.corrected_pred == rep.uncorrected_pred

    def test_n0_correction_rejects_ln_modes(self):
        cfg = self._cfg(norm=NormMode.PRE_LN, depth=2)
        with pytest.raises(ValueError):
            n0_correction_check(cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            self._cfg(depth=1)
        with pytest.raises(ValueError):
            self._cfg(n_init=0)
        with pytest.raises(ValueError):
            self._cfg(groups=3)  # does not divide 128
