import numpy as np
import pytest

from mambaseg.blocks import (init_conv_block, init_hybrid_block, init_token_path,
                             conv_block_forward, hybrid_block_forward,
                             token_path_forward, token_path_hidden)
from mambaseg.errors import InvalidSplit, ShapeMismatch
from mambaseg.nn import layer_norm
from mambaseg.rng import Xoshiro256
from mambaseg.ssm import mamba_forward
from mambaseg.tensor import ParamStore, Tensor, make, split, tmean, transpose, reshape
from conftest import check_grads, gauss_param


def build_block(channels=8, k=2, seed=3, dtype="f64", freeze=True):
    store = ParamStore()
    params = init_hybrid_block(store, "blk", channels, k, Xoshiro256(seed, "init"),
                            dtype, d_state=4, expand=2, conv_width=3)
    if freeze:
        for st in [params.token_path.ln_in, params.token_path.ln_mid, params.token_path.bn_tok,
                   params.token_path.ln_out, *params.patch_norms]:
            st.update_running = False
    return store, params


class TestConvBlock:
    def test_output_channels(self):
        store = ParamStore()
        params = init_conv_block(store, "cb", 3, 8, Xoshiro256(0, "init"), "f32")
        x = make([1, 3, 64, 64], "gaussian", seed=1)
        assert conv_block_forward(x, params).shape == (1, 8, 64, 64)

    def test_near_identity_single_channel(self):
        # identity conv kernel, neutral batch norm: output is leaky(x)
        store = ParamStore()
        params = init_conv_block(store, "cb", 1, 1, Xoshiro256(0, "init"), "f64")
        params.weight.data[:] = 0.0
        params.weight.data[0, 0, 1, 1] = 1.0
        params.bias.data[:] = 0.0
        params.bn.mode = "eval"
        x = make([1, 1, 4, 4], "gaussian", seed=2, dtype="f64")
        out = conv_block_forward(x, params).data
        expect = np.where(x.data > 0, x.data, 0.01 * x.data)
        assert np.allclose(out, expect, atol=1e-4)

    def test_gradients(self):
        store = ParamStore()
        params = init_conv_block(store, "cb", 2, 3, Xoshiro256(5, "init"), "f64")
        params.bn.update_running = False
        gauss_param(store, "x", [1, 2, 4, 4], 6)
        check_grads(store, lambda: tmean(conv_block_forward(store["x"], params)))


class TestTokenPath:
    def test_hidden_width_rule(self):
        assert token_path_hidden(16) == 2
        assert token_path_hidden(64) == 8
        assert token_path_hidden(4) == 1

    def test_zero_final_conv_annihilates(self):
        store = ParamStore()
        params = init_token_path(store, "u", 16, Xoshiro256(1, "init"), "f64")
        params.wc3.data[:] = 0.0
        params.bc3.data[:] = 0.0
        x = make([2, 16, 16], "gaussian", seed=3, dtype="f64")
        out = token_path_forward(x, params, (4, 4))
        assert np.all(out.data == 0.0)

    def test_shape_law(self):
        store = ParamStore()
        params = init_token_path(store, "u", 16, Xoshiro256(1, "init"), "f64")
        for st in [params.ln_in, params.ln_mid, params.bn_tok, params.ln_out]:
            st.update_running = False
        x = make([2, 256, 16], "gaussian", seed=4, dtype="f64")
        assert token_path_forward(x, params, (16, 16)).shape == (2, 256, 16)

    def test_token_count_mismatch(self):
        store = ParamStore()
        params = init_token_path(store, "u", 8, Xoshiro256(1, "init"), "f64")
        with pytest.raises(ShapeMismatch):
            token_path_forward(make([1, 15, 8], "zero", dtype="f64"), params, (4, 4))

    def test_gradients(self):
        store, _ = build_block()
        store2 = ParamStore()
        params = init_token_path(store2, "u", 8, Xoshiro256(7, "init"), "f64")
        for st in [params.ln_in, params.ln_mid, params.bn_tok, params.ln_out]:
            st.update_running = False
        gauss_param(store2, "x", [1, 16, 8], 8)
        check_grads(store2, lambda: tmean(token_path_forward(store2["x"], params, (4, 4))))


class TestHybridBlock:
    def test_residual_identity_when_paths_zeroed(self):
        store, params = build_block(channels=8, k=2)
        params.token_path.wc3.data[:] = 0.0
        params.token_path.bc3.data[:] = 0.0
        for ssm in params.ssms:
            ssm.w_out.data[:] = 0.0
        x = make([2, 8, 4, 4], "gaussian", seed=9, dtype="f64")
        out = hybrid_block_forward(x, params)
        tokens = x.data.reshape(2, 8, 16).transpose(0, 2, 1)
        assert np.array_equal(out.data, tokens)

    def test_patch_widths(self):
        store, params = build_block(channels=16, k=2)
        assert [s.cfg.d_model for s in params.ssms] == [8, 8]
        x = make([1, 16, 4, 4], "gaussian", seed=10, dtype="f64")
        assert hybrid_block_forward(x, params).shape == (1, 16, 16)

    def test_output_shape_independent_of_k(self):
        for k in (1, 2, 4):
            store, params = build_block(channels=8, k=k)
            x = make([2, 8, 4, 4], "gaussian", seed=11, dtype="f64")
            assert hybrid_block_forward(x, params).shape == (2, 16, 8)

    def test_indivisible_patches(self):
        store = ParamStore()
        with pytest.raises(InvalidSplit):
            init_hybrid_block(store, "b", 6, 4, Xoshiro256(0, "init"), "f64")

    def test_patch_independence(self):
        # the SSM path transforms patch j only through its own mixer
        store, params = build_block(channels=8, k=2)
        x = make([1, 16, 8], "gaussian", seed=12, dtype="f64")

        def ssm_path(tokens):
            patches = split(tokens, 2, 2)
            outs = [mamba_forward(layer_norm(p, params.patch_norms[j],
                                             channel_axis=-1), params.ssms[j])
                    for j, p in enumerate(patches)]
            return [o.data for o in outs]

        base = ssm_path(x)
        pert = Tensor(x.data.copy())
        pert.data[:, :, 4:] += 0.5                      # perturb patch 1 only
        out = ssm_path(pert)
        assert np.array_equal(out[0], base[0])          # patch 0 untouched
        assert not np.array_equal(out[1], base[1])

    def test_gradients_k1_k2(self):
        for k in (1, 2):
            store, params = build_block(channels=8, k=k, seed=13 + k)
            gauss_param(store, "x", [1, 8, 4, 4], 20 + k)
            check_grads(store, lambda: tmean(hybrid_block_forward(store["x"], params)))

    def test_param_count_decreases_with_k(self):
        counts = []
        for k in (1, 2, 4, 8):
            store = ParamStore()
            init_hybrid_block(store, "b", 16, k, Xoshiro256(0, "init"), "f32")
            counts.append(sum(t.size for _, t in store.items()))
        assert counts[0] > counts[1] > counts[2] > counts[3]

    def test_baseline_has_no_ssm_path(self):
        store, params = build_block(channels=8, k=0)
        assert params.ssms == []
        x = make([1, 8, 4, 4], "gaussian", seed=14, dtype="f64")
        assert hybrid_block_forward(x, params).shape == (1, 16, 8)
