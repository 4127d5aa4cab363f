"""Analytic-vs-numeric gradient verification suite.

Covers every differentiable primitive, the three composite blocks, the
losses, and the group loss, at desk sizes in f64. The numeric side is
central finite differences over parameter stores; it never touches the
tape, so the two routes stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .blocks import (conv_block_forward, init_conv_block, init_hybrid_block,
                     init_token_path, hybrid_block_forward, token_path_forward)
from .nn import NormState
from .objective import LossConfig, base_loss, bce, dice_loss, group_loss, squared_dice_loss
from .rng import Xoshiro256
from .ssm import SSMConfig, init_ssm_params, mamba_forward
from .tensor import ParamStore, Tensor, finite_diff, grads_for, make, tmean

DEFAULT_TOLERANCE = 1e-4
FD_EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    passed: bool


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    # Scale-floored relative error: f64 central differences cannot resolve
    # coordinates whose true gradient is below ~1e-6 (roundoff ~ |f|*eps_mach
    # / eps dominates there), so those compare against the floor instead.
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / scale))


def _run_check(name: str, store: ParamStore, f, tol: float) -> CheckResult:
    analytic = grads_for(f(), store)
    numeric = finite_diff(f, store, eps=FD_EPS)
    worst = max(_rel_err(analytic[k].data, numeric[k].data) for k in store.names())
    return CheckResult(name, worst, worst <= tol)


def _gauss(store: ParamStore, name: str, shape, seed: int,
           positive: bool = False) -> Tensor:
    t = make(shape, "gaussian", seed=seed, dtype="f64")
    if positive:
        t.data[:] = np.abs(t.data) + 0.1
    return store.add(name, t)


def _norm_state(store: ParamStore, prefix: str, channels: int,
                running: bool = False, mode: str = "train") -> NormState:
    scale = store.add(f"{prefix}.scale",
                      make([channels], "gaussian", seed=991, dtype="f64"))
    bias = store.add(f"{prefix}.bias",
                     make([channels], "gaussian", seed=992, dtype="f64"))
    rm = np.zeros(channels) if running else None
    rv = np.ones(channels) if running else None
    st = NormState(scale, bias, rm, rv, mode=mode)
    st.update_running = False
    return st


def run_all(seed: int = 3, tol: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    checks = []

    def add(name, builder):
        store, f = builder(seed)
        checks.append(_run_check(name, store, f, tol))

    add("conv2d", _build_conv2d)
    add("conv2d_depthwise", _build_conv2d_depthwise)
    add("conv1d_causal", _build_conv1d)
    add("linear", _build_linear)
    add("layer_norm_tokens", _build_ln_tokens)
    add("layer_norm_image", _build_ln_image)
    add("batch_norm_train", _build_bn)
    add("leaky_relu", _build_act(nn.leaky_relu))
    add("silu", _build_act(nn.silu))
    add("sigmoid", _build_act(nn.sigmoid))
    add("softplus", _build_act(nn.softplus))
    add("maxpool2d", _build_maxpool)
    add("bilinear_upsample", _build_upsample)
    add("mamba_layer", _build_mamba)
    add("conv_block", _build_conv_block)
    add("token_path", _build_token_path)
    add("hybrid_block_k1", _build_hybrid_block(1))
    add("hybrid_block_k2", _build_hybrid_block(2))
    add("bce", _build_loss(lambda p, y: bce(p, y)))
    add("dice_loss", _build_loss(dice_loss))
    add("squared_dice_loss", _build_loss(squared_dice_loss))
    add("base_loss", _build_loss(lambda p, y: base_loss(p, y)))
    add("group_loss", _build_group_loss)
    return checks


# --- builders: each returns (store, closure) -------------------------------

def _build_conv2d(seed):
    store = ParamStore()
    _gauss(store, "x", [1, 3, 6, 6], seed + 1)
    _gauss(store, "w", [4, 3, 3, 3], seed + 2)
    _gauss(store, "b", [4], seed + 3)
    return store, lambda: tmean(nn.silu(nn.conv2d(store["x"], store["w"], store["b"])))


def _build_conv2d_depthwise(seed):
    store = ParamStore()
    _gauss(store, "x", [1, 4, 5, 5], seed + 4)
    _gauss(store, "w", [4, 1, 3, 3], seed + 5)
    return store, lambda: tmean(nn.sigmoid(nn.conv2d(store["x"], store["w"], groups=4)))


def _build_conv1d(seed):
    store = ParamStore()
    _gauss(store, "x", [2, 3, 7], seed + 6)
    _gauss(store, "w", [3, 4], seed + 7)
    _gauss(store, "b", [3], seed + 8)
    return store, lambda: tmean(
        nn.silu(nn.conv1d_causal(store["x"], store["w"], store["b"])))


def _build_linear(seed):
    store = ParamStore()
    _gauss(store, "x", [2, 5, 4], seed + 9)
    _gauss(store, "w", [4, 6], seed + 10)
    _gauss(store, "b", [6], seed + 11)
    return store, lambda: tmean(nn.silu(nn.linear(store["x"], store["w"], store["b"])))


def _build_ln_tokens(seed):
    store = ParamStore()
    _gauss(store, "x", [2, 5, 6], seed + 12)
    st = _norm_state(store, "ln", 6)
    return store, lambda: tmean(nn.silu(nn.layer_norm(store["x"], st, channel_axis=-1)))


def _build_ln_image(seed):
    store = ParamStore()
    _gauss(store, "x", [1, 5, 4, 4], seed + 13)
    st = _norm_state(store, "ln", 5)
    return store, lambda: tmean(nn.silu(nn.layer_norm(store["x"], st, channel_axis=1)))


def _build_bn(seed):
    store = ParamStore()
    _gauss(store, "x", [2, 6, 5], seed + 14)
    st = _norm_state(store, "bn", 5, running=True, mode="train")
    return store, lambda: tmean(
        nn.silu(nn.batch_norm(store["x"], st, channel_axis=-1, update_running=False)))


def _build_act(fn):
    def build(seed):
        store = ParamStore()
        x = _gauss(store, "x", [3, 4, 5], seed + 15)
        # keep clear of the leaky-ReLU kink so finite differences stay valid
        x.data[np.abs(x.data) < 5e-3] = 0.1
        return store, lambda: tmean(fn(store["x"]) * store["x"])
    return build


def _build_maxpool(seed):
    store = ParamStore()
    x = _gauss(store, "x", [1, 3, 6, 6], seed + 16)
    # break ties decisively so the max selection is locally constant
    x.data += np.arange(x.size).reshape(x.shape) * 1e-3
    return store, lambda: tmean(nn.silu(nn.maxpool2d(store["x"])))


def _build_upsample(seed):
    store = ParamStore()
    _gauss(store, "x", [1, 2, 3, 3], seed + 17)
    return store, lambda: tmean(nn.silu(nn.bilinear_upsample(store["x"], 2)))


def _build_mamba(seed):
    store = ParamStore()
    cfg = SSMConfig(d_model=4, d_state=3, expand=2, conv_width=3)
    params = init_ssm_params(cfg, store, "m", Xoshiro256(seed, "init"), dtype="f64")
    _gauss(store, "x", [1, 6, 4], seed + 18)
    return store, lambda: tmean(mamba_forward(store["x"], params))


def _freeze_running(store: ParamStore, params) -> None:
    for st in _norm_states_of(params):
        st.update_running = False


def _norm_states_of(params):
    from .blocks import ConvBlockParams, HybridBlockParams, TokenPathParams
    if isinstance(params, ConvBlockParams):
        return [params.bn]
    if isinstance(params, TokenPathParams):
        return [params.ln_in, params.ln_mid, params.bn_tok, params.ln_out]
    if isinstance(params, HybridBlockParams):
        return _norm_states_of(params.token_path) + list(params.patch_norms)
    return []


def _build_conv_block(seed):
    store = ParamStore()
    params = init_conv_block(store, "cb", 3, 4, Xoshiro256(seed, "init"), "f64")
    _freeze_running(store, params)
    _gauss(store, "x", [1, 3, 4, 4], seed + 19)
    return store, lambda: tmean(conv_block_forward(store["x"], params))


def _build_token_path(seed):
    store = ParamStore()
    params = init_token_path(store, "tokenmix", 8, Xoshiro256(seed, "init"), "f64")
    _freeze_running(store, params)
    _gauss(store, "x", [1, 16, 8], seed + 20)
    return store, lambda: tmean(token_path_forward(store["x"], params, (4, 4)))


def _build_hybrid_block(k):
    def build(seed):
        store = ParamStore()
        params = init_hybrid_block(store, "blk", 8, k, Xoshiro256(seed, "init"), "f64",
                                d_state=4, expand=2, conv_width=3)
        _freeze_running(store, params)
        _gauss(store, "x", [1, 8, 4, 4], seed + 21)
        return store, lambda: tmean(hybrid_block_forward(store["x"], params))
    return build


def _build_loss(loss_fn):
    def build(seed):
        store = ParamStore()
        p = _gauss(store, "p", [2, 1, 4, 4], seed + 22)
        p.data[:] = 1.0 / (1.0 + np.exp(-p.data))          # probabilities
        rng = Xoshiro256(seed + 23, "mask")
        y = np.empty(p.shape)
        rng.fill_uniform(y)
        y = Tensor((y > 0.5).astype(np.float64))
        return store, lambda: loss_fn(store["p"], y)
    return build


def _build_group_loss(seed):
    def build_target(shape, s):
        rng = Xoshiro256(s, "mask")
        y = np.empty(shape)
        rng.fill_uniform(y)
        return (y > 0.5).astype(np.float64)

    store = ParamStore()
    sizes = [2, 4, 8, 8, 8]
    for i, side in enumerate(sizes):
        p = _gauss(store, f"stage{i}", [1, 1, side, side], seed + 30 + i)
        p.data[:] = 1.0 / (1.0 + np.exp(-p.data))
    out = _gauss(store, "out", [1, 1, 8, 8], seed + 40)
    out.data[:] = 1.0 / (1.0 + np.exp(-out.data))
    target = Tensor(build_target((1, 1, 8, 8), seed + 41))
    cfg = LossConfig()

    def f():
        stages = [store[f"stage{i}"] for i in range(5)]
        total, _ = group_loss(store["out"], stages, target, cfg)
        return total

    return store, f
