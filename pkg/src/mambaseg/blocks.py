"""Composite blocks: the full-resolution convolution block, the token-mixing
CNN/MLP path, and the hybrid block combining both with a channel-patched
selective-SSM path and an identity residual.

The token path runs at a reduced hidden width (channels // 8, floor 1);
full-width C->C layers would overshoot the family's parameter budget by
more than a third.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSplit, ShapeMismatch
from .nn import NormState, batch_norm, conv2d, layer_norm, leaky_relu, linear
from .rng import Xoshiro256
from .ssm import SSMConfig, SSMParams, init_ssm_params, mamba_forward
from .tensor import DTYPES, ParamStore, Tensor, concat, reshape, split, transpose

LEAKY_SLOPE = 0.01


def token_path_hidden(channels: int) -> int:
    return max(channels // 8, 1)


# ---------------------------------------------------------------------------
# Initialization helpers (shared with the network assembler)
# ---------------------------------------------------------------------------

def kaiming_uniform(shape, fan_in: int, rng: Xoshiro256, dtype: str,
                    gain: float | None = None) -> Tensor:
    """Kaiming-uniform draw. Default gain suits a following leaky ReLU;
    variance-preserving layers (1x1 channel mixers, heads) pass gain=1."""
    if gain is None:
        gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE))
    bound = gain * math.sqrt(3.0 / fan_in)
    data = np.empty(shape, dtype=np.float64)
    rng.fill_uniform(data, -bound, bound)
    return Tensor(data.astype(DTYPES[dtype]))


def bias_uniform(size: int, fan_in: int, rng: Xoshiro256, dtype: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    data = np.empty(size, dtype=np.float64)
    rng.fill_uniform(data, -bound, bound)
    return Tensor(data.astype(DTYPES[dtype]))


def make_norm(store: ParamStore, prefix: str, channels: int, dtype: str,
              running: bool, eps: float = 1e-5, momentum: float = 0.1) -> NormState:
    np_dtype = DTYPES[dtype]
    scale = store.add(f"{prefix}.scale",
                      Tensor(np.ones(channels, dtype=np_dtype)), no_decay=True)
    bias = store.add(f"{prefix}.bias",
                     Tensor(np.zeros(channels, dtype=np_dtype)), no_decay=True)
    rmean = rvar = None
    if running:
        rmean = store.add_buffer(f"{prefix}.running_mean",
                                 np.zeros(channels, dtype=np.float64))
        rvar = store.add_buffer(f"{prefix}.running_var",
                                np.ones(channels, dtype=np.float64))
    return NormState(scale, bias, rmean, rvar, momentum=momentum, eps=eps)


def make_conv(store: ParamStore, prefix: str, c_in: int, c_out: int, kernel: int,
              rng: Xoshiro256, dtype: str, gain: float | None = None,
              scale: float = 1.0) -> tuple[Tensor, Tensor]:
    fan_in = c_in * kernel * kernel
    w = store.add(f"{prefix}.weight",
                  kaiming_uniform((c_out, c_in, kernel, kernel), fan_in, rng, dtype,
                                  gain=gain))
    b = store.add(f"{prefix}.bias", bias_uniform(c_out, fan_in, rng, dtype))
    if scale != 1.0:
        w.data *= w.data.dtype.type(scale)
        b.data *= b.data.dtype.type(scale)
    return w, b


def make_linear(store: ParamStore, prefix: str, d_in: int, d_out: int,
                rng: Xoshiro256, dtype: str, gain: float | None = None
                ) -> tuple[Tensor, Tensor]:
    w = store.add(f"{prefix}.weight",
                  kaiming_uniform((d_in, d_out), d_in, rng, dtype, gain=gain))
    b = store.add(f"{prefix}.bias", bias_uniform(d_out, d_in, rng, dtype))
    return w, b


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class ConvBlockParams:
    weight: Tensor
    bias: Tensor
    bn: NormState


@dataclass
class TokenPathParams:
    channels: int
    hidden: int
    ln_in: NormState
    w1: Tensor
    b1: Tensor
    ln_mid: NormState
    wc1: Tensor
    bc1: Tensor
    wc2: Tensor
    bc2: Tensor
    bn_tok: NormState
    w2: Tensor
    b2: Tensor
    ln_out: NormState
    wc3: Tensor
    bc3: Tensor


@dataclass
class HybridBlockParams:
    channels: int
    patch_count: int
    token_path: TokenPathParams
    ssms: list[SSMParams]
    patch_norms: list[NormState]

    def __post_init__(self):
        if self.patch_count >= 1 and self.channels % self.patch_count:
            raise InvalidSplit(
                f"channels {self.channels} not divisible by patch count {self.patch_count}")


def init_conv_block(store: ParamStore, prefix: str, c_in: int, c_out: int,
                    rng: Xoshiro256, dtype: str) -> ConvBlockParams:
    w, b = make_conv(store, f"{prefix}.conv", c_in, c_out, 3, rng, dtype)
    bn = make_norm(store, f"{prefix}.bn", c_out, dtype, running=True)
    return ConvBlockParams(w, b, bn)


def init_token_path(store: ParamStore, prefix: str, channels: int,
                    rng: Xoshiro256, dtype: str,
                    out_scale: float = 1.0) -> TokenPathParams:
    hidden = token_path_hidden(channels)
    ln_in = make_norm(store, f"{prefix}.ln_in", channels, dtype, running=False)
    w1, b1 = make_linear(store, f"{prefix}.lin1", channels, hidden, rng, dtype,
                         gain=1.0)
    ln_mid = make_norm(store, f"{prefix}.ln_mid", hidden, dtype, running=False)
    wc1, bc1 = make_conv(store, f"{prefix}.conv1", hidden, hidden, 1, rng, dtype,
                         gain=1.0)
    wc2, bc2 = make_conv(store, f"{prefix}.conv2", hidden, hidden, 1, rng, dtype)
    bn_tok = make_norm(store, f"{prefix}.bn", hidden, dtype, running=True)
    w2, b2 = make_linear(store, f"{prefix}.lin2", hidden, hidden, rng, dtype,
                         gain=1.0)
    ln_out = make_norm(store, f"{prefix}.ln_out", hidden, dtype, running=False)
    wc3, bc3 = make_conv(store, f"{prefix}.conv3", hidden, channels, 1, rng, dtype,
                         gain=1.0, scale=out_scale)
    return TokenPathParams(channels, hidden, ln_in, w1, b1, ln_mid, wc1, bc1,
                           wc2, bc2, bn_tok, w2, b2, ln_out, wc3, bc3)


def init_hybrid_block(store: ParamStore, prefix: str, channels: int,
                      patch_count: int, rng: Xoshiro256, dtype: str,
                      d_state: int = 16, expand: int = 2, conv_width: int = 4,
                      out_scale: float = 1.0) -> HybridBlockParams:
    token_path = init_token_path(store, f"{prefix}.tokenmix", channels, rng,
                                 dtype, out_scale)
    ssms = []
    patch_norms = []
    if patch_count >= 1:
        cfg = SSMConfig(d_model=channels // patch_count, d_state=d_state,
                        expand=expand, conv_width=conv_width)
        for j in range(patch_count):
            # normalize each patch before its mixer: the scan's response is
            # superlinear in input scale, and the residual stream is not
            # otherwise scale-controlled
            patch_norms.append(make_norm(store, f"{prefix}.ssm{j}.ln",
                                         cfg.d_model, dtype, running=False))
            ssms.append(init_ssm_params(cfg, store, f"{prefix}.ssm{j}", rng, dtype,
                                        out_scale=out_scale))
    return HybridBlockParams(channels, patch_count, token_path, ssms, patch_norms)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def conv_block_forward(x: Tensor, params: ConvBlockParams) -> Tensor:
    """3x3 same-padding conv -> 2-D batch norm -> leaky ReLU (stage 1)."""
    h = conv2d(x, params.weight, params.bias)
    h = batch_norm(h, params.bn, channel_axis=1)
    return leaky_relu(h, LEAKY_SLOPE)


def token_path_forward(x: Tensor, params: TokenPathParams, hw: tuple[int, int]) -> Tensor:
    """Token path on [B, N, C]; alternates channel-mixing in token layout and
    1x1 convolutions in image layout, each mix behind its own normalization."""
    bsz, n_tok, channels = x.shape
    height, width = hw
    if n_tok != height * width:
        raise ShapeMismatch(f"token count {n_tok} != {height}x{width}")
    if channels != params.channels:
        raise ShapeMismatch(f"channels {channels} vs params {params.channels}")
    hid = params.hidden

    h = linear(layer_norm(x, params.ln_in, channel_axis=-1), params.w1, params.b1)
    h = reshape(transpose(h, 1, 2), (bsz, hid, height, width))
    h = conv2d(layer_norm(h, params.ln_mid, channel_axis=1), params.wc1, params.bc1)
    h = conv2d(leaky_relu(h, LEAKY_SLOPE), params.wc2, params.bc2)
    h = transpose(reshape(h, (bsz, hid, n_tok)), 1, 2)
    h = linear(batch_norm(h, params.bn_tok, channel_axis=-1), params.w2, params.b2)
    h = reshape(transpose(h, 1, 2), (bsz, hid, height, width))
    h = conv2d(layer_norm(h, params.ln_out, channel_axis=1), params.wc3, params.bc3)
    return transpose(reshape(h, (bsz, channels, n_tok)), 1, 2)


def hybrid_block_forward(x: Tensor, params: HybridBlockParams) -> Tensor:
    """Hybrid block: flatten [B,C,H,W] to tokens, then sum the token path,
    the identity residual, and the channel-patched SSM path (patch j is
    processed by mixer instance j). Output is [B, H*W, C]."""
    bsz, channels, height, width = x.shape
    if channels != params.channels:
        raise ShapeMismatch(f"channels {channels} vs params {params.channels}")
    tokens = transpose(reshape(x, (bsz, channels, height * width)), 1, 2)

    mix_out = token_path_forward(tokens, params.token_path, (height, width))

    if params.patch_count >= 1:
        patches = split(tokens, 2, params.patch_count)
        mixed = [mamba_forward(layer_norm(p, params.patch_norms[j], channel_axis=-1),
                               params.ssms[j])
                 for j, p in enumerate(patches)]
        mamba_out = concat(mixed, 2) if len(mixed) > 1 else mixed[0]
        return mix_out + tokens + mamba_out
    return mix_out + tokens
