"""Selective state-space sequence layer.

The mixer follows the standard selective-SSM recipe: a widening input
projection producing a scan stream and a gate, a short depthwise causal
convolution, input-dependent (delta, B, C) via a low-rank projection, a
zero-order-hold discretized diagonal recurrence, and a narrowing output
projection. The recurrence itself runs in the compiled/fallback kernel as a
single tape node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeMismatch
from .nn import conv1d_causal, linear, silu, softplus
from .rng import Xoshiro256
from .tensor import DTYPES, ParamStore, Tensor, custom_op, split, transpose


@dataclass
class SSMConfig:
    d_model: int
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    dt_rank: int = 0  # 0 -> ceil(d_model / 16)

    def __post_init__(self):
        if min(self.d_model, self.d_state, self.expand, self.conv_width) < 1:
            raise ShapeMismatch("SSM dimensions must be positive")
        if self.dt_rank <= 0:
            self.dt_rank = max(1, math.ceil(self.d_model / 16))

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


@dataclass
class SSMParams:
    """One mixer's parameter set. A = -exp(a_log) stays strictly negative,
    so every discretized transition factor lies in (0, 1)."""

    cfg: SSMConfig
    w_in: Tensor        # [d_model, 2*d_inner] -> (stream, gate)
    w_conv: Tensor      # [d_inner, conv_width], depthwise causal
    w_x: Tensor         # [d_inner, dt_rank + 2*d_state]
    w_dt: Tensor        # [dt_rank, d_inner]
    b_dt: Tensor        # [d_inner]
    a_log: Tensor       # [d_inner, d_state]
    d_skip: Tensor      # [d_inner]
    w_out: Tensor       # [d_inner, d_model]


def init_ssm_params(cfg: SSMConfig, store: ParamStore, prefix: str,
                    rng: Xoshiro256, dtype: str = "f32",
                    out_scale: float = 1.0) -> SSMParams:
    """Deterministic initialization mirroring the reference selective-SSM
    design: per-state-index transition rates -1..-d_state, unit skip, and a
    dt bias placing softplus(dt) in roughly [1e-3, 1e-1]. ``out_scale``
    shrinks the output projection (residual-branch scaling)."""
    np_dtype = DTYPES[dtype]
    d_in, d_st, rank = cfg.d_inner, cfg.d_state, cfg.dt_rank

    def uniform_tensor(shape, bound):
        data = np.empty(shape, dtype=np.float64)
        rng.fill_uniform(data, -bound, bound)
        return Tensor(data.astype(np_dtype))

    w_in = store.add(f"{prefix}.w_in",
                     uniform_tensor((cfg.d_model, 2 * d_in), math.sqrt(1.0 / cfg.d_model)))
    w_conv = store.add(f"{prefix}.w_conv",
                       uniform_tensor((d_in, cfg.conv_width),
                                      math.sqrt(1.0 / cfg.conv_width)))
    w_x = store.add(f"{prefix}.w_x",
                    uniform_tensor((d_in, rank + 2 * d_st), math.sqrt(1.0 / d_in)))
    w_dt = store.add(f"{prefix}.w_dt",
                     uniform_tensor((rank, d_in), math.sqrt(1.0 / rank)))

    dt_floor, dt_ceil = 1e-3, 1e-1
    dt = np.empty(d_in, dtype=np.float64)
    rng.fill_uniform(dt, math.log(dt_floor), math.log(dt_ceil))
    dt = np.exp(dt)
    b_dt = store.add(f"{prefix}.b_dt",
                     Tensor((dt + np.log(-np.expm1(-dt))).astype(np_dtype)))

    a = np.tile(np.arange(1, d_st + 1, dtype=np.float64), (d_in, 1))
    a_log = store.add(f"{prefix}.a_log", Tensor(np.log(a).astype(np_dtype)))
    d_skip = store.add(f"{prefix}.d_skip", Tensor(np.ones(d_in, dtype=np_dtype)))
    w_out = store.add(f"{prefix}.w_out",
                      uniform_tensor((d_in, cfg.d_model), math.sqrt(1.0 / d_in)))
    if out_scale != 1.0:
        w_out.data *= w_out.data.dtype.type(out_scale)
    return SSMParams(cfg, w_in, w_conv, w_x, w_dt, b_dt, a_log, d_skip, w_out)


def discretize(delta: np.ndarray, a: np.ndarray, b_seq: np.ndarray):
    """Zero-order-hold transition factor and Euler input factor.

    delta: [B,L,D], a: [D,S], b_seq: [B,L,S]. Returns
    (a_bar [B,L,D,S], b_bar [B,L,D,S]) with a_bar = exp(delta*a) and
    b_bar = delta * b (the simplified input discretization).
    """
    a_bar = np.exp(delta[..., None] * a[None, None])
    b_bar = delta[..., None] * b_seq[:, :, None, :]
    return a_bar, b_bar


def selective_scan(x: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor,
                   c_seq: Tensor, d_skip: Tensor) -> Tensor:
    """Input-dependent linear recurrence over the token axis (tape node)."""
    bsz, length, dim = x.shape
    n_state = a.shape[1]
    if delta.shape != x.shape:
        raise ShapeMismatch(f"delta {delta.shape} vs x {x.shape}")
    if b_seq.shape != (bsz, length, n_state) or c_seq.shape != (bsz, length, n_state):
        raise ShapeMismatch(
            f"B/C sequences must be [B,L,{n_state}], got {b_seq.shape}/{c_seq.shape}")
    if a.shape[0] != dim or d_skip.shape != (dim,):
        raise ShapeMismatch(f"A {a.shape} / D {d_skip.shape} vs d_inner {dim}")

    y, h_all = _kernels.scan_forward(x.data, delta.data, a.data,
                                     b_seq.data, c_seq.data, d_skip.data)

    def vjp(g):
        return _kernels.scan_backward(np.ascontiguousarray(g), x.data, delta.data,
                                      a.data, b_seq.data, c_seq.data,
                                      d_skip.data, h_all)

    return custom_op(y, (x, delta, a, b_seq, c_seq, d_skip), vjp)


def neg_exp(a_log: Tensor) -> Tensor:
    """A = -exp(a_log) (stable parameterization of the transition rates)."""
    e = np.exp(a_log.data)
    return custom_op(-e, (a_log,), lambda g: (-g * e,))


def mamba_forward(x: Tensor, params: SSMParams) -> Tensor:
    """Full mixer on a [B, N, d_model] token sequence; shape preserved.

    Tokens are assumed to be the row-major raster scan of the feature grid;
    the scan runs once, unidirectionally, in that order.
    """
    cfg = params.cfg
    if x.shape[-1] != cfg.d_model:
        raise ShapeMismatch(f"mamba d_model {cfg.d_model} vs input {x.shape}")
    bsz, length, _ = x.shape

    xz = linear(x, params.w_in)                       # [B, N, 2*d_inner]
    stream, gate = split(xz, 2, 2)

    stream = transpose(stream, 1, 2)                  # [B, d_inner, N]
    stream = conv1d_causal(stream, params.w_conv)
    stream = transpose(stream, 1, 2)                  # [B, N, d_inner]
    stream = silu(stream)

    derived = linear(stream, params.w_x)              # [B, N, rank + 2*d_state]
    pieces = _split_sizes(derived, (cfg.dt_rank, cfg.d_state, cfg.d_state))
    dt_low, b_seq, c_seq = pieces
    delta = softplus(linear(dt_low, params.w_dt, params.b_dt))

    a = neg_exp(params.a_log)
    y = selective_scan(stream, delta, a, b_seq, c_seq, params.d_skip)
    y = y * silu(gate)
    return linear(y, params.w_out)


def _split_sizes(t: Tensor, sizes: tuple[int, ...]) -> list[Tensor]:
    """Split the trailing axis into chunks of the given (uneven) sizes."""
    offsets = np.cumsum((0,) + sizes)
    outs = []
    for i in range(len(sizes)):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        piece = np.ascontiguousarray(t.data[..., lo:hi])

        def vjp(g, _lo=lo, _hi=hi):
            full = np.zeros(t.shape, dtype=g.dtype)
            full[..., _lo:_hi] = g
            return (full,)

        outs.append(custom_op(piece, (t,), vjp))
    return outs
