"""Neural primitives: convolutions, norms, activations, pooling, resampling.

All ops are tape nodes with hand-written VJPs over the tensor engine.
Layout conventions: images are [B, C, H, W], token sequences [B, N, C],
causal sequences [B, D, L].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._resample import bilinear_axis
from .errors import DegenerateNorm, InvalidShape, InvalidSpec, ShapeMismatch
from .tensor import Tensor, custom_op


@dataclass
class ConvSpec:
    """2-D convolution geometry. Stride is fixed at 1; padding keeps the
    spatial size (k // 2 on each side)."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidSpec(f"2-D kernel must be odd and positive, got {self.kernel}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise InvalidSpec(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups {self.groups}")


@dataclass
class NormState:
    """Affine parameters plus (for batch norm) running statistics.

    ``scale``/``bias`` are trainable tensors registered in the ParamStore;
    running stats are plain buffers. ``mode`` switches batch norm between
    batch statistics ("train") and running statistics ("eval").
    """

    scale: Tensor
    bias: Tensor
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"
    update_running: bool = True


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           groups: int = 1) -> Tensor:
    """Stride-1 cross-correlation with same-size zero padding.

    weight: [C_out, C_in/groups, k, k].
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"conv2d input must be [B,C,H,W], got {x.shape}")
    bsz, c_in, height, width = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise InvalidSpec(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    if c_in % groups or c_out % groups or c_in // groups != c_in_g:
        raise ShapeMismatch(
            f"conv2d channels: input {c_in}, weight expects {c_in_g}*{groups}")
    pad = kh // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    xg = xp.reshape(bsz, groups, c_in // groups, height + 2 * pad, width + 2 * pad)
    wg = weight.data.reshape(groups, c_out // groups, c_in_g, kh, kw)

    y = np.zeros((bsz, groups, c_out // groups, height, width), dtype=x.data.dtype)
    for u in range(kh):
        for v in range(kw):
            y += np.einsum("bgihw,goi->bgohw",
                           xg[:, :, :, u:u + height, v:v + width], wg[:, :, :, u, v],
                           optimize=True)
    y = y.reshape(bsz, c_out, height, width)
    if bias is not None:
        y = y + bias.data.reshape(1, c_out, 1, 1)

    def vjp(g):
        gg = g.reshape(bsz, groups, c_out // groups, height, width)
        gxp = np.zeros_like(xg)
        gw = np.empty_like(wg)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, :, u:u + height, v:v + width] += np.einsum(
                    "bgohw,goi->bgihw", gg, wg[:, :, :, u, v], optimize=True)
                gw[:, :, :, u, v] = np.einsum(
                    "bgohw,bgihw->goi", gg, xg[:, :, :, u:u + height, v:v + width],
                    optimize=True)
        gx = gxp.reshape(bsz, c_in, height + 2 * pad, width + 2 * pad)
        gx = gx[:, :, pad:pad + height, pad:pad + width] if pad else gx
        grads = [np.ascontiguousarray(gx), gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return custom_op(y, parents, vjp)


def conv1d_causal(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise causal convolution on [B, D, L].

    weight: [D, W]; output position t sees inputs t-W+1 .. t (left zero
    padding), so the last tap multiplies the current element.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch(f"conv1d_causal input must be [B,D,L], got {x.shape}")
    bsz, dim, length = x.shape
    dim_w, width = weight.shape
    if width < 1:
        raise InvalidSpec(f"conv width must be >= 1, got {width}")
    if dim_w != dim:
        raise ShapeMismatch(f"conv1d_causal channels {dim} vs weight {dim_w}")
    pad = width - 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, 0)))
    y = np.zeros((bsz, dim, length), dtype=x.data.dtype)
    for u in range(width):
        y += weight.data[None, :, u:u + 1] * xp[:, :, u:u + length]
    if bias is not None:
        y = y + bias.data.reshape(1, dim, 1)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for u in range(width):
            gxp[:, :, u:u + length] += weight.data[None, :, u:u + 1] * g
            gw[:, u] = np.einsum("bdl,bdl->d", g, xp[:, :, u:u + length])
        grads = [np.ascontiguousarray(gxp[:, :, pad:]), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return custom_op(y, parents, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the trailing axis: y = x @ W + b, W: [d_in, d_out]."""
    d_in, d_out = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    y = x2 @ weight.data
    if bias is not None:
        y = y + bias.data
    y = y.reshape(*lead, d_out)

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return custom_op(y, parents, vjp)


# ---------------------------------------------------------------------------
# Normalizations
# ---------------------------------------------------------------------------

def _norm_core(xd: np.ndarray, axes, eps: float):
    mu = xd.mean(axis=axes, keepdims=True, dtype=xd.dtype)
    xc = xd - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True, dtype=xd.dtype)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    return xc * inv.astype(xd.dtype), inv.astype(xd.dtype)


def _norm_vjp(g, xhat, inv, scale_b, axes, n):
    gs = g * scale_b
    m1 = gs.mean(axis=axes, keepdims=True, dtype=g.dtype)
    m2 = (gs * xhat).mean(axis=axes, keepdims=True, dtype=g.dtype)
    return inv * (gs - m1 - xhat * m2)


def layer_norm(x: Tensor, state: NormState, channel_axis: int = -1) -> Tensor:
    """Zero-mean / unit-variance over the channel axis at every position,
    then affine. On [B,N,C] the channel axis is -1; on [B,C,H,W] it is 1."""
    axis = channel_axis % x.data.ndim
    n = x.shape[axis]
    if n == 1 and state.eps == 0:
        raise DegenerateNorm("layer_norm over a single channel with eps=0")
    if state.scale.size != n:
        raise ShapeMismatch(f"layer_norm affine size {state.scale.size} vs channels {n}")
    bshape = [1] * x.data.ndim
    bshape[axis] = n
    scale_b = state.scale.data.reshape(bshape)
    bias_b = state.bias.data.reshape(bshape)
    xhat, inv = _norm_core(x.data, axis, state.eps)
    y = xhat * scale_b + bias_b

    def vjp(g):
        gx = _norm_vjp(g, xhat, inv, scale_b, axis, n)
        reduce_axes = tuple(i for i in range(g.ndim) if i != axis)
        gscale = (g * xhat).sum(axis=reduce_axes)
        gbias = g.sum(axis=reduce_axes)
        return gx, gscale, gbias

    return custom_op(y, (x, state.scale, state.bias), vjp)


def batch_norm(x: Tensor, state: NormState, channel_axis: int = -1,
               update_running: bool | None = None) -> Tensor:
    """Batch normalization over all axes except the channel axis.

    Train mode normalizes with batch statistics and (optionally) updates the
    running buffers with momentum; eval mode uses the stored statistics.
    Fresh states carry (mean 0, var 1), so eval before any train step is the
    identity up to the affine.
    """
    axis = channel_axis % x.data.ndim
    n_ch = x.shape[axis]
    if state.scale.size != n_ch:
        raise ShapeMismatch(f"batch_norm affine size {state.scale.size} vs channels {n_ch}")
    axes = tuple(i for i in range(x.data.ndim) if i != axis)
    bshape = [1] * x.data.ndim
    bshape[axis] = n_ch
    scale_b = state.scale.data.reshape(bshape)
    bias_b = state.bias.data.reshape(bshape)

    if update_running is None:
        update_running = state.update_running
    if state.mode == "train":
        xhat, inv = _norm_core(x.data, axes, state.eps)
        if update_running:
            mu = x.data.mean(axis=axes, dtype=np.float64)
            var = x.data.var(axis=axes, dtype=np.float64)
            m = state.momentum
            state.running_mean *= (1.0 - m)
            state.running_mean += m * mu.astype(state.running_mean.dtype)
            state.running_var *= (1.0 - m)
            state.running_var += m * var.astype(state.running_var.dtype)
        y = xhat * scale_b + bias_b

        def vjp(g):
            gx = _norm_vjp(g, xhat, inv, scale_b, axes, None)
            gscale = (g * xhat).sum(axis=axes)
            gbias = g.sum(axis=axes)
            return gx, gscale, gbias

        return custom_op(y, (x, state.scale, state.bias), vjp)

    # eval: running stats are constants
    mu = state.running_mean.astype(x.data.dtype).reshape(bshape)
    inv = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.data.dtype)
    inv = inv.reshape(bshape)
    xhat = (x.data - mu) * inv
    y = xhat * scale_b + bias_b

    def vjp_eval(g):
        gx = g * scale_b * inv
        gscale = (g * xhat).sum(axis=axes)
        gbias = g.sum(axis=axes)
        return gx, gscale, gbias

    return custom_op(y, (x, state.scale, state.bias), vjp_eval)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(x.data > 0, x.data.dtype.type(1.0), x.data.dtype.type(slope))
    return custom_op(x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return custom_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    y = x.data * s
    return custom_op(y, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(x.data.dtype.type(0.0), x.data)
    s = _sigmoid_np(x.data)
    return custom_op(y.astype(x.data.dtype), (x,), lambda g: (g * s,))


def _sigmoid_np(xd: np.ndarray) -> np.ndarray:
    # Evaluated through exp of the non-positive branch only: overflow-free.
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# Pooling / resampling
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Gradient routes to the first occurrence of
    the window maximum in row-major window order."""
    bsz, ch, height, width = x.shape
    if height % 2 or width % 2:
        raise InvalidShape(f"maxpool2d needs even spatial extents, got {height}x{width}")
    h2, w2 = height // 2, width // 2
    win = x.data.reshape(bsz, ch, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(bsz, ch, h2, w2, 4)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(bsz, ch, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(gx).reshape(x.shape),)

    return custom_op(np.ascontiguousarray(y), (x,), vjp)


def bilinear_upsample(x: Tensor, scale: int = 2) -> Tensor:
    """Integer-factor bilinear upsampling with half-pixel centers."""
    if scale < 2:
        raise InvalidSpec(f"upsample scale must be >= 2, got {scale}")
    bsz, ch, height, width = x.shape
    oh, ow = height * scale, width * scale
    ilo, ihi, ifr = bilinear_axis(height, oh)
    jlo, jhi, jfr = bilinear_axis(width, ow)
    ifr = ifr.astype(x.data.dtype)[None, None, :, None]
    jfr = jfr.astype(x.data.dtype)[None, None, None, :]

    top = x.data[:, :, ilo, :]
    bot = x.data[:, :, ihi, :]
    y = ((top[:, :, :, jlo] * (1 - jfr) + top[:, :, :, jhi] * jfr) * (1 - ifr)
         + (bot[:, :, :, jlo] * (1 - jfr) + bot[:, :, :, jhi] * jfr) * ifr)

    def vjp(g):
        gx = np.zeros_like(x.data)
        rows = [(ilo, 1 - ifr), (ihi, ifr)]
        cols = [(jlo, 1 - jfr), (jhi, jfr)]
        for ridx, rw in rows:
            for cidx, cw in cols:
                contrib = g * rw * cw
                # scatter-add over both axes; np.add.at is deterministic
                tmp = np.zeros((bsz, ch, height, ow), dtype=g.dtype)
                np.add.at(tmp, (slice(None), slice(None), ridx), contrib)
                np.add.at(gx, (slice(None), slice(None), slice(None), cidx), tmp)
        return (gx,)

    return custom_op(np.ascontiguousarray(y), (x,), vjp)
