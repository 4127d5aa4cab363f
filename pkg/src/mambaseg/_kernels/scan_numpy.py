"""Pure-numpy selective-scan kernels (fallback backend).

Same contracts as the compiled extension: a time-major loop over the
input-dependent linear recurrence

    h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * x_t
    y_t = <C_t, h_t> + D * x_t

with shapes x, delta: [B, L, D], A: [D, S], B_seq, C_seq: [B, L, S],
D_skip: [D]. The forward returns all hidden states so the backward pass
never re-runs the recurrence.
"""

from __future__ import annotations

import numpy as np


def scan_forward(x, delta, A, B_seq, C_seq, D_skip):
    """Returns (y [B,L,D], h_all [B,L,D,S])."""
    bsz, length, dim = x.shape
    n_state = A.shape[1]
    y = np.empty((bsz, length, dim), dtype=x.dtype)
    h_all = np.empty((bsz, length, dim, n_state), dtype=x.dtype)
    h = np.zeros((bsz, dim, n_state), dtype=x.dtype)
    for t in range(length):
        dt = delta[:, t, :, None]                      # [B, D, 1]
        a_bar = np.exp(dt * A[None])                   # [B, D, S]
        inject = dt * B_seq[:, t, None, :] * x[:, t, :, None]
        h = a_bar * h + inject
        h_all[:, t] = h
        y[:, t] = np.einsum("bds,bs->bd", h, C_seq[:, t]) + D_skip * x[:, t]
    return y, h_all


def scan_backward(gy, x, delta, A, B_seq, C_seq, D_skip, h_all):
    """Reverse pass; returns grads for (x, delta, A, B_seq, C_seq, D_skip)."""
    bsz, length, dim = x.shape
    n_state = A.shape[1]
    gx = np.empty_like(x)
    gdelta = np.empty_like(delta)
    gA = np.zeros_like(A)
    gB = np.empty_like(B_seq)
    gC = np.empty_like(C_seq)
    gD = np.zeros_like(D_skip)
    gh = np.zeros((bsz, dim, n_state), dtype=x.dtype)
    for t in range(length - 1, -1, -1):
        gyt = gy[:, t]                                 # [B, D]
        xt = x[:, t]
        dt = delta[:, t, :, None]                      # [B, D, 1]
        ht = h_all[:, t]
        h_prev = h_all[:, t - 1] if t > 0 else np.zeros_like(ht)
        a_bar = np.exp(dt * A[None])

        gC[:, t] = np.einsum("bd,bds->bs", gyt, ht)
        gD += np.einsum("bd,bd->d", gyt, xt)
        gh = gh + gyt[:, :, None] * C_seq[:, t, None, :]

        # state path: h_t = a_bar * h_{t-1} + dt * B_t * x_t
        gh_hprev = gh * h_prev
        gA += np.einsum("bds->ds", gh_hprev * dt * a_bar)
        gdelta[:, t] = np.einsum("bds,ds->bd", gh_hprev * a_bar, A) \
            + np.einsum("bds,bs->bd", gh, B_seq[:, t]) * xt
        gB[:, t] = np.einsum("bds,bd->bs", gh, delta[:, t] * xt)
        gx[:, t] = np.einsum("bds,bs->bd", gh, B_seq[:, t]) * delta[:, t] \
            + gyt * D_skip
        gh = gh * a_bar
    return gx, gdelta, gA, gB, gC, gD
