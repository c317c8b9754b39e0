"""Network layers on top of the autodiff tape.

conv2d / maxpool2d / batchnorm2d operate on batched [N, C, H, W]
arrays; the GRU and the fully connected helpers work on single
sequences (batching is a loop at the model level, sequences are short).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

BCE_EPS = 1e-7
BN_EPS = 1e-5


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x [*, F] @ weight [F, O] + bias [O]."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = T.matmul(x, weight)
    if bias is not None:
        out = T.add(out, bias)
    return out


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-size 3x3 cross-correlation, padding 1.

    x [N, C_in, H, W], kernels [C_out, C_in, 3, 3], bias [C_out].
    """
    n, c_in, h, w = x.shape
    c_out, c_k, kh, kw = kernels.shape
    if c_k != c_in:
        raise ValueError(f"conv2d: input channels {c_in} != kernel channels {c_k}")
    if (kh, kw) != (3, 3):
        raise ValueError("conv2d: only 3x3 kernels are supported")
    pad = 1
    # per-tap accumulation: one [C_out, C_in] contraction per kernel tap.
    # Nothing tap-sized is retained for backward (the padded input is
    # recomputed there from x.data), which keeps peak memory at a single
    # input-sized buffer instead of a 9x im2col matrix per layer.
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_data = np.zeros((n, c_out, h * w))
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(xp[:, :, i : i + h, j : j + w]).reshape(n, c_in, h * w)
            out_data += np.einsum("oc,ncp->nop", kernels.data[:, :, i, j], patch, optimize=True)
    del xp
    out_data += bias.data[None, :, None]
    out_data = out_data.reshape(n, c_out, h, w)

    def bwd(g):
        gm = g.reshape(n, c_out, h * w)
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=(0, 2)))
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if kernels.requires_grad else None
        gxp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad)) if x.requires_grad else None
        gw = np.zeros((c_out, c_in, kh, kw)) if kernels.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if kernels.requires_grad:
                    patch = np.ascontiguousarray(xp[:, :, i : i + h, j : j + w]).reshape(n, c_in, h * w)
                    gw[:, :, i, j] = np.einsum("nop,ncp->oc", gm, patch, optimize=True)
                if x.requires_grad:
                    gpatch = np.einsum("oc,nop->ncp", kernels.data[:, :, i, j], gm, optimize=True)
                    gxp[:, :, i : i + h, j : j + w] += gpatch.reshape(n, c_in, h, w)
        if kernels.requires_grad:
            kernels._accumulate(gw)
        if x.requires_grad:
            x._accumulate(gxp[:, :, pad : pad + h, pad : pad + w])

    return Tensor(out_data, _backward=bwd, _parents=(x, kernels, bias))


def maxpool2d(x: Tensor, kernel: tuple[int, int]) -> Tensor:
    """Non-overlapping max pooling, floor mode (trailing remainder dropped).

    Gradient routes to the first occurrence of the maximum in each window.
    """
    kh, kw = kernel
    if kh < 1 or kw < 1:
        raise ValueError("maxpool2d: kernel extents must be >= 1")
    n, c, h, w = x.shape
    ho, wo = h // kh, w // kw
    if ho == 0 or wo == 0:
        raise ValueError(f"maxpool2d: input {h}x{w} collapses to zero extent under {kernel}")
    xv = x.data[:, :, : ho * kh, : wo * kw]
    windows = xv.reshape(n, c, ho, kh, wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)
    arg = windows.argmax(axis=-1)  # first occurrence on ties
    out_data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        if x.requires_grad:
            gw = np.zeros((n, c, ho, wo, kh * kw))
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            gx = np.zeros_like(x.data)
            gx[:, :, : ho * kh, : wo * kw] = (
                gw.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kh, wo * kw)
            )
            x._accumulate(gx)

    return Tensor(out_data, _backward=bwd, _parents=(x,))


class BatchNormState:
    """Running statistics for one batchnorm layer (plain numpy, not on the tape)."""

    def __init__(self, channels, momentum=0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum

    def copy(self):
        out = BatchNormState(len(self.running_mean), self.momentum)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool, mask: np.ndarray | None = None) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    In training mode, statistics come from the batch; ``mask`` [N, W]
    restricts them to valid time columns of padded batches. Running
    statistics are updated in place. Eval mode normalises with the
    running statistics.
    """
    n, c, h, w = x.shape
    if n == 0:
        raise ValueError("batchnorm2d: empty batch")
    if training:
        if mask is None:
            cnt = n * h * w
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
        else:
            m = mask[:, None, None, :]  # [N, 1, 1, W]
            cnt = float(mask.sum() * h)
            if cnt == 0:
                raise ValueError("batchnorm2d: mask excludes every position")
            mu = (x.data * m).sum(axis=(0, 2, 3)) / cnt
            var = (m * (x.data - mu[None, :, None, None]) ** 2).sum(axis=(0, 2, 3)) / cnt
        state.running_mean += state.momentum * (mu - state.running_mean)
        state.running_var += state.momentum * (var - state.running_var)
    else:
        mu = state.running_mean
        var = state.running_var

    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if not training:
                x._accumulate(gxhat * inv[None, :, None, None])
                return
            m = 1.0 if mask is None else mask[:, None, None, :]
            xc = x.data - mu[None, :, None, None]
            inv4 = inv[None, :, None, None]
            dvar = (gxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv**3
            dmu = -(gxhat.sum(axis=(0, 2, 3)) * inv)
            if mask is None:
                dmu += dvar * (-2.0 / cnt) * xc.sum(axis=(0, 2, 3))
                gx = gxhat * inv4 + (2.0 / cnt) * dvar[None, :, None, None] * xc + dmu[None, :, None, None] / cnt
            else:
                dmu += dvar * (-2.0 / cnt) * (m * xc).sum(axis=(0, 2, 3))
                gx = (gxhat * inv4
                      + m * ((2.0 / cnt) * dvar[None, :, None, None] * xc + dmu[None, :, None, None] / cnt))
            x._accumulate(gx)

    return Tensor(out_data, _backward=bwd, _parents=(x, gamma, beta))


def init_gru_params(rng: np.random.Generator, input_size: int, hidden: int, prefix: str):
    """Uniform +-1/sqrt(fan_in) initialisation for one GRU layer."""
    params = {}
    for gate in ("z", "r", "n"):
        bw = 1.0 / np.sqrt(input_size)
        bu = 1.0 / np.sqrt(hidden)
        params[f"{prefix}.w_{gate}"] = Tensor(rng.uniform(-bw, bw, (input_size, hidden)), requires_grad=True)
        params[f"{prefix}.u_{gate}"] = Tensor(rng.uniform(-bu, bu, (hidden, hidden)), requires_grad=True)
        params[f"{prefix}.b_{gate}"] = Tensor(np.zeros(hidden), requires_grad=True)
    return params


def gru_forward(inputs: Tensor, params: dict, prefix: str, h0: Tensor | None = None):
    """Unidirectional GRU over inputs [T, F].

    Returns (sequence [T, H], final_hidden [1, H]). Gating:
    z = sig(xW_z + hU_z + b_z), r = sig(xW_r + hU_r + b_r),
    n = tanh(xW_n + U_n(r*h) + b_n), h' = (1-z)*n + z*h.
    """
    t_len = inputs.shape[0]
    if t_len == 0:
        raise ValueError("gru_forward: empty sequence")
    w_z, u_z, b_z = (params[f"{prefix}.{k}"] for k in ("w_z", "u_z", "b_z"))
    w_r, u_r, b_r = (params[f"{prefix}.{k}"] for k in ("w_r", "u_r", "b_r"))
    w_n, u_n, b_n = (params[f"{prefix}.{k}"] for k in ("w_n", "u_n", "b_n"))
    hidden = w_z.shape[1]
    h = h0 if h0 is not None else Tensor(np.zeros((1, hidden)))
    rows = []
    for t in range(t_len):
        x_t = inputs[t : t + 1]
        z = T.sigmoid(linear(x_t, w_z, b_z) + T.matmul(h, u_z))
        r = T.sigmoid(linear(x_t, w_r, b_r) + T.matmul(h, u_r))
        n = T.tanh(linear(x_t, w_n, b_n) + T.matmul(T.mul(r, h), u_n))
        h = T.add(T.mul(T.sub(Tensor(1.0), z), n), T.mul(z, h))
        rows.append(h)
    seq = T.concat(rows, axis=0)
    return seq, h


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over the leading (batch) axis of squared L2 norms."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    d = T.sub(pred, target)
    n = pred.shape[0]
    return T.mul(T.tsum(T.mul(d, d)), Tensor(1.0 / n))


def weighted_bce(pred: Tensor, label, weight=1.0) -> Tensor:
    """-mean(w * (y log p + (1-y) log(1-p))) with probabilities clamped."""
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    label = T._as_tensor(label)
    weight = T._as_tensor(weight)
    ll = T.add(T.mul(label, T.log(p)), T.mul(T.sub(Tensor(1.0), label), T.log(T.sub(Tensor(1.0), p))))
    return -T.tmean(T.mul(weight, ll))
