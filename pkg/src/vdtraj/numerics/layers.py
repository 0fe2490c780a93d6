"""Differentiable network primitives built on the tape in :mod:`.autograd`."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .autograd import Tensor, _emit, _emit1, _sigmoid, as_tensor, getitem, matmul, reshape, transpose


def leaky_relu(x, alpha: float = 0.1) -> Tensor:
    # slope at exactly zero is alpha
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    x = as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha)
    return _emit1(x.data * slope, (x,), lambda g: (g * slope,))


def softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    z = v.data - np.max(v.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit1(out, (v,), vjp)


def log_softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    z = v.data - np.max(v.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return _emit1(out, (v,), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` for row-batched ``x``."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


def _pad_amount(k: int, dilation: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding != "same":
        raise ValueError(f"unknown padding {padding!r}")
    if k % 2 == 0:
        raise DimensionError("'same' padding needs an odd kernel extent")
    p = (k - 1) * dilation // 2
    return p, p


def dilated_conv2d(x, kernels, dilation: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlate a (B,)H×W×Cin map with kh×kw×Cin×Cout kernels.

    Taps sit ``dilation`` cells apart.  With ``padding="same"`` the input is
    zero padded so the output keeps the H×W extent.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if dilation < 1 or int(dilation) != dilation:
        raise ValueError(f"dilation must be a positive int, got {dilation}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"expected (B,)H,W,Cin input and kh,kw,Cin,Cout kernels; got {x.shape}, {kernels.shape}")
    B, H, W, cin = xd.shape
    kh, kw, kcin, cout = kernels.shape
    if kcin != cin:
        raise DimensionError(f"kernel expects {kcin} input channels, input has {cin}")
    ph = _pad_amount(kh, dilation, padding)
    pw = _pad_amount(kw, dilation, padding)
    span_h = (kh - 1) * dilation + 1
    span_w = (kw - 1) * dilation + 1
    Hp, Wp = H + sum(ph), W + sum(pw)
    if span_h > Hp or span_w > Wp:
        raise DimensionError(f"dilated kernel span {span_h}x{span_w} exceeds padded input {Hp}x{Wp}")
    Ho, Wo = Hp - span_h + 1, Wp - span_w + 1

    xp = np.zeros((B, Hp, Wp, cin), dtype=xd.dtype)
    xp[:, ph[0]:ph[0] + H, pw[0]:pw[0] + W] = xd
    k = kernels.data
    out = np.zeros((B, Ho, Wo, cout), dtype=np.result_type(xd, k))
    for p in range(kh):
        for q in range(kw):
            r, s = p * dilation, q * dilation
            out += xp[:, r:r + Ho, s:s + Wo, :] @ k[p, q]

    def vjp(g):
        g = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(k)
        g2 = g.reshape(-1, cout)
        for p in range(kh):
            for q in range(kw):
                r, s = p * dilation, q * dilation
                patch = xp[:, r:r + Ho, s:s + Wo, :]
                gk[p, q] = patch.reshape(-1, cin).T @ g2
                gxp[:, r:r + Ho, s:s + Wo, :] += g @ k[p, q].T
        gx = gxp[:, ph[0]:ph[0] + H, pw[0]:pw[0] + W]
        return (gx[0] if squeeze else gx, gk)

    return _emit1(out[0] if squeeze else out, (x, kernels), vjp)


def lstm_step(x, h, c, weight, bias) -> tuple[Tensor, Tensor]:
    """One LSTM cell update.

    ``weight`` has shape (din + dh, 4·dh) acting on ``[x, h]``; gate blocks are
    ordered input, forget, candidate, output.  Inputs may be 1-D or row-batched.
    """
    x, h, c, weight, bias = (as_tensor(t) for t in (x, h, c, weight, bias))
    single = x.ndim == 1
    xd, hd, cd = (t.data[None] if single else t.data for t in (x, h, c))
    din, dh = xd.shape[1], hd.shape[1]
    if weight.shape != (din + dh, 4 * dh) or bias.shape != (4 * dh,) or cd.shape != hd.shape \
            or xd.shape[0] != hd.shape[0]:
        raise DimensionError(
            f"lstm_step shapes: x{x.shape} h{h.shape} c{c.shape} W{weight.shape} b{bias.shape}")
    xh = np.concatenate([xd, hd], axis=1)
    z = xh @ weight.data + bias.data
    i = _sigmoid(z[:, :dh])
    f = _sigmoid(z[:, dh:2 * dh])
    gg = np.tanh(z[:, 2 * dh:3 * dh])
    o = _sigmoid(z[:, 3 * dh:])
    c_new = f * cd + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def vjp(grads):
        gh, gc = grads
        if single:
            gh, gc = gh[None], gc[None]
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc_total * gg * i * (1.0 - i),
            gc_total * cd * f * (1.0 - f),
            gc_total * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        dxh = dz @ weight.data.T
        dx, dhp = dxh[:, :din], dxh[:, din:]
        dc = gc_total * f
        dw = xh.T @ dz
        db = dz.sum(axis=0)
        if single:
            dx, dhp, dc = dx[0], dhp[0], dc[0]
        return dx, dhp, dc, dw, db

    outs = (h_new[0], c_new[0]) if single else (h_new, c_new)
    h_out, c_out = _emit(outs, (x, h, c, weight, bias), vjp)
    return h_out, c_out


def lstm_recurrent_step(zx, h, c, w_h) -> tuple[Tensor, Tensor]:
    """LSTM update given the precomputed input part of the gates.

    ``zx`` = x·W_x + b (shape (N, 4·dh)); only the recurrent product h·W_h is
    formed here, so sequence runners can project every input step at once.
    """
    zx, h, c, w_h = (as_tensor(t) for t in (zx, h, c, w_h))
    dh = h.shape[1]
    if zx.shape != (h.shape[0], 4 * dh) or w_h.shape != (dh, 4 * dh) or c.shape != h.shape:
        raise DimensionError(f"lstm_recurrent_step shapes: zx{zx.shape} h{h.shape} c{c.shape} Wh{w_h.shape}")
    z = zx.data + h.data @ w_h.data
    i = _sigmoid(z[:, :dh])
    f = _sigmoid(z[:, dh:2 * dh])
    gg = np.tanh(z[:, 2 * dh:3 * dh])
    o = _sigmoid(z[:, 3 * dh:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def vjp(grads):
        gh, gc = grads
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc_total * gg * i * (1.0 - i),
            gc_total * c.data * f * (1.0 - f),
            gc_total * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        return dz, dz @ w_h.data.T, gc_total * f, h.data.T @ dz

    h_out, c_out = _emit((h_new, c_new), (zx, h, c, w_h), vjp)
    return h_out, c_out


def lstm_sequence(xs, weight, bias, h0=None, c0=None, steps: int | None = None):
    """Run an LSTM over (N, T, din) inputs, or over one constant (N, din) input for ``steps`` steps.

    Returns the list of hidden states and the final cell state.  Uses the same
    (din + dh, 4·dh) weight layout as :func:`lstm_step`.
    """
    xs, weight, bias = as_tensor(xs), as_tensor(weight), as_tensor(bias)
    dh = weight.shape[1] // 4
    din = weight.shape[0] - dh
    if xs.shape[-1] != din:
        raise DimensionError(f"LSTM expects {din} input features, got {xs.shape[-1]}")
    w_x = getitem(weight, slice(0, din))
    w_h = getitem(weight, slice(din, None))
    N = xs.shape[0]
    h = as_tensor(h0) if h0 is not None else Tensor(np.zeros((N, dh), dtype=weight.data.dtype))
    c = as_tensor(c0) if c0 is not None else Tensor(np.zeros((N, dh), dtype=weight.data.dtype))
    hs = []
    if xs.ndim == 2:
        if steps is None:
            raise ValueError("constant-input LSTM needs a step count")
        zx = matmul(xs, w_x) + bias
        for _ in range(steps):
            h, c = lstm_recurrent_step(zx, h, c, w_h)
            hs.append(h)
    else:
        T = xs.shape[1]
        zx_all = (matmul(reshape(xs, (N * T, din)), w_x) + bias)
        zx_all = transpose(reshape(zx_all, (N, T, 4 * dh)), (1, 0, 2))
        for t in range(T):
            h, c = lstm_recurrent_step(getitem(zx_all, t), h, c, w_h)
            hs.append(h)
    return hs, c
