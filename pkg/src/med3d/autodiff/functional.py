"""Differentiable ops over N x C x D x H x W feature maps.

Convolution is cross-correlation with zero padding and no bias term; the
dense direct sum is evaluated through strided window views contracted by
one tensordot (a blocked formulation of the naive seven-loop sum, which the
test oracles spell out explicitly).  Upsampling is align-corners-false,
matching the volume resampler's half-voxel-centre convention.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, TargetOutOfRange
from .tensor import Tensor, make_op


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ValueError(f"expected 3 values, got {v}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def _conv_out_extent(n: int, k: int, s: int, p: int, r: int) -> int:
    return (n + 2 * p - r * (k - 1) - 1) // s + 1


def _pad_spatial(x: np.ndarray, pad: tuple[int, int, int], value=0.0) -> np.ndarray:
    pd, ph, pw = pad
    if pd == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)),
                  constant_values=value)


def _windows(xp: np.ndarray, kernel, stride, dilation, out_sp) -> np.ndarray:
    """Read-only view (N, C, kd, kh, kw, Do, Ho, Wo) over a padded map."""
    n, c = xp.shape[:2]
    sn, sc, sd, sh, sw = xp.strides
    kd, kh, kw = kernel
    rd, rh, rw = dilation
    st_d, st_h, st_w = stride
    shape = (n, c, kd, kh, kw) + tuple(out_sp)
    strides = (sn, sc, sd * rd, sh * rh, sw * rw,
               sd * st_d, sh * st_h, sw * st_w)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv3d(x: Tensor, weight: Tensor, stride=1, padding=0, dilation=1) -> Tensor:
    """3D cross-correlation. x: (N,Cin,D,H,W), weight: (Cout,Cin,kd,kh,kw)."""
    st, pad, dil = _triple(stride), _triple(padding), _triple(dilation)
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise ShapeMismatch("conv3d needs 5D input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(
            f"input channels {x.shape[1]} != weight Cin {weight.shape[1]}")
    kernel = weight.shape[2:]
    out_sp = tuple(_conv_out_extent(n, k, s, p, r)
                   for n, k, s, p, r in zip(x.shape[2:], kernel, st, pad, dil))
    if any(o < 1 for o in out_sp):
        raise ShapeMismatch(
            f"no kernel placement: input {x.shape[2:]}, kernel {kernel}, "
            f"stride {st}, padding {pad}, dilation {dil}")

    xp = _pad_spatial(x.data, pad)
    win = _windows(xp, kernel, st, dil, out_sp)
    out = np.tensordot(win, weight.data, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def bwd(g: np.ndarray):
        gx = gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 5, 6, 7]))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            gm = np.moveaxis(g, 1, -1)  # (N, Do, Ho, Wo, Cout)
            kd, kh, kw = kernel
            do, ho, wo = out_sp
            for a in range(kd):
                for b in range(kh):
                    for c in range(kw):
                        contrib = gm @ weight.data[:, :, a, b, c]
                        gxp[:, :,
                            a * dil[0]: a * dil[0] + (do - 1) * st[0] + 1: st[0],
                            b * dil[1]: b * dil[1] + (ho - 1) * st[1] + 1: st[1],
                            c * dil[2]: c * dil[2] + (wo - 1) * st[2] + 1: st[2],
                            ] += np.moveaxis(contrib, -1, 1)
            pd, ph, pw = pad
            gx = gxp[:, :, pd: xp.shape[2] - pd, ph: xp.shape[3] - ph,
                     pw: xp.shape[4] - pw]
        return gx, gw

    return make_op(out, (x, weight), bwd)


def conv_transpose3d(x: Tensor, weight: Tensor, stride=1, padding=0,
                     output_padding=0) -> Tensor:
    """Transposed 3D convolution (the adjoint of conv3d's input map).

    x: (N,Cin,D,H,W), weight: (Cin,Cout,kd,kh,kw); output extent per axis
    is (D-1)*stride - 2*padding + k + output_padding.
    """
    st, pad, opad = _triple(stride), _triple(padding), _triple(output_padding)
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise ShapeMismatch("conv_transpose3d needs 5D input and weight")
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(
            f"input channels {x.shape[1]} != weight Cin {weight.shape[0]}")
    if any(o >= s for o, s in zip(opad, st)):
        raise ShapeMismatch("output_padding must be smaller than stride")
    kernel = weight.shape[2:]
    in_sp = x.shape[2:]
    canvas_sp = tuple((n - 1) * s + k + o
                      for n, k, s, o in zip(in_sp, kernel, st, opad))
    out_sp = tuple(c - 2 * p for c, p in zip(canvas_sp, pad))
    if any(o < 1 for o in out_sp):
        raise ShapeMismatch(f"padding {pad} swallows the whole output {canvas_sp}")

    n = x.shape[0]
    cout = weight.shape[1]
    canvas = np.zeros((n, cout) + canvas_sp, dtype=x.dtype)
    xm = np.moveaxis(x.data, 1, -1)  # (N, D, H, W, Cin)
    kd, kh, kw = kernel
    d, h, w = in_sp
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                contrib = xm @ weight.data[:, :, a, b, c]
                canvas[:, :,
                       a: a + (d - 1) * st[0] + 1: st[0],
                       b: b + (h - 1) * st[1] + 1: st[1],
                       c: c + (w - 1) * st[2] + 1: st[2],
                       ] += np.moveaxis(contrib, -1, 1)
    pd, ph, pw = pad
    out = canvas[:, :, pd: canvas_sp[0] - pd, ph: canvas_sp[1] - ph,
                 pw: canvas_sp[2] - pw]
    out = np.ascontiguousarray(out)

    def bwd(g: np.ndarray):
        gcanvas = _pad_spatial(g, pad)
        win = _windows(gcanvas, kernel, st, (1, 1, 1), in_sp)
        gx = gw = None
        if x.requires_grad:
            gx = np.tensordot(win, weight.data, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
            gx = np.ascontiguousarray(np.moveaxis(gx, -1, 1))
        if weight.requires_grad:
            gw = np.tensordot(x.data, win, axes=([0, 2, 3, 4], [0, 5, 6, 7]))
        return gx, gw

    return make_op(out, (x, weight), bwd)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Per-channel bias over (N, C, ...) maps."""
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"bias shape {bias.shape} vs channels {x.shape[1]}")
    view = bias.data.reshape((1, -1) + (1,) * (x.data.ndim - 2))
    out = x.data + view

    def bwd(g: np.ndarray):
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != 1)) \
            if bias.requires_grad else None
        return g, gb

    return make_op(out, (x, bias), bwd)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

def batchnorm3d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, D, H, W).

    Training mode normalizes by batch statistics (population variance) and
    updates the running buffers in place; eval mode uses the buffers.
    """
    if x.data.ndim != 5:
        raise ShapeMismatch("batchnorm3d expects (N, C, D, H, W)")
    ch = x.shape[1]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise ShapeMismatch(f"gamma/beta must be ({ch},)")
    axes = (0, 2, 3, 4)
    shape = (1, ch, 1, 1, 1)

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_sd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_sd.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bwd(g: np.ndarray):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data.reshape(shape)
            if training:
                m = x.data.size // ch
                gx = (gh - gh.mean(axis=axes, keepdims=True)
                      - xhat * (gh * xhat).sum(axis=axes, keepdims=True) / m
                      ) * inv_sd.reshape(shape)
            else:
                gx = gh * inv_sd.reshape(shape)
        return gx, ggamma, gbeta

    return make_op(out.astype(x.dtype), (x, gamma, beta), bwd)


# --------------------------------------------------------------------------
# activations and pooling
# --------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g: np.ndarray):
        return ((x.data > 0) * g,)

    return make_op(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise same-shape addition (residual connections)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def bwd(g: np.ndarray):
        return g, g

    return make_op(a.data + b.data, (a, b), bwd)


def maxpool3d(x: Tensor, kernel=3, stride=2, padding=1) -> Tensor:
    """Windowed max with recorded argmax; pads with -inf."""
    ks, st, pad = _triple(kernel), _triple(stride), _triple(padding)
    if x.data.ndim != 5:
        raise ShapeMismatch("maxpool3d expects (N, C, D, H, W)")
    out_sp = tuple(_conv_out_extent(n, k, s, p, 1)
                   for n, k, s, p in zip(x.shape[2:], ks, st, pad))
    if any(o < 1 for o in out_sp):
        raise ShapeMismatch("no pooling window placement")
    xp = _pad_spatial(x.data, pad, value=-np.inf)
    win = _windows(xp, ks, st, (1, 1, 1), out_sp)
    n, c = x.shape[:2]
    kk = ks[0] * ks[1] * ks[2]
    flat = win.reshape(n, c, kk, -1)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None, :], axis=2)[:, :, 0, :]
    out = out.reshape((n, c) + out_sp)

    def bwd(g: np.ndarray):
        ka, kb, kc = np.unravel_index(arg, ks)
        gxp = np.zeros_like(xp)
        od = np.indices(out_sp).reshape(3, -1)
        ni, ci = np.indices((n, c))
        ni = ni[:, :, None]
        ci = ci[:, :, None]
        di = od[0][None, None, :] * st[0] + ka
        hi = od[1][None, None, :] * st[1] + kb
        wi = od[2][None, None, :] * st[2] + kc
        np.add.at(gxp, (ni, ci, di, hi, wi), g.reshape(n, c, -1))
        pd, ph, pw = pad
        return (gxp[:, :, pd: xp.shape[2] - pd, ph: xp.shape[3] - ph,
                    pw: xp.shape[4] - pw],)

    return make_op(out, (x,), bwd)


def global_avgpool(x: Tensor) -> Tensor:
    """Mean over D, H, W, keeping singleton spatial extents."""
    if x.data.ndim != 5:
        raise ShapeMismatch("global_avgpool expects (N, C, D, H, W)")
    out = x.data.mean(axis=(2, 3, 4), keepdims=True)
    count = x.data.shape[2] * x.data.shape[3] * x.data.shape[4]

    def bwd(g: np.ndarray):
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype, copy=True),)

    return make_op(out, (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g: np.ndarray):
        return (g.reshape(x.shape),)

    return make_op(out, (x,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map. x: (N, F), weight: (F, K), bias: (K,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeMismatch("linear expects 2D input and weight")
    if x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeMismatch(
            f"linear shapes: x {x.shape}, w {weight.shape}, b {bias.shape}")
    out = x.data @ weight.data + bias.data

    def bwd(g: np.ndarray):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_op(out, (x, weight, bias), bwd)


# --------------------------------------------------------------------------
# upsampling
# --------------------------------------------------------------------------

def _upsample_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Per-axis linear interpolation weights, half-voxel-centre convention."""
    if n_in == n_out:
        return np.eye(n_in, dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    w_hi = src - lo
    mat = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), (1.0 - w_hi).astype(dtype))
    np.add.at(mat, (rows, hi), w_hi.astype(dtype))
    return mat


def trilinear_upsample(x: Tensor, target_sp) -> Tensor:
    """Resize (N, C, D, H, W) to target spatial extents, trilinear."""
    target_sp = _triple(target_sp)
    if x.data.ndim != 5:
        raise ShapeMismatch("trilinear_upsample expects (N, C, D, H, W)")
    if any(t < 1 for t in target_sp):
        raise ShapeMismatch(f"target extents must be >= 1, got {target_sp}")
    mats = [_upsample_matrix(x.shape[2 + ax], target_sp[ax], x.dtype)
            for ax in range(3)]
    out = np.einsum("di,hj,wk,ncijk->ncdhw", mats[0], mats[1], mats[2],
                    x.data, optimize=True)

    def bwd(g: np.ndarray):
        return (np.einsum("di,hj,wk,ncdhw->ncijk", mats[0], mats[1], mats[2],
                          g, optimize=True),)

    return make_op(out, (x,), bwd)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets: np.ndarray,
                          ignore_label: int | None = None) -> Tensor:
    """Mean -log softmax(logits)[target] over non-ignored positions.

    logits: (N, C) or (N, C, D, H, W); targets: matching integer grid.
    Stabilized by max subtraction; the mean accumulates in float64.
    """
    targets = np.asarray(targets)
    if logits.data.ndim == 2:
        grid = logits.data[:, :, None]
        tgt = targets.reshape(targets.shape[0], 1)
    elif logits.data.ndim == 5:
        n, c = logits.shape[:2]
        grid = logits.data.reshape(n, c, -1)
        if targets.shape != (n,) + logits.shape[2:]:
            raise ShapeMismatch(
                f"targets {targets.shape} vs logits {logits.shape}")
        tgt = targets.reshape(n, -1)
    else:
        raise ShapeMismatch("logits must be (N, C) or (N, C, D, H, W)")
    n, c, m = grid.shape
    if tgt.shape != (n, m):
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")

    valid = np.ones_like(tgt, dtype=bool) if ignore_label is None \
        else tgt != ignore_label
    checked = tgt[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= c):
        raise TargetOutOfRange(
            f"target ids in [{checked.min()}, {checked.max()}] for {c} classes")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise TargetOutOfRange("all positions ignored")

    z = grid - grid.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))  # (n, m)
    tgt_safe = np.where(valid, tgt, 0)
    picked = np.take_along_axis(z, tgt_safe[:, None, :], axis=1)[:, 0, :]
    per_pos = np.where(valid, lse - picked, 0.0)
    loss = np.asarray(per_pos.astype(np.float64).sum() / n_valid,
                      dtype=logits.dtype)

    def bwd(g: np.ndarray):
        soft = np.exp(z - lse[:, None, :])
        onehot_adj = np.zeros_like(soft)
        np.put_along_axis(onehot_adj, tgt_safe[:, None, :], 1.0, axis=1)
        gl = (soft - onehot_adj) * valid[:, None, :] / n_valid
        gl = gl * g  # g is the scalar upstream gradient
        return (gl.reshape(logits.shape),)

    return make_op(loss, (logits,), bwd)
