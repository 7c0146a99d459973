"""Differentiable layers on top of :mod:`sedseg.tensor`.

Axis convention for every spatial op: axes 0 and 1 are (height, width),
the last axis is channels, and any axes in between are batch-like (the
decoder uses them for the category axis). A decoder feature of shape
``(H, W, N, D)`` is therefore convolved per category with shared weights
and no transposes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, _unbroadcast, make_result

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[H, W, ..., Cin]`` with ``w[k, k, Cin, Cout]``.

    Output extent is ``(H + 2*pad - k) // stride + 1`` along each spatial axis.
    Computed as a sum of ``k*k`` shifted matrix products, which keeps memory at
    the size of the output instead of an im2col buffer.
    """
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: kernel must be [k, k, Cin, Cout], got {w.shape}")
    if x.ndim < 3 or x.shape[-1] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
    k = w.shape[0]
    H, W = x.shape[:2]
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    xp = _pad_spatial(x.data, pad)
    Hp, Wp = xp.shape[:2]
    mid = x.shape[2:-1]
    M = int(np.prod(mid)) if mid else 1
    cin, cout = w.shape[2], w.shape[3]

    # Each shifted window is a (rows, Wo*M, Cin) view with contiguous rows, so
    # every tap is one batched GEMM without copying the input.
    def window(arr, i, j, c):
        if stride == 1:
            return arr.reshape(Hp, Wp * M, c)[i : i + Ho, j * M : (j + Wo) * M]
        return arr[i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride].reshape(Ho, Wo * M, c)

    out = np.matmul(window(xp, 0, 0, cin), w.data[0, 0])
    tmp = np.empty_like(out)
    for i in range(k):
        for j in range(k):
            if i == 0 and j == 0:
                continue
            np.matmul(window(xp, i, j, cin), w.data[i, j], out=tmp)
            out += tmp
    if b is not None:
        out += b.data
    out = out.reshape((Ho, Wo) + mid + (cout,))

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(Ho, Wo * M, cout)
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                xs = window(xp, i, j, cin)
                gw[i, j] = np.tensordot(xs, g3, axes=([0, 1], [0, 1]))
                contrib = np.matmul(g3, w.data[i, j].T)
                if stride == 1:
                    window(gxp, i, j, cin)[...] += contrib
                else:
                    gxp[i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += contrib.reshape(
                        (Ho, Wo) + mid + (cin,)
                    )
        gx = gxp[pad : pad + H, pad : pad + W] if pad else gxp
        if b is None:
            return (gx, gw)
        return (gx, gw, g3.reshape(-1, cout).sum(axis=0))

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, pad: int | None = None) -> Tensor:
    """Per-channel 'same' convolution, stride 1.

    ``w`` has shape ``[k, k, *C]`` where ``C`` is a trailing suffix of the
    non-spatial axes of ``x``; the kernel is broadcast over the remaining
    leading axes (e.g. shared across categories for ``x[H, W, N, D]`` with
    ``w[k, k, D]``).
    """
    k = w.shape[0]
    if w.ndim < 3 or w.shape[1] != k or k % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: kernel must be [k, k, C] with odd k, got {w.shape}")
    chan = w.shape[2:]
    if x.shape[x.ndim - len(chan):] != chan:
        raise ShapeError(f"depthwise_conv2d: channel mismatch between input {x.shape} and kernel {w.shape}")
    if pad is None:
        pad = (k - 1) // 2
    if 2 * pad != k - 1:
        raise ShapeError(f"depthwise_conv2d: 'same' padding for k={k} is {(k - 1) // 2}, got {pad}")
    H, W = x.shape[:2]
    xp = _pad_spatial(x.data, pad)
    out = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            out += xp[i : i + H, j : j + W] * w.data[i, j]
    if b is not None:
        out += b.data

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        red = tuple(range(g.ndim - len(chan)))
        for i in range(k):
            for j in range(k):
                gxp[i : i + H, j : j + W] += g * w.data[i, j]
                gw[i, j] = (xp[i : i + H, j : j + W] * g).sum(axis=red)
        gx = gxp[pad : pad + H, pad : pad + W]
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=red))

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, backward)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-2 deconvolution with a 2x2 kernel: ``[H, W, ..., Cin] -> [2H, 2W, ..., Cout]``.

    Each input pixel writes a disjoint 2x2 output block, so the op is the
    exact adjoint of a 2x2 stride-2 convolution.
    """
    if w.ndim != 4 or w.shape[:2] != (2, 2):
        raise ShapeError(f"transposed_conv2d: only 2x2/stride-2 doubling is supported, kernel {w.shape}")
    if x.shape[-1] != w.shape[2]:
        raise ShapeError(f"transposed_conv2d: input {x.shape} does not match kernel {w.shape}")
    H, W = x.shape[:2]
    out = np.empty((2 * H, 2 * W) + x.shape[2:-1] + (w.shape[3],), dtype=x.dtype)
    for i in range(2):
        for j in range(2):
            out[i::2, j::2] = x.data @ w.data[i, j]
    if b is not None:
        out += b.data

    def backward(g):
        gx = None
        gw = np.empty_like(w.data)
        x2 = x.data.reshape(-1, x.shape[-1])
        for i in range(2):
            for j in range(2):
                gs = g[i::2, j::2]
                term = gs @ w.data[i, j].T
                gx = term if gx is None else gx + term
                gw[i, j] = x2.T @ gs.reshape(-1, gs.shape[-1])
        if b is None:
            return (gx, gw)
        return (gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if b is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match C={C}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, C)
        ggamma = (g2 * xhat.reshape(-1, C)).sum(axis=0)
        gbeta = g2.sum(axis=0)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, ``x * Phi(x)`` with the erf-based normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(out.astype(x.dtype, copy=False), (x,), backward)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> tuple[Tensor, int]:
    """Divide each last-axis vector by ``max(||v||, eps)``.

    Returns the normalized tensor and the number of vectors whose norm was
    clamped.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    clamped = norm < eps
    denom = np.where(clamped, eps, norm).astype(x.dtype)
    out = x.data / denom

    def backward(g):
        # clamped rows are a plain scale by 1/eps
        radial = (g * out).sum(axis=-1, keepdims=True)
        gx = np.where(clamped, g / denom, (g - out * radial) / denom)
        return (gx,)

    return make_result(out, (x,), backward), int(clamped.sum())


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Interpolation weights ``[n_out, n_in]`` with half-pixel centres (no corner alignment)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize over spatial axes 0 and 1."""
    H, W = x.shape[:2]
    if (H, W) == (out_h, out_w):
        return x
    mh = bilinear_matrix(H, out_h, x.dtype)
    mw = bilinear_matrix(W, out_w, x.dtype)
    rest = x.shape[2:]
    t = (mh @ x.data.reshape(H, -1)).reshape((out_h, W) + rest)
    out = np.tensordot(mw, t, axes=(1, 1))  # [out_w, out_h, ...]
    out = np.ascontiguousarray(np.swapaxes(out, 0, 1))

    def backward(g):
        gt = np.tensordot(mw.T, g, axes=(1, 1))  # [W, out_h, ...]
        gt = np.swapaxes(gt, 0, 1)  # [out_h, W, ...]
        gx = (mh.T @ np.ascontiguousarray(gt).reshape(out_h, -1)).reshape(x.shape)
        return (gx,)

    return make_result(out, (x,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int) -> Tensor:
    """Mean per-pixel softmax cross-entropy over the last (category) axis.

    Pixels whose label equals ``ignore_index`` are excluded from the mean.
    """
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    labels = np.asarray(labels).astype(np.int64)
    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every pixel is ignored")
    n_cls = logits.shape[-1]
    if np.any(labels[valid] >= n_cls) or np.any(labels[valid] < 0):
        raise ShapeError(f"cross_entropy: label values outside [0, {n_cls})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(z, safe[..., None], axis=-1)[..., 0]
    loss = ((lse - picked) * valid).sum() / n_valid

    def backward(g):
        p = np.exp(z - lse[..., None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        grad = (p - onehot) * (valid[..., None] / n_valid)
        return (grad * g,)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
