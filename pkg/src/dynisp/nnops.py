"""Structured operations on NCHW tensors: convolution, pooling, resizing,
normalization and the contractions used by the controller.

All gradients are hand-written closures recorded on the active tape; see
:mod:`dynisp.tensor` for the recording protocol.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _as_tensor, _check_finite, _tracked, active_tape

__all__ = [
    "conv2d",
    "reflect_pad",
    "zero_pad",
    "matmul",
    "einsum2",
    "linear",
    "layer_norm",
    "global_avg_pool",
    "avg_pool",
    "bilinear_upsample",
    "resize_bilinear",
    "pixel_shuffle",
    "pixel_unshuffle",
    "dynamic_depthwise_conv",
]


def _pad(a, width: int, mode: str) -> Tensor:
    a = _as_tensor(a)
    if width == 0:
        return a
    p = ((0, 0), (0, 0), (width, width), (width, width))
    out = Tensor(np.pad(a.data, p, mode=mode), dtype=a.dtype)
    if _tracked(a):
        h, w = a.shape[2], a.shape[3]

        def backward(g: np.ndarray, a=a) -> None:
            core = g[:, :, width : width + h, width : width + w].copy()
            if mode == "reflect":
                # fold reflected borders back onto their source pixels
                full = np.zeros_like(a.data)
                np.add.at(
                    full,
                    (slice(None), slice(None), _reflect_idx(h, width)[:, None], _reflect_idx(w, width)[None, :]),
                    g,
                )
                _accum(a, full)
            else:
                _accum(a, core)

        active_tape().record(out, backward)
    return out


def _reflect_idx(n: int, width: int) -> np.ndarray:
    idx = np.arange(-width, n + width)
    return np.abs(idx) * (idx < n) + (2 * n - 2 - idx) * (idx >= n)


def reflect_pad(a, width: int) -> Tensor:
    return _pad(a, width, "reflect")


def zero_pad(a, width: int) -> Tensor:
    return _pad(a, width, "constant")


def conv2d(x, kernel, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x`` (n, c_in, h, w) with ``kernel``
    (c_out, c_in/groups, k, k); zero padding."""
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = kernel.shape
    if kh != kw:
        raise ValueError("only square kernels are supported")
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ValueError(
            f"incompatible channel counts: c_in={cin}, c_out={cout}, groups={groups}"
        )
    k = kh
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("convolution output would be empty")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cout_g = cout // groups
    # im2col: (n, g, oh, ow, cin_g*k*k) contiguous so the contraction is a GEMM
    cols = np.ascontiguousarray(
        win.reshape(n, groups, cin_g, oh, ow, k, k).transpose(0, 1, 3, 4, 2, 5, 6)
    ).reshape(n, groups, oh * ow, cin_g * k * k)
    kg = kernel.data.reshape(groups, cout_g, cin_g * k * k)
    out_data = np.matmul(cols, kg.transpose(0, 2, 1)[None])  # (n, g, oh*ow, cout_g)
    out_data = np.ascontiguousarray(
        out_data.transpose(0, 1, 3, 2).reshape(n, cout, oh, ow), dtype=x.dtype
    )
    _check_finite(out_data, "conv2d")
    out = Tensor(out_data, dtype=x.dtype)
    if _tracked(x, kernel):

        def backward(g: np.ndarray, x=x, kernel=kernel, cols=cols) -> None:
            gg = np.ascontiguousarray(
                g.reshape(n, groups, cout_g, oh * ow).transpose(0, 1, 3, 2)
            )  # (n, g, oh*ow, cout_g)
            dk = np.matmul(gg.transpose(0, 1, 3, 2), cols).sum(axis=0)  # (g, cout_g, cin_g*k*k)
            _accum(kernel, dk.reshape(kernel.shape).astype(kernel.dtype))
            dcols = np.matmul(gg, kg[None])  # (n, g, oh*ow, cin_g*k*k)
            dcols = dcols.reshape(n, groups, oh, ow, cin_g, k, k).transpose(0, 1, 4, 2, 3, 5, 6)
            dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
            dxp_g = dxp.reshape(n, groups, cin_g, h + 2 * padding, w + 2 * padding)
            for ki in range(k):
                for kj in range(k):
                    dxp_g[
                        :, :, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride
                    ] += dcols[:, :, :, :, :, ki, kj]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accum(x, np.ascontiguousarray(dxp))

        active_tape().record(out, backward)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; supports 2-D and leading-batch 3-D operands."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    out_data = np.matmul(a.data, b.data)
    _check_finite(out_data, "matmul")
    out = Tensor(out_data, dtype=a.dtype)
    if _tracked(a, b):

        def backward(g: np.ndarray, a=a, b=b) -> None:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            while ga.ndim > a.data.ndim:
                ga = ga.sum(axis=0)
            while gb.ndim > b.data.ndim:
                gb = gb.sum(axis=0)
            _accum(a, ga)
            _accum(b, gb)

        active_tape().record(out, backward)
    return out


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum whose gradients are einsums with permuted specs.

    Every index of each operand must appear in the output or the other
    operand (no internal traces), which holds for all contractions used here.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    ins, out_idx = spec.split("->")
    sa, sb = ins.split(",")
    if (
        set(sa) - (set(out_idx) | set(sb))
        or set(sb) - (set(out_idx) | set(sa))
        or len(set(sa)) != len(sa)
        or len(set(sb)) != len(sb)
    ):
        raise ValueError(f"unsupported einsum spec for autodiff: {spec}")
    out_data = np.einsum(spec, a.data, b.data, optimize=True)
    _check_finite(out_data, "einsum")
    out = Tensor(np.ascontiguousarray(out_data, dtype=a.dtype), dtype=a.dtype)
    if _tracked(a, b):

        def backward(g: np.ndarray, a=a, b=b) -> None:
            ga = np.einsum(f"{out_idx},{sb}->{sa}", g, b.data, optimize=True)
            gb = np.einsum(f"{out_idx},{sa}->{sb}", g, a.data, optimize=True)
            _accum(a, np.ascontiguousarray(ga, dtype=a.dtype))
            _accum(b, np.ascontiguousarray(gb, dtype=b.dtype))

        active_tape().record(out, backward)
    return out


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight`` with optional bias; x is (n, d_in), weight (d_in, d_out)."""
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalization over the channel axis of an NCHW tensor, per spatial
    location, with per-channel affine parameters."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma)
    beta = _as_tensor(beta)
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.data.reshape(1, c, 1, 1)
    out_data = (xhat * gv + beta.data.reshape(1, c, 1, 1)).astype(x.dtype)
    _check_finite(out_data, "layer_norm")
    out = Tensor(out_data, dtype=x.dtype)
    if _tracked(x, gamma, beta):

        def backward(g: np.ndarray) -> None:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype))
            _accum(beta, g.sum(axis=(0, 2, 3)).astype(beta.dtype))
            gx = g * gv
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            _accum(x, (inv * (gx - m1 - xhat * m2)).astype(x.dtype))

        active_tape().record(out, backward)
    return out


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial axes; (n, c, h, w) -> (n, c)."""
    x = _as_tensor(x)
    out = Tensor(x.data.mean(axis=(2, 3)), dtype=x.dtype)
    if _tracked(x):
        n, c, h, w = x.shape

        def backward(g: np.ndarray, x=x) -> None:
            _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy())

        active_tape().record(out, backward)
    return out


def avg_pool(x, k: int, s: int) -> Tensor:
    """Average pooling with kernel ``k`` and stride ``s`` (no padding)."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ValueError(f"spatial dims {h}x{w} smaller than pooling kernel {k}")
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    out = Tensor(win.mean(axis=(-1, -2)).astype(x.dtype), dtype=x.dtype)
    if _tracked(x):

        def backward(g: np.ndarray, x=x) -> None:
            dx = np.zeros_like(x.data)
            gk = g / (k * k)
            for ki in range(k):
                for kj in range(k):
                    dx[:, :, ki : ki + oh * s : s, kj : kj + ow * s : s] += gk
            _accum(x, dx)

        active_tape().record(out, backward)
    return out


def _bilinear_axis(n_src: int, n_dst: int):
    """Half-pixel (align-corners = false) source indices and weights."""
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    src = np.clip(src, 0.0, n_src - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, n_src - 1)
    i1 = np.minimum(i0 + 1, n_src - 1)
    w1 = (src - i0).astype(np.float32)
    return i0, i1, w1


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize with the half-pixel convention."""
    x = _as_tensor(x)
    if out_h <= 0 or out_w <= 0:
        raise ValueError("resize target dims must be positive")
    n, c, h, w = x.shape
    if not _tracked(x):
        # inference-only fast path; cv2 uses the same half-pixel convention.
        # Resizing channel by channel straight into an NCHW buffer avoids the
        # channels-last transposes, which dominate at 4K output sizes.
        import cv2

        out_data = np.empty((n, c, out_h, out_w), dtype=x.dtype)
        for i in range(n):
            for j in range(c):
                cv2.resize(x.data[i, j], (out_w, out_h), dst=out_data[i, j],
                           interpolation=cv2.INTER_LINEAR)
        _check_finite(out_data, "resize_bilinear")
        return Tensor(out_data, dtype=x.dtype)
    y0, y1, wy = _bilinear_axis(h, out_h)
    x0, x1, wx = _bilinear_axis(w, out_w)
    wyv = wy[:, None]
    a = x.data[:, :, y0, :] * (1.0 - wyv) + x.data[:, :, y1, :] * wyv
    out_data = (a[:, :, :, x0] * (1.0 - wx) + a[:, :, :, x1] * wx).astype(x.dtype)
    _check_finite(out_data, "resize_bilinear")
    out = Tensor(out_data, dtype=x.dtype)
    if _tracked(x):

        def backward(g: np.ndarray, x=x) -> None:
            da = np.zeros((n, c, out_h, w), dtype=x.dtype)
            np.add.at(da, (slice(None), slice(None), slice(None), x0), g * (1.0 - wx))
            np.add.at(da, (slice(None), slice(None), slice(None), x1), g * wx)
            dx = np.zeros_like(x.data)
            np.add.at(dx, (slice(None), slice(None), y0, slice(None)), da * (1.0 - wyv))
            np.add.at(dx, (slice(None), slice(None), y1, slice(None)), da * wyv)
            _accum(x, dx)

        active_tape().record(out, backward)
    return out


def bilinear_upsample(x, out_h: int, out_w: int) -> Tensor:
    return resize_bilinear(x, out_h, out_w)


def pixel_shuffle(x, factor: int) -> Tensor:
    """(n, c*f*f, h, w) -> (n, c, h*f, w*f)."""
    x = _as_tensor(x)
    n, cf, h, w = x.shape
    f = factor
    if cf % (f * f):
        raise ValueError(f"channel count {cf} not divisible by factor^2 {f * f}")
    c = cf // (f * f)
    out_data = (
        x.data.reshape(n, c, f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * f, w * f)
    )
    out = Tensor(np.ascontiguousarray(out_data), dtype=x.dtype)
    if _tracked(x):

        def backward(g: np.ndarray, x=x) -> None:
            gg = g.reshape(n, c, h, f, w, f).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)
            _accum(x, np.ascontiguousarray(gg))

        active_tape().record(out, backward)
    return out


def pixel_unshuffle(x, factor: int) -> Tensor:
    """(n, c, h*f, w*f) -> (n, c*f*f, h, w)."""
    x = _as_tensor(x)
    n, c, hf, wf = x.shape
    f = factor
    if hf % f or wf % f:
        raise ValueError("spatial dims not divisible by unshuffle factor")
    h, w = hf // f, wf // f
    out_data = (
        x.data.reshape(n, c, h, f, w, f).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * f * f, h, w)
    )
    out = Tensor(np.ascontiguousarray(out_data), dtype=x.dtype)
    if _tracked(x):

        def backward(g: np.ndarray, x=x) -> None:
            gg = g.reshape(n, c, f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape)
            _accum(x, np.ascontiguousarray(gg))

        active_tape().record(out, backward)
    return out


def dynamic_depthwise_conv(x, kernels) -> Tensor:
    """Depthwise convolution whose kernel is itself a network output.

    ``kernels`` is either one kernel per image, shape (n, c, k, k), or a
    per-site kernel field (n, c*k*k, h, w) matching the input resolution.
    The input must be pre-padded; output spatial dims shrink by k-1.
    """
    x = _as_tensor(x)
    kernels = _as_tensor(kernels)
    n, c, hp, wp = x.shape
    if kernels.data.ndim != 4:
        raise ValueError("dynamic kernels must be rank 4")
    per_site = kernels.shape[1] != c
    if per_site:
        ckk = kernels.shape[1]
        k = int(round((ckk // c) ** 0.5))
        if c * k * k != ckk:
            raise ValueError(f"kernel field channels {ckk} do not factor as c*k*k for c={c}")
    else:
        if kernels.data.ndim != 4 or kernels.shape[1] != c:
            raise ValueError(f"dynamic kernel shape {kernels.shape} incompatible with {c} channels")
        k = kernels.shape[2]
    oh, ow = hp - k + 1, wp - k + 1
    if per_site and (kernels.shape[2] != oh or kernels.shape[3] != ow):
        raise ValueError("per-site kernel field resolution must match the conv output")
    xd = x.data
    kk = kernels.data.reshape(n, c, k, k, oh, ow) if per_site else kernels.data
    out_data = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            tap = kk[:, :, ki, kj] if per_site else kk[:, :, ki, kj][:, :, None, None]
            out_data += xd[:, :, ki : ki + oh, kj : kj + ow] * tap
    _check_finite(out_data, "dynamic_depthwise_conv")
    out = Tensor(out_data, dtype=x.dtype)
    if _tracked(x, kernels):

        def backward(g: np.ndarray, x=x, kernels=kernels) -> None:
            dx = np.zeros_like(x.data)
            if per_site:
                dk = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
                for ki in range(k):
                    for kj in range(k):
                        patch = xd[:, :, ki : ki + oh, kj : kj + ow]
                        dk[:, :, ki, kj] = g * patch
                        dx[:, :, ki : ki + oh, kj : kj + ow] += g * kk[:, :, ki, kj]
                _accum(kernels, dk.reshape(kernels.shape))
            else:
                dk = np.empty((n, c, k, k), dtype=x.dtype)
                for ki in range(k):
                    for kj in range(k):
                        patch = xd[:, :, ki : ki + oh, kj : kj + ow]
                        dk[:, :, ki, kj] = (g * patch).sum(axis=(2, 3))
                        dx[:, :, ki : ki + oh, kj : kj + ow] += (
                            g * kk[:, :, ki, kj][:, :, None, None]
                        )
                _accum(kernels, dk)
            _accum(x, dx)

        active_tape().record(out, backward)
    return out
