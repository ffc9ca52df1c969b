"""Structured ops on NCHW tensors: convolution, pooling, bilinear resize.

conv2d lowers to im2col (a strided view reshaped into a matrix) followed by
one batched matmul per call, so BLAS does the heavy lifting. The backward
pass reuses the saved column matrix for the weight gradient and scatters the
input gradient back with k*k strided slice additions (col2im).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, DimensionError
from .tensor import Tensor, op_output


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution. padding is "same" or an integer count
    applied to all four sides."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: str | int = "same"

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if isinstance(self.padding, str):
            if self.padding != "same":
                raise ConfigError(f"padding must be \"same\" or an int, got {self.padding!r}")
        elif self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")


def _same_pads(size: int, kernel: int, stride: int, dilation: int) -> tuple[int, int]:
    """Zero padding so that out = ceil(size / stride). The odd remainder goes
    to the trailing edge (bottom/right)."""
    out = -(-size // stride)
    span = (kernel - 1) * dilation + 1
    total = max((out - 1) * stride + span - size, 0)
    lead = total // 2
    return lead, total - lead


def _resolve_pads(spec: ConvSpec, h: int, w: int):
    if spec.padding == "same":
        ph = _same_pads(h, spec.kernel_h, spec.stride, spec.dilation)
        pw = _same_pads(w, spec.kernel_w, spec.stride, spec.dilation)
        return ph, pw
    p = int(spec.padding)
    return (p, p), (p, p)


def _out_size(size: int, kernel: int, stride: int, dilation: int) -> int:
    span = (kernel - 1) * dilation + 1
    return (size - span) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, dilation: int) -> np.ndarray:
    """(N, C, H, W) -> contiguous (N, C, kh, kw, Ho, Wo) patch array."""
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, dilation)
    wo = _out_size(w, kw, stride, dilation)
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
    )
    return np.ascontiguousarray(view)


def _col2im(cols: np.ndarray, h: int, w: int, stride: int, dilation: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add (N, C, kh, kw, Ho, Wo) back to (N, C, h, w)."""
    n, c, kh, kw, ho, wo = cols.shape
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(kh):
        hs = i * dilation
        he = hs + stride * (ho - 1) + 1
        for j in range(kw):
            ws = j * dilation
            we = ws + stride * (wo - 1) + 1
            out[:, :, hs:he:stride, ws:we:stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """2-d convolution (cross-correlation). weight is
    (C_out, C_in / groups, kh, kw); groups == C_in gives a depthwise conv."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be NCHW, got shape {x.data.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-d, got shape {weight.data.shape}")
    if x.data.dtype != weight.data.dtype:
        raise ConfigError(
            f"conv2d: mixed precision ({x.data.dtype.name} vs {weight.data.dtype.name})"
        )
    n, c_in, h, w = x.data.shape
    c_out, c_in_g, kh, kw = weight.data.shape
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise DimensionError(
            f"weight kernel {kh}x{kw} does not match spec {spec.kernel_h}x{spec.kernel_w}"
        )
    g = spec.groups
    if c_in % g != 0 or c_out % g != 0:
        raise DimensionError(f"groups={g} must divide C_in={c_in} and C_out={c_out}")
    if c_in_g != c_in // g:
        raise DimensionError(
            f"weight expects {c_in_g * g} input channels (groups={g}), input has {c_in}"
        )
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise DimensionError(f"bias shape must be ({c_out},), got {bias.data.shape}")
        if bias.data.dtype != x.data.dtype:
            raise ConfigError("conv2d: bias precision differs from input")

    (pt, pb), (pl, pr) = _resolve_pads(spec, h, w)
    hp, wp = h + pt + pb, w + pl + pr
    ho = _out_size(hp, kh, spec.stride, spec.dilation)
    wo = _out_size(wp, kw, spec.stride, spec.dilation)
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"kernel {kh}x{kw} (dilation {spec.dilation}) does not fit the "
            f"padded input {hp}x{wp}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    cols = _im2col(xp, kh, kw, spec.stride, spec.dilation)
    patch = c_in_g * kh * kw
    # (N, G, patch, L) where L = Ho*Wo
    cols_g = cols.reshape(n, g, patch, ho * wo)
    w_g = weight.data.reshape(g, c_out // g, patch)
    out = np.matmul(w_g[None], cols_g)  # (N, G, C_out/G, L)
    out = out.reshape(n, c_out, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward_fn(grad):
        grad_g = grad.reshape(n, g, c_out // g, ho * wo)
        gw = gx = gb = None
        if weight.requires_grad:
            # (N, G, C_out/G, L) @ (N, G, L, patch) summed over N
            gw = np.matmul(grad_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
            gw = gw.reshape(weight.data.shape)
        if x.requires_grad:
            gcols = np.matmul(w_g.transpose(0, 2, 1)[None], grad_g)  # (N, G, patch, L)
            gcols = gcols.reshape(n, c_in, kh, kw, ho, wo)
            gxp = _col2im(gcols, hp, wp, spec.stride, spec.dilation)
            gx = gxp[:, :, pt:hp - pb, pl:wp - pr] if (pt or pb or pl or pr) else gxp
        if bias is not None and bias.requires_grad:
            gb = grad.sum(axis=(0, 2, 3))
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return op_output("conv2d", inputs, out, backward_fn)


def pool2d(x: Tensor, kind: str, window: int, stride: int | None = None) -> Tensor:
    """Max or average pooling with a square window and no padding."""
    if kind not in ("max", "avg"):
        raise ConfigError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    if window < 1:
        raise ConfigError(f"pool window must be >= 1, got {window}")
    stride = window if stride is None else stride
    if stride < 1:
        raise ConfigError(f"pool stride must be >= 1, got {stride}")
    if x.data.ndim != 4:
        raise DimensionError(f"pool2d input must be NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    sn, sc, sh, sw = x.data.strides
    view = as_strided(
        x.data,
        shape=(n, c, ho, wo, window, window),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
    )
    flat = np.ascontiguousarray(view).reshape(n, c, ho, wo, window * window)

    if kind == "avg":
        out = flat.mean(axis=-1)

        def backward_fn(grad):
            share = grad / (window * window)
            gx = np.zeros_like(x.data)
            for i in range(window):
                for j in range(window):
                    gx[:, :, i:i + stride * (ho - 1) + 1:stride,
                       j:j + stride * (wo - 1) + 1:stride] += share
            return (gx,)

        return op_output("pool_avg", (x,), out, backward_fn)

    arg = flat.argmax(axis=-1)  # first max wins ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward_fn(grad):
        gx = np.zeros_like(x.data)
        di, dj = np.divmod(arg, window)
        nn, cc, oi, oj = np.indices(arg.shape, sparse=False)
        rows = oi * stride + di
        cols = oj * stride + dj
        np.add.at(gx, (nn, cc, rows, cols), grad)
        return (gx,)

    return op_output("pool_max", (x,), out, backward_fn)


def global_pool(x: Tensor, kind: str) -> Tensor:
    """Pool each channel map to a single value; output is (N, C, 1, 1)."""
    if kind not in ("max", "avg"):
        raise ConfigError(f"global pool kind must be 'max' or 'avg', got {kind!r}")
    if x.data.ndim != 4:
        raise DimensionError(f"global_pool input must be NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if kind == "avg":
        # Sorted summation makes the mean bitwise invariant to spatial
        # permutations; the gradient (1/(H*W) everywhere) is order-free anyway.
        srt = np.sort(x.data.reshape(n, c, h * w), axis=-1)
        out = srt.mean(axis=-1).reshape(n, c, 1, 1)

        def backward_fn(grad):
            return (np.broadcast_to(grad / (h * w), x.data.shape).copy(),)

        return op_output("global_avg_pool", (x,), out, backward_fn)

    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1).reshape(n, c, 1, 1)

    def backward_fn(grad):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], grad.reshape(n, c, 1), axis=-1)
        return (gflat.reshape(x.data.shape),)

    return op_output("global_max_pool", (x,), out, backward_fn)


def channel_pool(x: Tensor, kind: str) -> Tensor:
    """Pool across the channel axis; output is (N, 1, H, W)."""
    if kind not in ("max", "avg"):
        raise ConfigError(f"channel pool kind must be 'max' or 'avg', got {kind!r}")
    if x.data.ndim != 4:
        raise DimensionError(f"channel_pool input must be NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if kind == "avg":
        # Summing in sorted order makes the mean bitwise invariant to channel
        # permutations; the gradient (1/C everywhere) is order-free anyway.
        out = np.sort(x.data, axis=1).mean(axis=1, keepdims=True)

        def backward_fn(grad):
            return (np.broadcast_to(grad / c, x.data.shape).copy(),)

        return op_output("channel_avg_pool", (x,), out, backward_fn)

    arg = x.data.argmax(axis=1)  # (N, H, W), first max wins ties
    out = np.take_along_axis(x.data, arg[:, None], axis=1)

    def backward_fn(grad):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None], grad, axis=1)
        return (gx,)

    return op_output("channel_max_pool", (x,), out, backward_fn)


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bilinear interpolation matrix using the
    half-pixel source mapping src = (dst + 0.5) * n_in / n_out - 0.5, with
    clamp-to-edge at the borders."""
    if n_in < 1 or n_out < 1:
        raise ConfigError("resize sizes must be >= 1")
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for d in range(n_out):
        src = (d + 0.5) * scale - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        hi = min(max(lo + 1, 0), n_in - 1)
        lo = min(max(lo, 0), n_in - 1)
        m[d, lo] += 1.0 - frac
        m[d, hi] += frac
    return m


def upsample_bilinear(x: Tensor, scale: int) -> Tensor:
    """Bilinear upsampling by an integer factor via interpolation matrices:
    y = Mh @ x @ Mw^T, so the backward pass is the transposed pair."""
    try:
        fractional = not float(scale).is_integer()
    except (TypeError, ValueError):
        fractional = True
    if fractional or scale < 1:
        raise ConfigError(f"upsample scale must be a positive integer, got {scale!r}")
    scale = int(scale)
    if x.data.ndim != 4:
        raise DimensionError(f"upsample input must be NCHW, got shape {x.data.shape}")
    if scale == 1:
        return op_output("upsample", (x,), x.data.copy(), lambda g: (g,))
    n, c, h, w = x.data.shape
    mh = resize_matrix(h, h * scale, dtype=x.data.dtype)
    mw = resize_matrix(w, w * scale, dtype=x.data.dtype)
    out = mh @ x.data @ mw.T

    def backward_fn(grad):
        return (mh.T @ grad @ mw,)

    return op_output("upsample", (x,), out, backward_fn)


def resize_bilinear_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-array bilinear resize for (..., H, W), same convention as
    upsample_bilinear. Used by the data pipeline; not differentiated."""
    h, w = img.shape[-2], img.shape[-1]
    if (h, w) == (out_h, out_w):
        return img.copy()
    mh = resize_matrix(h, out_h, dtype=np.float64)
    mw = resize_matrix(w, out_w, dtype=np.float64)
    return (mh @ img.astype(np.float64) @ mw.T).astype(img.dtype, copy=False)
