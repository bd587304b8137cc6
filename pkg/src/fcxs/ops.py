"""Layer-level differentiable operations.

Spatial semantics: convolutions use "same" zero padding, so a stride-s
convolution maps an (H, W) input to (ceil(H/s), ceil(W/s)).  Padding is
split with the extra row/column at the bottom/right.  Max pooling pads
with -inf instead, so out-of-bounds positions never win a window.

Convolution is evaluated by im2col expansion followed by a batched
matmul; the column buffer is kept alive for the backward pass.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import Rng
from .tensor import Tensor, make_op

_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))  # row-major window order


def _same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    lead = total // 2
    return out, lead, total - lead


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution of (N,C,H,W) with (F,C,kh,kw) weights."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/weight, got {x.shape} / {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cw}")
    if bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    if kh != kw or kh not in (1, 2, 3):
        raise ShapeError(f"conv2d: unsupported kernel {kh}x{kw}")
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")

    ho, pt, pb = _same_padding(h, kh, stride)
    wo, pl, pr = _same_padding(w, kw, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))

    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols_mat = cols.reshape(n, c * kh * kw, ho * wo)
    w_mat = weight.data.reshape(f, c * kh * kw)
    out = (w_mat @ cols_mat).reshape(n, f, ho, wo) + bias.data.reshape(1, f, 1, 1)

    def backward(grad: np.ndarray) -> None:
        g_mat = grad.reshape(n, f, ho * wo)
        if bias.requires_grad:
            bias.accumulate_grad(grad.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            dw = np.tensordot(g_mat, cols_mat, axes=([0, 2], [0, 2]))
            weight.accumulate_grad(dw.reshape(weight.shape))
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, i, j
                    ]
            x.accumulate_grad(dxp[:, :, pt : pt + h, pl : pl + w])

    return make_op(out, (x, weight, bias), backward, "conv2d")


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Learned 2x upsampling: stride-2 2x2 transposed convolution.

    Weight layout is (C_in, F, 2, 2); output spatial dims are exactly
    doubled.  The operation is the adjoint of a stride-2 2x2 convolution.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("transposed_conv2d expects 4-D input/weight")
    n, c, h, w = x.shape
    cw, f, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ShapeError(f"transposed_conv2d: kernel must be 2x2, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(f"transposed_conv2d: input has {c} channels but weight expects {cw}")
    if bias.shape != (f,):
        raise ShapeError(f"transposed_conv2d: bias shape {bias.shape} does not match {f} filters")

    # stride == kernel, so scattered patches never overlap
    out6 = np.einsum("nchw,cfij->nfhiwj", x.data, weight.data, optimize=True)
    out = out6.reshape(n, f, 2 * h, 2 * w) + bias.data.reshape(1, f, 1, 1)

    def backward(grad: np.ndarray) -> None:
        g6 = grad.reshape(n, f, h, 2, w, 2)
        if bias.requires_grad:
            bias.accumulate_grad(grad.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            weight.accumulate_grad(np.einsum("nfhiwj,nchw->cfij", g6, x.data, optimize=True))
        if x.requires_grad:
            x.accumulate_grad(np.einsum("nfhiwj,cfij->nchw", g6, weight.data, optimize=True))

    return make_op(out, (x, weight, bias), backward, "transposed_conv2d")


def maxpool2d(x: Tensor, size: int = 2, stride: int = 2) -> Tensor:
    """2x2 max pooling; stride 1 keeps spatial dims (windows ignore padding).

    Gradient routes to the window maximum, first occurrence in row-major
    window order on ties.
    """
    if size != 2:
        raise ShapeError("maxpool2d: only 2x2 windows are supported")
    if stride not in (1, 2):
        raise ShapeError("maxpool2d: stride must be 1 or 2")
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if stride == 2:
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2d: stride-2 pooling needs even dims, got {h}x{w}")
        ho, wo = h // 2, w // 2
        xp = x.data
    else:
        ho, wo = h, w
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, 1), (0, 1)), constant_values=-np.inf)

    windows = np.stack(
        [xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] for i, j in _POOL_OFFSETS]
    )
    winner = windows.argmax(axis=0)  # first max in window order
    out = np.take_along_axis(windows, winner[None], axis=0)[0]

    def backward(grad: np.ndarray) -> None:
        if not x.requires_grad:
            return
        dxp = np.zeros((n, c) + xp.shape[2:], dtype=grad.dtype)
        for k, (i, j) in enumerate(_POOL_OFFSETS):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += grad * (
                winner == k
            )
        x.accumulate_grad(dxp[:, :, :h, :w])

    return make_op(out, (x,), backward, "maxpool2d")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * (x.data > 0))

    return make_op(out, (x,), backward, "relu")


def elu(x: Tensor) -> Tensor:
    """Exponential linear unit with alpha = 1: x for x > 0, exp(x) - 1 below."""
    positive = x.data > 0
    out = x.data.copy()
    out[~positive] = np.expm1(x.data[~positive])

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * np.where(positive, 1.0, out + 1.0).astype(x.dtype))

    return make_op(out, (x,), backward, "elu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * out * (1.0 - out))

    return make_op(out, (x,), backward, "sigmoid")


_ACTIVATIONS = {"relu": relu, "elu": elu, "sigmoid": sigmoid}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis of (N,L,H,W), max-shifted."""
    if x.data.ndim != 4 or x.shape[1] < 2:
        raise ShapeError(f"softmax_channels expects (N,L>=2,H,W), got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            inner = (grad * p).sum(axis=1, keepdims=True)
            x.accumulate_grad(p * (grad - inner))

    return make_op(p, (x,), backward, "softmax_channels")


def gaussian_dropout(x: Tensor, d: float, mode: str, rng: Optional[Rng] = None) -> Tensor:
    """Multiplicative Gaussian noise x * (1 + sigma * z), sigma = sqrt(d/(1-d)).

    The noise has unit mean, so inference is the identity (bit-exact: the
    input tensor is returned unchanged).
    """
    if not 0.0 <= d < 1.0:
        raise ConfigError(f"drop probability must be in [0, 1), got {d}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or d == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode gaussian_dropout requires an Rng")
    sigma = float(np.sqrt(d / (1.0 - d)))
    factor = 1.0 + sigma * rng.normal(x.shape, dtype=x.dtype)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * factor)

    return make_op(x.data * factor, (x,), backward, "gaussian_dropout")


def sum_per_channel(x: Tensor) -> Tensor:
    """Reduce (N,L,H,W) over batch and space, keeping the channel axis: (L,)."""
    if x.data.ndim != 4:
        raise ShapeError(f"sum_per_channel expects 4-D input, got {x.shape}")
    out = x.data.sum(axis=(0, 2, 3))

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(grad.reshape(1, -1, 1, 1), x.shape).astype(x.dtype).copy())

    return make_op(out, (x,), backward, "sum_per_channel")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel-axis concatenation of two (N,C,H,W) tensors, `a` first."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects 4-D inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    c_a = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(grad[:, :c_a])
        if b.requires_grad:
            b.accumulate_grad(grad[:, c_a:])

    return make_op(out, (a, b), backward, "concat_channels")
