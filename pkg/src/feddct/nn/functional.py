"""Layer operations with hand-written backward rules."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import RngStream
from .tensor import DTYPE, ShapeError, Tensor, as_tensor

LAYER_KINDS = ("dense", "conv2d", "relu", "softmax", "dropout", "pool", "global_pool", "flatten")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``(in, out)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, backward, "dense")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"cross_entropy: label out of range for {c} classes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    value = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return Tensor._from_op(np.asarray(value), (logits,), backward, "cross_entropy")


def dropout(x, p: float, rng: RngStream | None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` at train time."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RngStream")
    keep = (rng.random(x.shape) >= p).astype(DTYPE) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def _pad(arr: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return arr
    return np.pad(arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation. ``x`` is ``(B, C_in, H, W)``; ``weight`` is
    ``(C_out, C_in/groups, k, k)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    b, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if c_in % groups or c_out % groups or c_in // groups != c_in_g:
        raise ShapeError(f"conv2d: input channels {c_in} incompatible with weight {weight.shape}, groups={groups}")
    xp = _pad(x.data, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    c_out_g = c_out // groups
    cols, out = [], np.empty((b, c_out, ho, wo), dtype=DTYPE)
    for g in range(groups):
        col = windows[:, g * c_in_g : (g + 1) * c_in_g].transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, -1)
        wmat = weight.data[g * c_out_g : (g + 1) * c_out_g].reshape(c_out_g, -1)
        out[:, g * c_out_g : (g + 1) * c_out_g] = (col @ wmat.T).reshape(b, ho, wo, c_out_g).transpose(0, 3, 1, 2)
        cols.append(col)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, c_out, 1, 1)
        parents.append(bias)

    def backward(gout):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(weight.data)
        for g in range(groups):
            gmat = gout[:, g * c_out_g : (g + 1) * c_out_g].transpose(0, 2, 3, 1).reshape(b * ho * wo, c_out_g)
            wmat = weight.data[g * c_out_g : (g + 1) * c_out_g].reshape(c_out_g, -1)
            dw[g * c_out_g : (g + 1) * c_out_g] = (gmat.T @ cols[g]).reshape(c_out_g, c_in_g, kh, kw)
            dcol = (gmat @ wmat).reshape(b, ho, wo, c_in_g, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, g * c_in_g : (g + 1) * c_in_g, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op(out, parents, backward, "conv2d")


def avg_pool2d(x, kernel: int) -> Tensor:
    """Non-overlapping ``kernel x kernel`` average pooling; trailing rows/cols that
    do not fill a window are dropped."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pool: expected 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // kernel, w // kernel
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool: kernel {kernel} larger than feature map {h}x{w}")
    crop = x.data[:, :, : ho * kernel, : wo * kernel]
    out = crop.reshape(b, c, ho, kernel, wo, kernel).mean(axis=(3, 5))
    scale = 1.0 / (kernel * kernel)

    def backward(g):
        dx = np.zeros_like(x.data)
        up = np.repeat(np.repeat(g * scale, kernel, axis=2), kernel, axis=3)
        dx[:, :, : ho * kernel, : wo * kernel] = up
        return (dx,)

    return Tensor._from_op(out, (x,), backward, "pool")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_pool: expected 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return Tensor._from_op(out, (x,), backward, "global_pool")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return Tensor._from_op(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def forward_layer(kind: str, x, params: dict | None = None, *, layer_id: str = "?", **options) -> Tensor:
    """Apply one layer given its kind, input and parameter mapping.

    ``params`` holds ``weight``/``bias`` for ``dense`` and ``conv2d``. Extra
    options: ``stride``/``padding``/``groups`` (conv2d), ``kernel`` (pool),
    ``p``/``rng``/``training`` (dropout).
    """
    params = params or {}
    try:
        if kind == "dense":
            return linear(x, params["weight"], params.get("bias"))
        if kind == "conv2d":
            return conv2d(
                x,
                params["weight"],
                params.get("bias"),
                stride=options.get("stride", 1),
                padding=options.get("padding", 0),
                groups=options.get("groups", 1),
            )
        if kind == "relu":
            return relu(x)
        if kind == "softmax":
            return softmax(x)
        if kind == "dropout":
            return dropout(x, options.get("p", 0.0), options.get("rng"), options.get("training", True))
        if kind == "pool":
            return avg_pool2d(x, options.get("kernel", 2))
        if kind == "global_pool":
            return global_avg_pool(x)
        if kind == "flatten":
            return flatten(x)
    except ShapeError as exc:
        raise ShapeError(f"layer {layer_id} ({kind}): {exc}") from None
    raise ValueError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}")
