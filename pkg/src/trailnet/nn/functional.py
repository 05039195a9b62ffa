"""Stateless forward kernels.

Arrays are plain numpy arrays; float32 is used for training and float64 for
gradient checking. Images and feature maps are channels-last (N, H, W, C).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ConfigurationError, InputError

PROB_FLOOR = 1e-12


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ConfigurationError(
            f"dense: input shape {x.shape} does not match weight shape {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise ConfigurationError(
            f"dense: bias shape {bias.shape} does not match weight shape {weights.shape}"
        )
    return x @ weights + bias


CHUNK_ELEMENTS = 1 << 24  # im2col working-set cap (elements)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (output size, pad before, pad after) for zero "same" padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def im2col(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Patch matrix of a padded NHWC batch, columns ordered (ki, kj, c)."""
    n, c = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    win = win[:, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * out_h * out_w, kernel * kernel * c)


def batch_chunks(n: int, per_sample: int, budget: int = CHUNK_ELEMENTS):
    """Split a batch so each patch matrix stays under `budget` elements."""
    step = max(1, budget // max(per_sample, 1))
    return [(a, min(a + step, n)) for a in range(0, n, step)]


def conv2d_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
):
    """Zero-padded "same" cross-correlation.

    Accepts a single image (H, W, C) or a batch (N, H, W, C); kernels are
    (K, K, C, F).
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1]:
        raise ConfigurationError(f"conv2d: kernels must be KxKxCxF, got {kernels.shape}")
    k, _, c, f = kernels.shape
    if x.shape[3] != c:
        raise ConfigurationError(
            f"conv2d: kernel channels {c} != input channels {x.shape[3]} "
            f"(input {x.shape}, kernels {kernels.shape})"
        )
    if stride < 1 or k < 1:
        raise ConfigurationError(f"conv2d: invalid kernel {k} / stride {stride}")
    n, h, w, _ = x.shape
    oh, ph0, ph1 = same_padding(h, k, stride)
    ow, pw0, pw1 = same_padding(w, k, stride)
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    kmat = kernels.reshape(-1, f)
    out = np.empty((n, oh, ow, f), dtype=np.result_type(x, kernels))
    for a, b in batch_chunks(n, oh * ow * k * k * c):
        out[a:b] = (im2col(xp[a:b], k, stride, oh, ow) @ kmat).reshape(b - a, oh, ow, f)
    if bias is not None:
        out += bias
    return out[0] if single else out


def maxpool2d_forward(x: np.ndarray, kernel: int = 2, stride: int = 2):
    """Non-overlapping max pooling with floor semantics.

    Returns the pooled batch and the in-window argmax (row-major offset,
    first maximum wins) as uint8.
    """
    if kernel != stride:
        raise ConfigurationError("maxpool2d: only kernel == stride is supported")
    single = x.ndim == 3
    if single:
        x = x[None]
    n, h, w, c = x.shape
    if h < kernel or w < kernel:
        raise InputError(f"maxpool2d: input {x.shape} smaller than window {kernel}")
    oh, ow = h // kernel, w // kernel
    views = [
        x[:, i : oh * kernel : kernel, j : ow * kernel : kernel]
        for i in range(kernel)
        for j in range(kernel)
    ]
    out = views[0].copy()
    arg = np.zeros(out.shape, dtype=np.uint8)
    for k, v in enumerate(views[1:], start=1):
        better = v > out
        np.maximum(out, v, out=out)
        arg[better] = k
    if single:
        return out[0], arg[0]
    return out, arg


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return expit(x)


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": np.tanh, "softmax": softmax}


def activation_forward(x, kind: str):
    try:
        fn = _ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(x))


def gru_cell(x, h, w, u, b):
    """One GRU step; w is (I, 3H), u is (H, 3H), gate order (update, reset, candidate)."""
    hid = h.shape[-1]
    xw = x @ w + b
    zr = sigmoid(xw[..., : 2 * hid] + h @ u[:, : 2 * hid])
    z, r = zr[..., :hid], zr[..., hid:]
    cand = np.tanh(xw[..., 2 * hid :] + (r * h) @ u[:, 2 * hid :])
    return (1 - z) * h + z * cand


def gru_forward(sequence: np.ndarray, layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """Run stacked GRU layers over a (T, I) or (N, T, I) sequence from a zero
    state and return the last layer's final hidden state."""
    seq = np.asarray(sequence)
    if seq.shape[-2] == 0:
        raise InputError("gru: sequence must have at least one timestep")
    for w, u, b in layers:
        h = np.zeros(seq.shape[:-2] + (u.shape[0],), dtype=seq.dtype)
        outs = []
        for t in range(seq.shape[-2]):
            h = gru_cell(seq[..., t, :], h, w, u, b)
            outs.append(h)
        seq = np.stack(outs, axis=-2)
    return seq[..., -1, :]


def cross_entropy(probs: np.ndarray, labels) -> float:
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != probs.shape[0]:
        raise InputError(f"cross_entropy: {labels.shape[0]} labels for {probs.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError(f"cross_entropy: labels must lie in 0..{probs.shape[1] - 1}")
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def softmax_cross_entropy_grad(probs: np.ndarray, labels) -> np.ndarray:
    """Gradient of mean cross-entropy at the logits when probs = softmax(logits)."""
    labels = np.asarray(labels).reshape(-1)
    grad = probs.copy()
    grad[np.arange(labels.shape[0]), labels] -= 1
    grad /= labels.shape[0]
    return grad
