"""Differentiable building blocks for the classifier.

Every layer is a pair of pure functions: ``*_forward`` returns the output (and
whatever the backward pass needs) and ``*_backward`` returns gradients. Arrays
may carry any number of leading batch dimensions; parameter arrays may carry
leading "group" dimensions that broadcast against them, which is how the four
unshared sEMG branches and the two attention heads are evaluated in one call.

All arithmetic is plain numpy at float64 unless the caller passes float32.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from limbnet.errors import ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64); the same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum a broadcast gradient back down to the parameter shape
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@dataclass
class LayerGrads:
    """Gradients of one layer call: parameter gradients by name plus input gradient."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    input: np.ndarray | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


# ---------------------------------------------------------------- convolution

def _pad_amount(k: int, padding: str) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError(f"same padding needs an odd kernel, got K={k}")
        return (k - 1) // 2
    raise ValueError(f"unknown padding {padding!r}")


def _check_conv(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> None:
    if x.ndim < 2 or kernels.ndim < 3:
        raise ShapeError(f"conv1d expects input (..., C_in, L) and kernels (..., C_out, C_in, K); "
                         f"got {x.shape} and {kernels.shape}")
    if kernels.shape[-2] != x.shape[-2]:
        raise ShapeError(f"kernel C_in={kernels.shape[-2]} does not match input C_in={x.shape[-2]}")
    if bias.shape[-1] != kernels.shape[-3] or bias.shape[:-1] != kernels.shape[:-3]:
        raise ShapeError(f"bias shape {bias.shape} does not match kernels {kernels.shape}")


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    if pad:
        padded = np.zeros(x.shape[:-1] + (x.shape[-1] + 2 * pad,), dtype=x.dtype)
        padded[..., pad:-pad] = x
        x = padded
    # (..., C_in, L', K) -> (..., L', C_in*K)
    cols = sliding_window_view(x, k, axis=-1)
    cols = np.swapaxes(cols, -3, -2)
    return cols.reshape(cols.shape[:-2] + (-1,))


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   padding: str = "same") -> np.ndarray:
    """Cross-correlation ``out[o, t] = bias[o] + sum_{i,k} w[o, i, k] * x_pad[i, t + k]``.

    ``x`` is ``(..., C_in, L)``, ``kernels`` is ``(..., C_out, C_in, K)`` and
    ``bias`` is ``(..., C_out)``; leading dimensions broadcast.
    """
    x = np.asarray(x)
    _check_conv(x, kernels, bias)
    c_out, c_in, k = kernels.shape[-3:]
    pad = _pad_amount(k, padding)
    if x.shape[-1] + 2 * pad < k:
        raise ShapeError(f"kernel length {k} exceeds input length {x.shape[-1]}")
    cols = _im2col(x, k, pad)
    w = np.swapaxes(kernels.reshape(kernels.shape[:-3] + (c_out, c_in * k)), -1, -2)
    out = np.matmul(cols, w) + bias[..., None, :]
    return np.swapaxes(out, -1, -2)


def conv1d_backward(x: np.ndarray, kernels: np.ndarray, upstream: np.ndarray,
                    padding: str = "same") -> LayerGrads:
    x = np.asarray(x)
    c_out, c_in, k = kernels.shape[-3:]
    pad = _pad_amount(k, padding)
    length_out = x.shape[-1] + 2 * pad - k + 1
    if upstream.shape[-2:] != (c_out, length_out):
        raise ShapeError(f"upstream gradient {upstream.shape} does not match conv output "
                         f"(..., {c_out}, {length_out})")
    cols = _im2col(x, k, pad)                       # (..., L', C_in*K)
    up_t = np.swapaxes(upstream, -1, -2)            # (..., L', C_out)
    dw = np.matmul(np.swapaxes(cols, -1, -2), up_t)  # (..., C_in*K, C_out)
    dw = np.swapaxes(dw, -1, -2).reshape(dw.shape[:-2] + (c_out, c_in, k))
    dw = _unbroadcast(dw, kernels.shape)
    db = _unbroadcast(upstream.sum(axis=-1), kernels.shape[:-3] + (c_out,))

    w = kernels.reshape(kernels.shape[:-3] + (c_out, c_in * k))
    dcols = np.matmul(up_t, w)                      # (..., L', C_in*K)
    dcols = dcols.reshape(dcols.shape[:-1] + (c_in, k))
    batch = np.broadcast_shapes(x.shape[:-2], dcols.shape[:-3])
    dpad = np.zeros(batch + (c_in, x.shape[-1] + 2 * pad), dtype=dcols.dtype)
    for j in range(k):
        dpad[..., :, j:j + length_out] += np.swapaxes(dcols[..., j], -1, -2)
    dx = dpad[..., pad:pad + x.shape[-1]] if pad else dpad
    dx = _unbroadcast(dx, x.shape)
    return LayerGrads({"kernels": dw, "bias": db}, dx)


# ---------------------------------------------------------------- pooling

def _pool_phases(x: np.ndarray, window: int) -> list[np.ndarray]:
    # phase j holds x[..., t * window + j] for every complete window t
    if x.shape[-1] < window:
        raise ShapeError(f"maxpool needs length >= {window}, got {x.shape[-1]}")
    n = x.shape[-1] // window
    return [x[..., j:n * window:window] for j in range(window)]


def maxpool1d_forward(x: np.ndarray, window: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling over the last axis.

    A trailing remainder shorter than ``window`` is dropped. Returns the pooled
    array and, per output cell, the winning position inside its window
    (the first one on ties).
    """
    phases = _pool_phases(np.asarray(x), window)
    out = phases[0].copy()
    arg = np.zeros(out.shape, dtype=np.intp)
    for j, phase in enumerate(phases[1:], start=1):
        greater = phase > out
        out[greater] = phase[greater]
        arg[greater] = j
    return out, arg


def maxpool1d(x: np.ndarray, window: int = 2) -> np.ndarray:
    """Same values as :func:`maxpool1d_forward` without the argmax bookkeeping."""
    phases = _pool_phases(np.asarray(x), window)
    out = phases[0]
    for phase in phases[1:]:
        out = np.maximum(out, phase)
    return out


def maxpool1d_backward(argmax: np.ndarray, upstream: np.ndarray, input_len: int,
                       window: int = 2) -> np.ndarray:
    if upstream.shape != argmax.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match argmax {argmax.shape}")
    if argmax.size and (argmax.min() < 0 or argmax.max() >= window):
        raise IndexError("argmax index outside the pooling window")
    n = argmax.shape[-1]
    if n * window > input_len:
        raise IndexError(f"{n} windows of {window} do not fit an input of length {input_len}")
    dx = np.zeros(argmax.shape[:-1] + (input_len,), dtype=upstream.dtype)
    for j in range(window):
        dx[..., j:n * window:window] = np.where(argmax == j, upstream, 0.0)
    return dx


# ---------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense shapes do not conform: input {x.shape}, weights {weights.shape}, "
                         f"bias {bias.shape}")
    return x @ weights.T + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, upstream: np.ndarray) -> LayerGrads:
    x = np.asarray(x)
    if upstream.shape[-1] != weights.shape[0] or upstream.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"upstream {upstream.shape} does not match dense output for input {x.shape}")
    up2 = upstream.reshape(-1, weights.shape[0])
    x2 = x.reshape(-1, weights.shape[1])
    return LayerGrads({"weights": up2.T @ x2, "bias": up2.sum(axis=0)}, upstream @ weights)


# ---------------------------------------------------------------- activations

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * (x > 0)


def tanh_act(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------- attention

def _check_attention(states, W, b, v):
    if states.ndim < 2 or W.ndim < 2:
        raise ShapeError(f"attention expects states (..., M, d) and W (..., u, d); "
                         f"got {states.shape} and {W.shape}")
    if states.shape[-2] < 1:
        raise ShapeError("attention needs at least one state")
    if W.shape[-1] != states.shape[-1]:
        raise ShapeError(f"W is {W.shape} but states have dim {states.shape[-1]}")
    if b.shape != W.shape[:-1] or v.shape != W.shape[:-1]:
        raise ShapeError(f"b {b.shape} and v {v.shape} must both be {W.shape[:-1]}")


def additive_attention(states: np.ndarray, W: np.ndarray, b: np.ndarray,
                       v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bahdanau-style pooling of ``M`` state vectors into one context vector.

    ``score_i = v . tanh(W h_i + b)``, ``alpha = softmax(score)`` and
    ``context = sum_i alpha_i h_i``. Returns ``(context, alpha)``.
    """
    states = np.asarray(states)
    _check_attention(states, W, b, v)
    hidden = np.tanh(np.matmul(states, np.swapaxes(W, -1, -2)) + b[..., None, :])
    scores = np.matmul(hidden, v[..., :, None])[..., 0]
    alpha = softmax(scores, axis=-1)
    context = np.matmul(alpha[..., None, :], states)[..., 0, :]
    return context, alpha


def additive_attention_backward(states: np.ndarray, W: np.ndarray, b: np.ndarray,
                                v: np.ndarray, upstream: np.ndarray) -> LayerGrads:
    """Gradients of :func:`additive_attention` w.r.t. ``W``, ``b``, ``v`` and the states.

    ``upstream`` is the gradient of the loss w.r.t. the context vector.
    """
    states = np.asarray(states)
    _check_attention(states, W, b, v)
    hidden = np.tanh(np.matmul(states, np.swapaxes(W, -1, -2)) + b[..., None, :])
    alpha = softmax(np.matmul(hidden, v[..., :, None])[..., 0], axis=-1)
    if upstream.shape[-1] != states.shape[-1]:
        raise ShapeError(f"upstream {upstream.shape} does not match context dim {states.shape[-1]}")

    dalpha = np.matmul(states, upstream[..., :, None])[..., 0]            # (..., M)
    dstates = alpha[..., :, None] * upstream[..., None, :]
    dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    dv = np.matmul(np.swapaxes(hidden, -1, -2), dscores[..., :, None])[..., 0]
    dpre = dscores[..., :, None] * v[..., None, :] * (1.0 - hidden ** 2)   # (..., M, u)
    dW = np.matmul(np.swapaxes(dpre, -1, -2), states)
    db = dpre.sum(axis=-2)
    dstates = dstates + np.matmul(dpre, W)
    return LayerGrads(
        {"W": _unbroadcast(dW, W.shape), "b": _unbroadcast(db, b.shape),
         "v": _unbroadcast(dv, v.shape)},
        _unbroadcast(dstates, states.shape),
    )


# ---------------------------------------------------------------- regularisation

def dropout(x: np.ndarray, rate: float, training: bool,
            rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns ``(output, mask)``; the mask is None when inactive.

    The mask already holds the ``1 / (1 - rate)`` scale so backward is ``upstream * mask``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(np.shape(x)) >= rate) / (1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------------- loss

def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-example loss ``-log softmax(logits)[label]`` and its gradient w.r.t. the logits.

    Works on a single logit vector with an int label or on ``(B, k)`` logits
    with a ``(B,)`` label array.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"class index out of range for {k} classes")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(log_probs, labels[..., None], axis=-1)[..., 0]
    grad = np.exp(log_probs)
    np.put_along_axis(grad, labels[..., None],
                      np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
    return -picked, grad


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``; advances ``state.t``."""
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"{name}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    state.t = t
    return state
