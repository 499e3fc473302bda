"""The attention CNN: configuration, weights, forward/backward and the weight file.

Topology, per sEMG channel (branches do not share weights)::

    conv(5, 16) -> relu -> pool2 -> conv(3, 8) -> relu -> pool2 -> conv(3, 4) -> relu -> pool2 -> flatten

The four flattened branch vectors are pooled by two independent additive
attention heads; the two context vectors are concatenated, passed through
dropout, dense(100, relu), dense(n_classes) and a second dropout before the
softmax.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from limbnet import nn
from limbnet.errors import (BadMagicError, ChecksumError, ConfigError, CountMismatchError,
                            ShapeError, VersionMismatchError)

MAGIC = b"LIMBNET1"
FORMAT_VERSION = 1
_PADDING_CODES = {"valid": 0, "same": 1}


@dataclass(frozen=True)
class ModelConfig:
    window_len: int = 256
    n_channels: int = 4
    conv_specs: tuple[tuple[int, int], ...] = ((5, 16), (3, 8), (3, 4))
    pool_window: int = 2
    padding: str = "same"
    attention_dim: int = 128
    n_attention_heads: int = 2
    dense_hidden: int = 100
    n_classes: int = 3
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_specs", tuple((int(k), int(c)) for k, c in self.conv_specs))
        self.validate()

    def validate(self) -> None:
        if self.padding not in _PADDING_CODES:
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        if self.n_channels < 1 or self.window_len < 1:
            raise ConfigError("window_len and n_channels must be positive")
        if not self.conv_specs:
            raise ConfigError("at least one conv layer is required")
        if self.pool_window < 1:
            raise ConfigError("pool_window must be >= 1")
        if self.padding == "same":
            if self.window_len % self.pool_window ** len(self.conv_specs):
                raise ConfigError(f"window_len {self.window_len} is not divisible by "
                                  f"{self.pool_window}^{len(self.conv_specs)}")
            if any(k % 2 == 0 for k, _ in self.conv_specs):
                raise ConfigError("same padding needs odd kernel sizes")
        if any(k < 1 or c < 1 for k, c in self.conv_specs):
            raise ConfigError("kernel sizes and channel counts must be positive")
        length = self.window_len
        for k, _ in self.conv_specs:
            if self.padding == "valid":
                length -= k - 1
            if length < self.pool_window:
                raise ConfigError(f"window_len {self.window_len} is too short for the conv stack")
            length //= self.pool_window
        if self.n_attention_heads < 1:
            raise ConfigError("n_attention_heads must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.attention_dim < 1 or self.dense_hidden < 1:
            raise ConfigError("attention_dim and dense_hidden must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    def branch_lengths(self) -> list[int]:
        """Sequence length after each conv+pool stage (input length first)."""
        lengths = [self.window_len]
        for k, _ in self.conv_specs:
            n = lengths[-1] if self.padding == "same" else lengths[-1] - k + 1
            lengths.append(n // self.pool_window)
        return lengths

    @property
    def flatten_dim(self) -> int:
        return self.conv_specs[-1][1] * self.branch_lengths()[-1]

    @property
    def concat_dim(self) -> int:
        return self.n_attention_heads * self.flatten_dim

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["conv_specs"] = [list(s) for s in self.conv_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ParamCount:
    total: int
    blocks: dict[str, int]

    def format(self) -> str:
        width = max(len(k) for k in self.blocks)
        lines = [f"{name:<{width}}  {n:>8,d}" for name, n in self.blocks.items()]
        lines.append(f"{'total':<{width}}  {self.total:>8,d}")
        return "\n".join(lines)


def parameter_count(config: ModelConfig) -> ParamCount:
    """Closed-form parameter count with a per-block breakdown."""
    per_branch = 0
    c_in = 1
    for k, c_out in config.conv_specs:
        per_branch += k * c_in * c_out + c_out
        c_in = c_out
    d, u = config.flatten_dim, config.attention_dim
    blocks = {
        "conv_branches": config.n_channels * per_branch,
        "attention": config.n_attention_heads * (u * d + u + u),
        "dense_hidden": config.concat_dim * config.dense_hidden + config.dense_hidden,
        "output": config.dense_hidden * config.n_classes + config.n_classes,
    }
    return ParamCount(sum(blocks.values()), blocks)


@dataclass
class ModelWeights:
    """All learnable arrays. Branch and head parameters are stacked on axis 0.

    ``conv_w[l]`` is ``(n_channels, C_out, C_in, K)`` and ``conv_b[l]`` is
    ``(n_channels, C_out)``; ``att_W`` is ``(heads, u, d)``; ``att_b``/``att_v``
    are ``(heads, u)``.
    """

    config: ModelConfig
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    att_W: np.ndarray
    att_b: np.ndarray
    att_v: np.ndarray
    hidden_W: np.ndarray
    hidden_b: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> stacked array, for the optimiser."""
        named = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            named[f"conv{i}_w"] = w
            named[f"conv{i}_b"] = b
        named.update(att_W=self.att_W, att_b=self.att_b, att_v=self.att_v,
                     hidden_W=self.hidden_W, hidden_b=self.hidden_b,
                     out_W=self.out_W, out_b=self.out_b)
        return named

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        """Parameter blocks in canonical (file) order, as views into the stacked arrays.

        Branch by branch (each branch: conv kernels then bias, layer by
        layer), then head by head (W, b, v), then the hidden dense layer and
        the output layer (weights then bias).
        """
        for ch in range(self.config.n_channels):
            for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
                yield f"branch{ch}.conv{i}.kernels", w[ch]
                yield f"branch{ch}.conv{i}.bias", b[ch]
        for h in range(self.config.n_attention_heads):
            yield f"head{h}.W", self.att_W[h]
            yield f"head{h}.b", self.att_b[h]
            yield f"head{h}.v", self.att_v[h]
        yield "hidden.weights", self.hidden_W
        yield "hidden.bias", self.hidden_b
        yield "output.weights", self.out_W
        yield "output.bias", self.out_b

    def to_vector(self) -> np.ndarray:
        return np.concatenate([blk.ravel() for _, blk in self.blocks()])

    def load_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for _, blk in self.blocks():
            n = blk.size
            blk[...] = vec[pos:pos + n].reshape(blk.shape)
            pos += n
        if pos != len(vec):
            raise CountMismatchError(f"expected {pos} parameters, got {len(vec)}")

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "ModelWeights":
        return self.map(np.copy)

    def astype(self, dtype) -> "ModelWeights":
        return self.map(lambda a: a.astype(dtype))

    def map(self, fn) -> "ModelWeights":
        return ModelWeights(self.config, [fn(w) for w in self.conv_w], [fn(b) for b in self.conv_b],
                            fn(self.att_W), fn(self.att_b), fn(self.att_v),
                            fn(self.hidden_W), fn(self.hidden_b), fn(self.out_W), fn(self.out_b))

    def zeros_like(self) -> "ModelWeights":
        return self.map(np.zeros_like)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())


def build_model(config: ModelConfig, rng: np.random.Generator | None = None) -> ModelWeights:
    """Glorot-uniform matrices and zero biases, drawn in canonical block order.

    Without an explicit ``rng`` the generator is seeded from ``config.seed``.
    """
    if rng is None:
        rng = nn.make_rng(config.seed)
    weights = zero_weights(config)
    c_ins = [1] + [c for _, c in config.conv_specs[:-1]]
    for ch in range(config.n_channels):
        for i, ((k, c_out), c_in) in enumerate(zip(config.conv_specs, c_ins)):
            weights.conv_w[i][ch] = nn.glorot_uniform((c_out, c_in, k), c_in * k, c_out * k, rng)
    u, d = config.attention_dim, config.flatten_dim
    for h in range(config.n_attention_heads):
        weights.att_W[h] = nn.glorot_uniform((u, d), d, u, rng)
        weights.att_v[h] = nn.glorot_uniform((u,), u, 1, rng)
    weights.hidden_W[...] = nn.glorot_uniform(weights.hidden_W.shape, config.concat_dim,
                                              config.dense_hidden, rng)
    weights.out_W[...] = nn.glorot_uniform(weights.out_W.shape, config.dense_hidden,
                                           config.n_classes, rng)
    return weights


def zero_weights(config: ModelConfig) -> ModelWeights:
    c = config.n_channels
    conv_w, conv_b = [], []
    c_in = 1
    for k, c_out in config.conv_specs:
        conv_w.append(np.zeros((c, c_out, c_in, k)))
        conv_b.append(np.zeros((c, c_out)))
        c_in = c_out
    h, u, d = config.n_attention_heads, config.attention_dim, config.flatten_dim
    return ModelWeights(
        config, conv_w, conv_b,
        np.zeros((h, u, d)), np.zeros((h, u)), np.zeros((h, u)),
        np.zeros((config.dense_hidden, config.concat_dim)), np.zeros(config.dense_hidden),
        np.zeros((config.n_classes, config.dense_hidden)), np.zeros(config.n_classes),
    )


# ---------------------------------------------------------------- forward / backward

@dataclass
class ClassProbs:
    probabilities: np.ndarray

    @property
    def predicted_class(self):
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        pred = np.argmax(self.probabilities, axis=-1)
        return int(pred) if pred.ndim == 0 else pred


@dataclass
class ForwardCache:
    training: bool
    inputs: list = field(default_factory=list)      # conv inputs per layer
    pre_relu: list = field(default_factory=list)
    argmax: list = field(default_factory=list)
    states: np.ndarray | None = None
    concat: np.ndarray | None = None
    mask1: np.ndarray | None = None
    hidden_in: np.ndarray | None = None
    hidden_pre: np.ndarray | None = None
    hidden_out: np.ndarray | None = None
    mask2: np.ndarray | None = None
    logits: np.ndarray | None = None


def forward_logits(weights: ModelWeights, windows: np.ndarray, training: bool = False,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Logits for ``(C, L)`` or ``(B, C, L)`` windows (after the output dropout)."""
    cfg = weights.config
    x = np.asarray(windows)
    if x.shape[-2:] != (cfg.n_channels, cfg.window_len) or x.ndim not in (2, 3):
        raise ShapeError(f"expected window shape ({cfg.n_channels}, {cfg.window_len}) "
                         f"optionally batched, got {x.shape}")
    cache = ForwardCache(training)
    a = x[..., :, None, :]                           # (..., C, 1, L): one branch per channel
    for w, b in zip(weights.conv_w, weights.conv_b):
        z = nn.conv1d_forward(a, w, b, cfg.padding)
        if training:
            cache.inputs.append(a)
            cache.pre_relu.append(z)
            a, arg = nn.maxpool1d_forward(nn.relu(z), cfg.pool_window)
            cache.argmax.append(arg)
        else:
            a = nn.maxpool1d(nn.relu(z), cfg.pool_window)
    states = a.reshape(a.shape[:-2] + (-1,))        # (..., C, d)
    context, _ = nn.additive_attention(states[..., None, :, :], weights.att_W,
                                       weights.att_b, weights.att_v)
    concat = context.reshape(context.shape[:-2] + (-1,))
    dropped, mask1 = nn.dropout(concat, cfg.dropout_rate, training, rng)
    hidden_pre = nn.dense_forward(dropped, weights.hidden_W, weights.hidden_b)
    hidden = nn.relu(hidden_pre)
    out = nn.dense_forward(hidden, weights.out_W, weights.out_b)
    logits, mask2 = nn.dropout(out, cfg.dropout_rate, training, rng)
    if training:
        cache.states, cache.concat, cache.mask1 = states, concat, mask1
        cache.hidden_in, cache.hidden_pre, cache.hidden_out = dropped, hidden_pre, hidden
        cache.mask2, cache.logits = mask2, logits
    return logits, cache


def forward(weights: ModelWeights, windows: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> tuple[ClassProbs, ForwardCache]:
    """Class probabilities for one window ``(C, L)`` or a batch ``(B, C, L)``.

    ``mode="train"`` turns dropout on (``rng`` required) and keeps the
    activations that :func:`backward` needs.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    logits, cache = forward_logits(weights, windows, mode == "train", rng)
    return ClassProbs(nn.softmax(logits)), cache


def backward(weights: ModelWeights, cache: ForwardCache, dlogits: np.ndarray) -> ModelWeights:
    """Gradient of the loss w.r.t. every parameter, given d(loss)/d(logits).

    The result is a :class:`ModelWeights` holding gradients in place of values.
    """
    if not cache.training or cache.logits is None:
        raise ValueError("backward needs the cache of a train-mode forward call")
    cfg = weights.config
    dlogits = np.asarray(dlogits)
    if dlogits.shape != cache.logits.shape:
        raise ShapeError(f"loss gradient {dlogits.shape} does not match logits {cache.logits.shape}")
    g = weights.zeros_like()

    dout = dlogits * cache.mask2 if cache.mask2 is not None else dlogits
    lg = nn.dense_backward(cache.hidden_out, weights.out_W, dout)
    g.out_W[...], g.out_b[...] = lg["weights"], lg["bias"]
    dhidden_pre = nn.relu_backward(cache.hidden_pre, lg.input)
    lg = nn.dense_backward(cache.hidden_in, weights.hidden_W, dhidden_pre)
    g.hidden_W[...], g.hidden_b[...] = lg["weights"], lg["bias"]
    dconcat = lg.input * cache.mask1 if cache.mask1 is not None else lg.input

    dcontext = dconcat.reshape(dconcat.shape[:-1] + (cfg.n_attention_heads, cfg.flatten_dim))
    lg = nn.additive_attention_backward(cache.states[..., None, :, :], weights.att_W,
                                        weights.att_b, weights.att_v, dcontext)
    g.att_W[...], g.att_b[...], g.att_v[...] = lg["W"], lg["b"], lg["v"]
    dstates = lg.input[..., 0, :, :]                 # head axis already summed out

    lengths = cfg.branch_lengths()
    c_last = cfg.conv_specs[-1][1]
    da = dstates.reshape(dstates.shape[:-1] + (c_last, lengths[-1]))
    for i in reversed(range(len(cfg.conv_specs))):
        z = cache.pre_relu[i]
        dz = nn.relu_backward(z, nn.maxpool1d_backward(cache.argmax[i], da, z.shape[-1],
                                                       cfg.pool_window))
        lg = nn.conv1d_backward(cache.inputs[i], weights.conv_w[i], dz, cfg.padding)
        g.conv_w[i][...], g.conv_b[i][...] = lg["kernels"], lg["bias"]
        da = lg.input
    return g


class Predictor:
    """Eval-mode forward for one window at a time, with weights pre-arranged for matmul.

    Computes exactly what ``forward(weights, window, "eval")`` computes, minus
    the shape checks and caching. ``dtype=np.float32`` gives the 32-bit path
    used by the latency benchmark.
    """

    def __init__(self, weights: ModelWeights, dtype=np.float64):
        cfg = weights.config
        self.config = cfg
        self.dtype = np.dtype(dtype)
        self._convs = []
        for w, b in zip(weights.conv_w, weights.conv_b):
            c, c_out, c_in, k = w.shape
            pad = _pad_amount(k, cfg.padding)
            self._convs.append((np.ascontiguousarray(w.reshape(c, c_out, c_in * k), dtype),
                                b[..., None].astype(dtype), k, pad))
        self._att_wt = np.ascontiguousarray(np.swapaxes(weights.att_W, -1, -2), dtype)
        self._att_b = weights.att_b[:, None, :].astype(dtype)
        self._att_v = weights.att_v[:, :, None].astype(dtype)
        self._hidden_wt = np.ascontiguousarray(weights.hidden_W.T, dtype)
        self._hidden_b = weights.hidden_b.astype(dtype)
        self._out_wt = np.ascontiguousarray(weights.out_W.T, dtype)
        self._out_b = weights.out_b.astype(dtype)

    def __call__(self, window: np.ndarray) -> np.ndarray:
        pw = self.config.pool_window
        a = np.asarray(window).astype(self.dtype, copy=False)[:, None, :]
        for w, b, k, pad in self._convs:
            c, c_in, n = a.shape
            buf = np.zeros((c, c_in, n + 2 * pad), self.dtype)
            buf[:, :, pad:pad + n] = a
            n_out = n + 2 * pad - k + 1
            s0, s1, s2 = buf.strides
            cols = np.lib.stride_tricks.as_strided(buf, (c, c_in, k, n_out), (s0, s1, s2, s2))
            z = np.matmul(w, cols.reshape(c, c_in * k, n_out))
            z += b
            np.maximum(z, 0, out=z)
            a = nn.maxpool1d(z, pw)
        states = a.reshape(a.shape[0], -1)
        scores = np.matmul(np.tanh(np.matmul(states, self._att_wt) + self._att_b), self._att_v)[..., 0]
        scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
        scores /= scores.sum(axis=-1, keepdims=True)
        hidden = np.maximum((scores @ states).ravel() @ self._hidden_wt + self._hidden_b, 0)
        logits = hidden @ self._out_wt + self._out_b
        e = np.exp(logits - logits.max())
        return e / e.sum()


def _pad_amount(k: int, padding: str) -> int:
    return (k - 1) // 2 if padding == "same" else 0


# ---------------------------------------------------------------- weight file
#
# little endian: magic(8) | version u32 | config u32s | float64 params | crc32 u32
# config u32s: window_len, n_channels, n_conv, (kernel, channels) * n_conv,
#   pool_window, padding (0 valid, 1 same), attention_dim, n_attention_heads,
#   dense_hidden, n_classes, dropout_rate in parts per million, seed low word,
#   seed high word.  The CRC covers every byte before it.

def _config_words(config: ModelConfig) -> list[int]:
    words = [config.window_len, config.n_channels, len(config.conv_specs)]
    for k, c in config.conv_specs:
        words += [k, c]
    words += [config.pool_window, _PADDING_CODES[config.padding], config.attention_dim,
              config.n_attention_heads, config.dense_hidden, config.n_classes,
              round(config.dropout_rate * 1_000_000),
              config.seed & 0xFFFFFFFF, config.seed >> 32]
    return words


def save_weights(weights: ModelWeights, path) -> None:
    words = _config_words(weights.config)
    body = MAGIC + struct.pack(f"<I{len(words)}I", FORMAT_VERSION, *words)
    body += weights.to_vector().astype("<f8").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_weights(path) -> ModelWeights:
    """Read a weight file; the returned weights carry the stored config.

    Raises BadMagicError, VersionMismatchError, CountMismatchError (wrong or
    truncated length) or ChecksumError.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a weight file (magic {raw[:8]!r})")
    pos = 8

    def take(n_words: int) -> tuple[int, ...]:
        nonlocal pos
        end = pos + 4 * n_words
        if end > len(raw):
            raise CountMismatchError(f"{path}: header truncated at byte {len(raw)}")
        vals = struct.unpack_from(f"<{n_words}I", raw, pos)
        pos = end
        return vals

    (version,) = take(1)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    window_len, n_channels, n_conv = take(3)
    flat = take(2 * n_conv)
    specs = tuple((flat[2 * i], flat[2 * i + 1]) for i in range(n_conv))
    pool, pad_code, u, heads, hidden, classes, rate_ppm, seed_lo, seed_hi = take(9)
    try:
        padding = {v: k for k, v in _PADDING_CODES.items()}[pad_code]
        config = ModelConfig(window_len, n_channels, specs, pool, padding, u, heads, hidden,
                             classes, rate_ppm / 1_000_000, seed_lo | (seed_hi << 32))
    except (KeyError, ConfigError) as exc:
        raise CountMismatchError(f"{path}: header does not describe a valid model ({exc})") from exc

    n = parameter_count(config).total
    expected = pos + 8 * n + 4
    if len(raw) != expected:
        raise CountMismatchError(f"{path}: {len(raw)} bytes, header implies {expected} "
                                 f"({n} parameters)")
    (crc,) = struct.unpack_from("<I", raw, expected - 4)
    if crc != zlib.crc32(raw[:expected - 4]):
        raise ChecksumError(f"{path}: CRC32 mismatch")
    weights = zero_weights(config)
    weights.load_vector(np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64))
    return weights
