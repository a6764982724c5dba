"""Dense float64 tensors and the layer kernels used by the scorer.

Every layer function returns ``(out, backward)``. ``backward`` takes the
gradient of the final scalar w.r.t. ``out``, accumulates into the ``grad``
buffer of every argument tensor whose ``requires_grad`` flag is set (both
parameters and data inputs), and returns the gradient w.r.t. the data
input(s) so callers can chain layers explicitly. The model graphs here are
small and static, so this closure-per-layer style replaces a general tape.

All math runs in float64. Randomness comes exclusively from ``Rng``, a
splitmix64 generator, so identical seeds give bit-identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EmptySequenceError,
    NumericError,
    ParameterError,
)

Array = np.ndarray
BackwardFn = Callable[[Array], Array]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_INV_2_53 = 1.0 / (1 << 53)


def _mix64(z: int) -> int:
    """splitmix64 output mix on a Python int (mod 2**64)."""
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_block(z: Array) -> Array:
    # uint64 array arithmetic wraps mod 2**64, matching _mix64 exactly.
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """splitmix64 stream: state advances by a golden-ratio increment.

    The n-th draw after seeding is ``mix(seed + n * 0x9E3779B97F4A7C15)``,
    so block draws and one-at-a-time draws produce the same sequence.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def _block(self, n: int) -> Array:
        counters = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        counters = counters + np.uint64(self._state)
        self._state = (self._state + n * _GOLDEN) & _MASK64
        return _mix64_block(counters)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, shape=None):
        """Doubles in [lo, hi) with 53-bit resolution; scalar if shape is None."""
        if shape is None:
            u = (self.next_u64() >> 11) * _INV_2_53
            return lo + (hi - lo) * u
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._block(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape=None):
        """Standard normal draws via Box-Muller; scalar if shape is None."""
        scalar = shape is None
        shape = (1,) if scalar else ((shape,) if isinstance(shape, int) else tuple(shape))
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0, 1] keeps the log finite.
        u1 = ((self._block(m) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (self._block(m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n].reshape(shape)
        return float(z[0]) if scalar else z

    def _below(self, n: int) -> int:
        # Rejection sampling removes modulo bias.
        limit = (1 << 64) - ((1 << 64) % n)
        r = self.next_u64()
        while r >= limit:
            r = self.next_u64()
        return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self._below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order

    def derive(self, label: str) -> "Rng":
        """Child stream keyed by label; pure in (current state, label)."""
        return Rng(_mix64(self._state ^ _fnv1a64(label.encode("utf-8"))))


class Tensor:
    """Float64 array plus a same-shape gradient buffer, zeroed at creation."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.grad = np.zeros_like(self.data)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    @classmethod
    def zeros(cls, shape, requires_grad: bool = False) -> "Tensor":
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return cls(np.zeros(shape), requires_grad=requires_grad)


def _accumulate(t: Tensor, g: Array) -> None:
    if t.requires_grad:
        t.grad += g


def affine(x: Tensor, w: Tensor, b: Tensor):
    """out = x @ w + b. x (n, d_in), w (d_in, d_out), b (d_out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError(
            f"affine: need x (n, d_in), w (d_in, d_out), b (d_out,); "
            f"got x {x.shape}, w {w.shape}, b {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(
            f"affine: shape mismatch between x {x.shape}, w {w.shape}, b {b.shape}"
        )
    out = Tensor(x.data @ w.data + b.data)

    def backward(grad_out: Array) -> Array:
        grad_out = np.asarray(grad_out, dtype=np.float64)
        _accumulate(w, x.data.T @ grad_out)
        _accumulate(b, grad_out.sum(axis=0))
        grad_x = grad_out @ w.data.T
        _accumulate(x, grad_x)
        return grad_x

    return out, backward


def softmax(v: Tensor):
    """Softmax over the last axis with max subtraction for stability."""
    a = v.data
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError(f"softmax: last axis must be non-empty, got shape {v.shape}")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def backward(grad_out: Array) -> Array:
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grad_v = s * (grad_out - (grad_out * s).sum(axis=-1, keepdims=True))
        _accumulate(v, grad_v)
        return grad_v

    return out, backward


def activation(x: Tensor, kind: str = "tanh"):
    """Elementwise nonlinearity; only tanh is defined."""
    if kind != "tanh":
        raise ConfigError(f"activation: unknown kind {kind!r}, expected 'tanh'")
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward(grad_out: Array) -> Array:
        grad_x = np.asarray(grad_out, dtype=np.float64) * (1.0 - t * t)
        _accumulate(x, grad_x)
        return grad_x

    return out, backward


def dropout(x: Tensor, p: float, mode: str, rng: Rng | None = None):
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout: mode must be 'train' or 'eval', got {mode!r}")
    if not (0.0 <= p < 1.0):
        raise ParameterError(f"dropout: p must satisfy 0 <= p < 1, got {p}")
    if mode == "eval" or p == 0.0:
        out = Tensor(x.data)

        def backward_id(grad_out: Array) -> Array:
            grad_x = np.asarray(grad_out, dtype=np.float64)
            _accumulate(x, grad_x)
            return grad_x

        return out, backward_id

    if rng is None:
        raise ParameterError("dropout: train mode requires an rng")
    keep = rng.uniform(shape=x.shape) >= p
    scale = 1.0 / (1.0 - p)
    mask = keep.astype(np.float64) * scale
    out = Tensor(x.data * mask)

    def backward(grad_out: Array) -> Array:
        grad_x = np.asarray(grad_out, dtype=np.float64) * mask
        _accumulate(x, grad_x)
        return grad_x

    return out, backward


def max_pool_time(x: Tensor):
    """Column-wise max over the time axis. x (T, d) -> out (d,).

    Gradient flows to the first row attaining each column maximum.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"max_pool_time: need (T, d), got shape {x.shape}")
    t_len, d = x.shape
    if t_len == 0:
        raise EmptySequenceError(f"max_pool_time: empty time axis in shape {x.shape}")
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(d)
    out = Tensor(x.data[idx, cols])

    def backward(grad_out: Array) -> Array:
        grad_x = np.zeros((t_len, d))
        grad_x[idx, cols] = np.asarray(grad_out, dtype=np.float64)
        _accumulate(x, grad_x)
        return grad_x

    return out, backward


@dataclass
class MhaParams:
    """Projection weights for one multi-head attention layer over width d."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int

    @classmethod
    def create(cls, d: int, heads: int, rng: Rng) -> "MhaParams":
        if heads < 1 or d % heads != 0:
            raise ConfigError(f"attention width {d} is not divisible by {heads} heads")
        s = 1.0 / math.sqrt(d)
        mk = lambda: Tensor(rng.uniform(-s, s, (d, d)), requires_grad=True)
        zb = lambda: Tensor(np.zeros(d), requires_grad=True)
        return cls(mk(), zb(), mk(), zb(), mk(), zb(), mk(), zb(), heads)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
        }

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, heads: int) -> "MhaParams":
        def take(key: str) -> Tensor:
            full = f"{prefix}.{key}"
            if full not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {full!r}")
            return Tensor(arrays[full], requires_grad=True)

        return cls(take("wq"), take("bq"), take("wk"), take("bk"),
                   take("wv"), take("bv"), take("wo"), take("bo"), heads)


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: MhaParams):
    """Scaled dot-product attention of q_in (Tq, d) over kv_in (Tk, d).

    Per-head Q/K/V projections, scores QK^T / sqrt(d/h), softmax over keys,
    weighted value sum, heads concatenated, then the output projection.
    backward returns (grad_q_in, grad_kv_in).
    """
    d = params.wq.shape[0]
    h = params.heads
    if d % h != 0:
        raise ConfigError(f"attention width {d} is not divisible by {h} heads")
    if q_in.data.ndim != 2 or kv_in.data.ndim != 2:
        raise DimensionError(
            f"attention: need 2-D inputs, got q_in {q_in.shape}, kv_in {kv_in.shape}"
        )
    if q_in.shape[1] != d or kv_in.shape[1] != d:
        raise DimensionError(
            f"attention: width mismatch, q_in {q_in.shape}, kv_in {kv_in.shape}, "
            f"projections expect width {d}"
        )
    tq, tk = q_in.shape[0], kv_in.shape[0]
    if tq == 0 or tk == 0:
        raise EmptySequenceError(
            f"attention: empty sequence, q_in {q_in.shape}, kv_in {kv_in.shape}"
        )
    dk = d // h
    scale = 1.0 / math.sqrt(dk)

    q = q_in.data @ params.wq.data + params.bq.data
    k = kv_in.data @ params.wk.data + params.bk.data
    v = kv_in.data @ params.wv.data + params.bv.data
    qh = q.reshape(tq, h, dk).transpose(1, 0, 2)
    kh = k.reshape(tk, h, dk).transpose(1, 0, 2)
    vh = v.reshape(tk, h, dk).transpose(1, 0, 2)

    scores = qh @ kh.transpose(0, 2, 1) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    ctx = attn @ vh
    concat = ctx.transpose(1, 0, 2).reshape(tq, d)
    out = Tensor(concat @ params.wo.data + params.bo.data)

    def backward(grad_out: Array):
        grad_out = np.asarray(grad_out, dtype=np.float64)
        _accumulate(params.wo, concat.T @ grad_out)
        _accumulate(params.bo, grad_out.sum(axis=0))
        g_concat = grad_out @ params.wo.data.T
        g_ctx = g_concat.reshape(tq, h, dk).transpose(1, 0, 2)
        g_attn = g_ctx @ vh.transpose(0, 2, 1)
        g_vh = attn.transpose(0, 2, 1) @ g_ctx
        g_scores = attn * (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True))
        g_qh = g_scores @ kh * scale
        g_kh = g_scores.transpose(0, 2, 1) @ qh * scale
        g_q = g_qh.transpose(1, 0, 2).reshape(tq, d)
        g_k = g_kh.transpose(1, 0, 2).reshape(tk, d)
        g_v = g_vh.transpose(1, 0, 2).reshape(tk, d)
        _accumulate(params.wq, q_in.data.T @ g_q)
        _accumulate(params.bq, g_q.sum(axis=0))
        _accumulate(params.wk, kv_in.data.T @ g_k)
        _accumulate(params.bk, g_k.sum(axis=0))
        _accumulate(params.wv, kv_in.data.T @ g_v)
        _accumulate(params.bv, g_v.sum(axis=0))
        grad_q_in = g_q @ params.wq.data.T
        grad_kv_in = g_k @ params.wk.data.T + g_v @ params.wv.data.T
        _accumulate(q_in, grad_q_in)
        _accumulate(kv_in, grad_kv_in)
        return grad_q_in, grad_kv_in

    return out, backward


GraphFn = Callable[[], tuple[float, Callable[[], None]]]


def grad_check(f: GraphFn, params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Compare analytic gradients of f against central finite differences.

    f() must rebuild its graph from the current parameter values and return
    (scalar value, seed_backward), where seed_backward() runs the backward
    pass with d(value) = 1. Returns the maximum relative error over all
    parameter entries, falling back to absolute error where both gradients
    are below 1e-6 in magnitude.
    """
    if h <= 0:
        raise ParameterError(f"grad_check: step h must be positive, got {h}")
    for p in params:
        p.zero_grad()
    value, seed_backward = f()
    if not math.isfinite(value):
        raise NumericError(f"grad_check: f evaluated to a non-finite value {value}")
    seed_backward()
    analytic = [p.grad.copy() for p in params]

    def value_at() -> float:
        v, _ = f()
        if not math.isfinite(v):
            raise NumericError(f"grad_check: f evaluated to a non-finite value {v}")
        return v

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            v_plus = value_at()
            flat[i] = orig - h
            v_minus = value_at()
            flat[i] = orig
            numeric = (v_plus - v_minus) / (2.0 * h)
            a = gflat[i]
            denom = max(abs(a), abs(numeric))
            err = abs(a - numeric) if denom < 1e-6 else abs(a - numeric) / denom
            if err > worst:
                worst = err
    return worst
