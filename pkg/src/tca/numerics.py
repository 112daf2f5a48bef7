"""Dense float64 kernels shared by the backbone, clustering and TCA code.

Every multiply-add that goes through :func:`matmul` or
:func:`pairwise_sqdist` is charged to the active :class:`FlopCounter`, which
is how the harness measures FLOPs independently of the analytic formula.
"""
from __future__ import annotations

import contextvars
import math

import numpy as np

from .errors import ShapeError

_active_counter: contextvars.ContextVar["FlopCounter | None"] = contextvars.ContextVar(
    "tca_flop_counter", default=None
)


class FlopCounter:
    """Accumulates multiply-adds issued by the instrumented kernels.

    Use as a context manager; counters nest, and every enclosing counter
    sees the work done inside an inner one.
    """

    def __init__(self):
        self.count = 0
        self._parent = None
        self._token = None

    def add(self, n: int) -> None:
        self.count += int(n)
        if self._parent is not None:
            self._parent.add(n)

    def __enter__(self):
        self._parent = _active_counter.get()
        self._token = _active_counter.set(self)
        return self

    def __exit__(self, *exc):
        _active_counter.reset(self._token)
        self._parent = None
        return False


def _charge(n: int) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(n)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product, batched over leading axes, charged as m*k*n per matrix."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = np.matmul(a, b)
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    batch = math.prod(out.shape[:-2])
    _charge(batch * m * k * n)
    return out


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared L2 distances between the rows of ``a`` (..., P, L) and ``b`` (..., Q, L).

    Uses direct differences rather than the expanded ``|a|^2 + |b|^2 - 2ab``
    form, so equal rows give exactly zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"pairwise_sqdist: incompatible shapes {a.shape} and {b.shape}")
    out = _sqdist_raw(a, b)
    p, q, l = a.shape[-2], b.shape[-2], a.shape[-1]
    batch = math.prod(out.shape[:-2])
    _charge(batch * p * q * l)
    return out


def _sqdist_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # loop over the shorter side to bound the temporary to (..., max(P,Q), L)
    p, q = a.shape[-2], b.shape[-2]
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.empty(batch + (p, q))
    if q <= p:
        for j in range(q):
            diff = a - b[..., j : j + 1, :]
            out[..., :, j] = np.einsum("...l,...l->...", diff, diff)
    else:
        for i in range(p):
            diff = a[..., i : i + 1, :] - b
            out[..., i, :] = np.einsum("...l,...l->...", diff, diff)
    return out


def argmin_row(d: np.ndarray) -> np.ndarray:
    """Index of the minimum along the last axis; ties go to the lowest index."""
    d = np.asarray(d)
    if d.ndim == 0 or d.shape[-1] == 0:
        raise ShapeError("argmin_row: empty rows")
    # np.argmin returns the first occurrence of the minimum
    return np.argmin(d, axis=-1)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-row layer norm. A zero-variance row normalizes to 0 before the affine."""
    x = np.asarray(x, dtype=np.float64)
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise ShapeError(f"layernorm: affine of size {gamma.shape[-1]} for {x.shape[-1]} channels")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    normed = np.where(var > 0, centered / np.sqrt(var + eps), 0.0)
    return normed * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    x = np.asarray(x, dtype=np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * (x * x * x))
    return 0.5 * x * (1.0 + np.tanh(inner))


# SplitMix64 constants (Steele, Lea & Flood 2014)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based SplitMix64 generator.

    Output ``i`` (1-based) of a generator whose counter is ``s`` is
    ``mix64(s + i * 0x9E3779B97F4A7C15 mod 2**64)``, so any implementation
    with 64-bit wrapping arithmetic reproduces the stream bit for bit.
    Uniform doubles take the top 53 bits: ``(u >> 11) * 2**-53``.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix64(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        # Box-Muller on pairs; 1 - u keeps the log argument in (0, 1]
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        theta = 2.0 * math.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def split(self) -> "Rng":
        """Independent child generator seeded from the next output."""
        return Rng(int(self.next_u64(1)[0]))
