"""Per-window token clustering and reconstruction ("high-low-high").

Each window's M tokens are reduced to N centroids with grid-initialized
Lloyd iterations, processed at the reduced size, then copied back to every
member position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbone import GridSpec, TokenGrid
from .errors import ConfigError
from .numerics import _sqdist_raw, argmin_row, pairwise_sqdist

DEFAULT_ITERS = 5


@dataclass(frozen=True)
class ClusteredState:
    spec: GridSpec
    tokens: np.ndarray        # K x N x L cluster tokens
    member_of: np.ndarray     # K x M cluster index of every original token
    member_count: np.ndarray  # K x N, |C_j|
    cluster_side: int

    @property
    def num_clusters(self) -> int:
        return self.tokens.shape[1]


def _isqrt_exact(n: int) -> int | None:
    r = math.isqrt(n)
    return r if r * r == n else None


def grid_seeds(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Seed token indices and the spatial cell of every token.

    With square M and N the seeds sit on a sqrt(N) x sqrt(N) lattice over the
    window; otherwise they are spaced evenly along raster order.
    """
    side, cside = _isqrt_exact(m), _isqrt_exact(n)
    if side is not None and cside is not None:
        centers = (2 * np.arange(cside) + 1) * side // (2 * cside)
        seeds = (centers[:, None] * side + centers[None, :]).ravel()
        rows, cols = np.divmod(np.arange(m), side)
        cells = (rows * cside // side) * cside + cols * cside // side
    else:
        seeds = (2 * np.arange(n) + 1) * m // (2 * n)
        cells = np.arange(m) * n // m
    return seeds, cells


def cluster_windows(tokens: np.ndarray, n: int, iters: int = DEFAULT_ITERS):
    """Lloyd clustering of every window in a K x M x L stack.

    Returns ``(centroids K x N x L, member_of K x M, member_count K x N)``.
    With ``iters == 0`` tokens are grouped by spatial cell and the seeds are
    the centroids. Only the assignment distances are charged as FLOPs; the
    occasional empty-cluster re-seed is bookkeeping.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    K, m, L = tokens.shape
    if not 1 <= n <= m:
        raise ConfigError(f"cannot form {n} clusters from {m} tokens")
    if iters < 0:
        raise ConfigError(f"iters must be >= 0, got {iters}")
    seeds, cells = grid_seeds(m, n)
    centroids = tokens[:, seeds, :].copy()
    member_of = np.broadcast_to(cells, (K, m)).copy()
    win = np.arange(K)[:, None]

    for _ in range(iters):
        dist = pairwise_sqdist(tokens, centroids)
        member_of = argmin_row(dist)
        counts = _counts(member_of, n)
        if not counts.all():
            own = np.take_along_axis(dist, member_of[..., None], axis=-1)[..., 0]
            for k in np.flatnonzero((counts == 0).any(axis=1)):
                _reseed_window(tokens[k], member_of[k], counts[k], own[k])
        onehot = np.zeros((K, n, m))
        onehot[win, member_of, np.arange(m)] = 1.0
        centroids = np.matmul(onehot, tokens) / counts[..., None]

    return centroids, member_of, _counts(member_of, n)


def _counts(member_of: np.ndarray, n: int) -> np.ndarray:
    K = member_of.shape[0]
    flat = (np.arange(K)[:, None] * n + member_of).ravel()
    return np.bincount(flat, minlength=K * n).reshape(K, n)


def _reseed_window(x, member_of, counts, own):
    # farthest token from its centroid moves into the empty cluster; later
    # picks measure distance to earlier seeds too so they stay distinct
    own = own.copy()
    for j in np.flatnonzero(counts == 0):
        movable = counts[member_of] > 1
        score = np.where(movable, own, -1.0)
        i = int(np.argmax(score))
        counts[member_of[i]] -= 1
        member_of[i] = j
        counts[j] = 1
        own = np.minimum(own, _sqdist_raw(x, x[i : i + 1])[:, 0])
        own[i] = 0.0


def cluster_tokens(window: np.ndarray, n: int, iters: int = DEFAULT_ITERS):
    """Cluster one M x L window into ``n`` tokens; see :func:`cluster_windows`."""
    c, member_of, counts = cluster_windows(np.asarray(window)[None], n, iters)
    return c[0], member_of[0], counts[0]


def cluster_frame(g: TokenGrid, n: int, iters: int = DEFAULT_ITERS) -> ClusteredState:
    centroids, member_of, counts = cluster_windows(g.tokens, n, iters)
    side = _isqrt_exact(n) or 0
    return ClusteredState(g.spec, centroids, member_of, counts, side)


def reconstruct(s: ClusteredState) -> TokenGrid:
    """Copy every cluster token back to each position that formed it."""
    tokens = np.take_along_axis(s.tokens, s.member_of[..., None], axis=1)
    return TokenGrid(s.spec, tokens)
