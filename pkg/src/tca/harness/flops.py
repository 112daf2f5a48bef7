"""Closed-form multiply-add count for one frame through the stage.

Kept separate from the instrumented kernels on purpose: the runner compares
the two and they must agree exactly.
"""
from __future__ import annotations

from ..backbone import MLP_RATIO, GridSpec
from ..temporal import TcaConfig

METHODS = ("baseline", "cluster-only", "cluster+tca")


def block_flops(tokens: int, channels: int) -> int:
    """Multiply-adds of one block on one window holding ``tokens`` tokens."""
    t, L = tokens, channels
    qkv = 3 * t * L * L
    scores = t * t * L
    weighted = t * t * L
    proj = t * L * L
    mlp = 2 * MLP_RATIO * t * L * L
    return qkv + scores + weighted + proj + mlp


def flops_stage(
    spec: GridSpec,
    cfg: TcaConfig,
    is_keyframe: bool,
    num_blocks: int = 12,
    method: str = "cluster+tca",
) -> int:
    K, M, L = spec.num_windows, spec.tokens_per_window, spec.channels
    N = cfg.num_clusters
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "baseline" or N >= M:
        return K * num_blocks * block_flops(M, L)

    ref_at = cfg.ref_block(num_blocks)
    if method == "cluster-only":
        cluster_at, assign = cfg.alpha, 0
    elif is_keyframe:
        cluster_at, assign = ref_at, 0
    else:
        cluster_at, assign = cfg.alpha, K * M * N * L

    full = cluster_at * block_flops(M, L)
    reduced = (num_blocks - cluster_at) * block_flops(N, L)
    clustering = cfg.cluster_iters * M * N * L
    return K * (full + reduced + clustering) + assign
