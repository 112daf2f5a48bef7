"""Temporal Cluster Assignment.

Keyframes run unclustered up to the reference block, stash their tokens in a
reference bank and only then cluster. Other frames cluster early at block
``alpha``; at the reference block every banked token is matched to its
nearest cluster token in the same window and the clusters are refined from
their matched references.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .backbone import StageModel, TokenGrid, stage_forward
from .clustering import DEFAULT_ITERS, ClusteredState, cluster_frame
from .errors import ConfigError, ShapeError, StateError
from .numerics import argmin_row, matmul, pairwise_sqdist

RefineMode = Literal["auto", "cga", "rbs", "acr"]
Similarity = Literal["l2", "cosine", "dot"]


@dataclass(frozen=True)
class TcaConfig:
    alpha: int = 0
    beta: int = 6
    f_max: int = 6
    d: int = 2
    cluster_side: int = 6
    refine_mode: RefineMode = "auto"
    similarity: Similarity = "l2"
    cluster_iters: int = DEFAULT_ITERS

    @property
    def num_clusters(self) -> int:
        return self.cluster_side * self.cluster_side

    def ref_block(self, num_blocks: int) -> int:
        """Block where references are captured and refinement runs.

        ``alpha + beta`` clamped to the last block, so the desk-scale stage can
        still sweep alpha over the full 0..10 range.
        """
        return min(self.alpha + self.beta, num_blocks - 1)

    def validate(self, num_blocks: int, tokens_per_window: int) -> None:
        if not 0 <= self.alpha < num_blocks:
            raise ConfigError(f"alpha={self.alpha} outside blocks 0..{num_blocks - 1}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.f_max < 1:
            raise ConfigError(f"f_max must be >= 1, got {self.f_max}")
        if self.cluster_side < 1 or self.num_clusters > tokens_per_window:
            raise ConfigError(
                f"{self.cluster_side}x{self.cluster_side} clusters do not fit "
                f"{tokens_per_window} tokens per window"
            )
        if self.refine_mode not in ("auto", "cga", "rbs", "acr"):
            raise ConfigError(f"unknown refine mode {self.refine_mode!r}")
        if self.similarity not in ("l2", "cosine", "dot"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        if self.cluster_iters < 0:
            raise ConfigError(f"cluster_iters must be >= 0, got {self.cluster_iters}")

    def reduces(self, tokens_per_window: int) -> bool:
        # N == M leaves nothing to merge; the pipeline then runs unclustered
        return self.num_clusters < tokens_per_window


@dataclass(frozen=True)
class ReferenceBank:
    tokens: np.ndarray | None = None  # K x M x L
    captured_at: int = -1
    valid: bool = False


@dataclass(frozen=True)
class Assignment:
    jstar: np.ndarray  # K x M
    num_clusters: int

    @property
    def group_sizes(self) -> np.ndarray:
        """K x N array of |R_j|."""
        K = self.jstar.shape[0]
        flat = (np.arange(K)[:, None] * self.num_clusters + self.jstar).ravel()
        return np.bincount(flat, minlength=K * self.num_clusters).reshape(K, self.num_clusters)

    @property
    def groups(self) -> list[list[np.ndarray]]:
        return [
            [np.flatnonzero(row == j) for j in range(self.num_clusters)]
            for row in self.jstar
        ]


@dataclass(frozen=True)
class StreamState:
    config: TcaConfig
    frame_idx: int = 0
    bank: ReferenceBank = field(default_factory=ReferenceBank)


def assign_reference(bank: ReferenceBank, s: ClusteredState, similarity: Similarity = "l2") -> Assignment:
    """Match each reference token to the nearest cluster token of its own window."""
    if not bank.valid or bank.tokens is None:
        raise StateError("reference bank is empty; no keyframe has been processed")
    ref, clus = bank.tokens, s.tokens
    if ref.shape[0] != clus.shape[0] or ref.shape[2] != clus.shape[2]:
        raise ShapeError(f"reference bank {ref.shape} does not match clustered tokens {clus.shape}")
    if similarity == "l2":
        jstar = argmin_row(pairwise_sqdist(ref, clus))
    elif similarity == "dot":
        jstar = argmin_row(-matmul(ref, clus.transpose(0, 2, 1)))
    elif similarity == "cosine":
        def unit(a):
            norm = np.linalg.norm(a, axis=-1, keepdims=True)
            return a / np.where(norm > 0, norm, 1.0)
        jstar = argmin_row(-matmul(unit(ref), unit(clus).transpose(0, 2, 1)))
    else:
        raise ConfigError(f"unknown similarity {similarity!r}")
    return Assignment(jstar, s.num_clusters)


def _ref_sums(s: ClusteredState, bank: ReferenceBank, a: Assignment, start: np.ndarray) -> np.ndarray:
    # accumulate references onto `start` in ascending reference index
    out = start.copy()
    K, M = a.jstar.shape
    np.add.at(out, (np.repeat(np.arange(K), M), a.jstar.ravel()), bank.tokens.reshape(K * M, -1))
    return out


def refine_cga(s: ClusteredState, bank: ReferenceBank, a: Assignment) -> ClusteredState:
    """Average each cluster token with all references assigned to it."""
    sizes = a.group_sizes[..., None]
    total = _ref_sums(s, bank, a, s.tokens)
    refined = np.where(sizes > 0, total / (1 + sizes), s.tokens)
    return replace(s, tokens=refined)


def refine_rbs(s: ClusteredState, bank: ReferenceBank, a: Assignment) -> ClusteredState:
    """Replace each matched cluster token by the mean of its references."""
    sizes = a.group_sizes[..., None]
    total = _ref_sums(s, bank, a, np.zeros_like(s.tokens))
    with np.errstate(invalid="ignore", divide="ignore"):
        refined = np.where(sizes > 0, total / sizes, s.tokens)
    return replace(s, tokens=refined)


def refine_acr(s: ClusteredState, bank: ReferenceBank, a: Assignment) -> ClusteredState:
    """Weighted mean of the cluster token (weight |C_j|) and its reference mean (weight |R_j|)."""
    sizes = a.group_sizes[..., None]
    members = s.member_count[..., None]
    total = _ref_sums(s, bank, a, np.zeros_like(s.tokens))
    with np.errstate(invalid="ignore", divide="ignore"):
        ref_mean = total / sizes
        refined = np.where(sizes > 0, (sizes * ref_mean + members * s.tokens) / (sizes + members), s.tokens)
    return replace(s, tokens=refined)


Refinement = Callable[[ClusteredState, ReferenceBank, Assignment], ClusteredState]

_BY_NAME: dict[str, Refinement] = {"cga": refine_cga, "rbs": refine_rbs, "acr": refine_acr}


def select_refinement(cfg: TcaConfig) -> Refinement:
    if cfg.refine_mode != "auto":
        return _BY_NAME[cfg.refine_mode]
    return refine_rbs if cfg.alpha <= cfg.d else refine_cga


def is_keyframe(frame_idx: int, f_max: int) -> bool:
    return frame_idx % f_max == 0


def make_hooks(state: StreamState, model: StageModel, bank_out: list | None = None) -> dict:
    """Block hooks for the next frame of ``state``.

    Keyframes get one hook at the reference block that stores the incoming
    tokens and then clusters them; the new bank is appended to ``bank_out``.
    Other frames cluster at ``alpha`` and refine at the reference block
    (both in one hook when the two coincide).
    """
    cfg = state.config
    M = model.spec.tokens_per_window
    cfg.validate(model.num_blocks, M)
    if not cfg.reduces(M):
        return {}
    ref_at = cfg.ref_block(model.num_blocks)
    n, iters = cfg.num_clusters, cfg.cluster_iters

    def cluster(x):
        return cluster_frame(x, n, iters)

    if is_keyframe(state.frame_idx, cfg.f_max):
        def store_then_cluster(x: TokenGrid):
            if bank_out is not None:
                bank_out.append(ReferenceBank(x.tokens.copy(), state.frame_idx, True))
            return cluster(x)

        return {ref_at: store_then_cluster}

    refine = select_refinement(cfg)

    def temporal_assign(x: ClusteredState):
        a = assign_reference(state.bank, x, cfg.similarity)
        return refine(x, state.bank, a)

    if ref_at == cfg.alpha:
        return {ref_at: lambda x: temporal_assign(cluster(x))}
    return {cfg.alpha: cluster, ref_at: temporal_assign}


def process_frame(state: StreamState, model: StageModel, raster: np.ndarray):
    """Run one frame through the stage; returns ``(features, next_state)``."""
    banks: list[ReferenceBank] = []
    hooks = make_hooks(state, model, banks)
    features = stage_forward(model, raster, hooks)
    bank = banks[-1] if banks else state.bank
    return features, replace(state, frame_idx=state.frame_idx + 1, bank=bank)
