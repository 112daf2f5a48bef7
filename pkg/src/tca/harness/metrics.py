from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError, TcaError
from ..numerics import Rng, layernorm


def fidelity(compressed: np.ndarray, baseline: np.ndarray) -> float:
    """Mean per-position cosine similarity; positions with a zero vector are skipped."""
    a = np.asarray(compressed, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"fidelity: shapes differ {a.shape} vs {b.shape}")
    a = a.reshape(-1, a.shape[-1])
    b = b.reshape(-1, b.shape[-1])
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        return float("nan")
    cos = np.einsum("pl,pl->p", a[ok], b[ok]) / (na[ok] * nb[ok])
    return float(np.clip(cos, -1.0, 1.0).mean())


def probe_weights(channels: int, classes: int, seed: int) -> np.ndarray:
    return Rng(seed).normal(channels * classes).reshape(channels, classes)


def probe_predict(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Argmax class of a fixed linear probe applied to layer-normalized features."""
    feats = np.asarray(features, dtype=np.float64)
    L = feats.shape[-1]
    normed = layernorm(feats.reshape(-1, L), np.ones(L), np.zeros(L))
    return np.argmax(normed @ weights, axis=-1).reshape(feats.shape[:-1])


def miou(pred: np.ndarray, truth: np.ndarray) -> float:
    present = np.unique(truth)
    if present.size == 0:
        raise TcaError("mIoU undefined: no classes present")
    ious = []
    for c in present:
        p, t = pred == c, truth == c
        ious.append(np.logical_and(p, t).sum() / np.logical_or(p, t).sum())
    return float(np.mean(ious))


def mask_agreement(
    compressed: np.ndarray,
    baseline: np.ndarray,
    probe_seed: int = 1234,
    classes: int = 8,
    weights: np.ndarray | None = None,
) -> float:
    """mIoU of probe predictions on compressed features against those on the baseline."""
    if np.shape(compressed) != np.shape(baseline):
        raise ShapeError(f"mask_agreement: shapes differ {np.shape(compressed)} vs {np.shape(baseline)}")
    if weights is None:
        weights = probe_weights(np.shape(baseline)[-1], classes, probe_seed)
    return miou(probe_predict(compressed, weights), probe_predict(baseline, weights))


def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[bool]:
    """Flags the (speed, accuracy) points no other point beats on both axes.

    A point is dominated when another is >= on both and > on at least one.
    """
    pts = list(points)
    order = sorted(range(len(pts)), key=lambda i: (-pts[i][0], -pts[i][1]))
    flags = [False] * len(pts)
    best_acc = -np.inf
    prev = None
    for i in order:
        speed, acc = pts[i]
        if acc > best_acc:
            flags[i] = True
            best_acc = acc
        elif prev is not None and pts[prev] == pts[i] and flags[prev]:
            flags[i] = True  # exact duplicate of a frontier point
        prev = i
    return flags
