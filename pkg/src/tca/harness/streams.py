"""Synthetic token-feature video for desk-scale streaming runs.

Frames are H x W x L rasters built from a per-pixel class label map: every
class has a fixed random embedding, plus a noise field. The pattern (labels,
embeddings and noise together) moves with the configured motion, so a
drifting stream is an exact toroidal shift of its first frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..backbone import GridSpec
from ..errors import ConfigError
from ..numerics import Rng


@dataclass(frozen=True)
class SyntheticStream:
    spec: GridSpec = GridSpec()
    frames: int = 64
    motion: str = "drift"          # static | drift | bounce
    velocity: tuple[int, int] = (1, 1)  # (dx, dy) tokens per frame
    pattern: str = "blobs"         # blobs | stripes
    count: int = 6                 # blobs
    radius: float = 7.0            # blobs
    period: int = 8                # stripes
    classes: int = 4               # stripe classes; blobs use count + 1 (background)
    noise_sigma: float = 0.3
    seed: int = 0


def _blob_layout(cfg: SyntheticStream, rng: Rng):
    h, w = cfg.spec.height, cfg.spec.width
    centers = np.stack([rng.uniform(cfg.count, 0, h), rng.uniform(cfg.count, 0, w)], axis=1)
    radii = cfg.radius * (0.6 + 0.8 * rng.uniform(cfg.count))
    return centers, radii


def _render_blobs(shape, centers, radii, wrap: bool) -> np.ndarray:
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int64)
    for b, ((cy, cx), r) in enumerate(zip(centers, radii)):
        dy, dx = rows - cy, cols - cx
        if wrap:
            dy = (dy + h / 2) % h - h / 2
            dx = (dx + w / 2) % w - w / 2
        labels[dy * dy + dx * dx <= r * r] = b + 1
    return labels


def _features(labels, embeddings, noise):
    return embeddings[labels] + noise


def gen_stream(cfg: SyntheticStream) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(raster H x W x L, labels H x W)`` one frame at a time."""
    if cfg.motion not in ("static", "drift", "bounce"):
        raise ConfigError(f"unknown motion {cfg.motion!r}")
    if cfg.pattern not in ("blobs", "stripes"):
        raise ConfigError(f"unknown pattern {cfg.pattern!r}")
    h, w, L = cfg.spec.height, cfg.spec.width, cfg.spec.channels
    rng = Rng(cfg.seed)
    n_classes = cfg.count + 1 if cfg.pattern == "blobs" else cfg.classes
    embeddings = rng.normal(n_classes * L).reshape(n_classes, L)
    noise = cfg.noise_sigma * rng.normal(h * w * L).reshape(h, w, L)

    if cfg.pattern == "stripes":
        labels0 = np.broadcast_to((np.arange(w) // cfg.period) % n_classes, (h, w)).copy()
        centers = radii = None
    else:
        centers, radii = _blob_layout(cfg, rng)
        labels0 = _render_blobs((h, w), centers, radii, wrap=True)
    frame0 = _features(labels0, embeddings, noise)

    dx, dy = cfg.velocity
    if cfg.motion == "bounce" and centers is not None:
        angles = 2 * math.pi * rng.uniform(cfg.count)
        speed = math.hypot(dx, dy)
        vel = speed * np.stack([np.sin(angles), np.cos(angles)], axis=1)

    for t in range(cfg.frames):
        if cfg.motion == "static" or t == 0:
            yield frame0.copy(), labels0.copy()
        elif cfg.motion == "drift" or centers is None:
            # bounce on stripes degenerates to drift
            yield np.roll(frame0, (dy * t, dx * t), axis=(0, 1)), np.roll(labels0, (dy * t, dx * t), axis=(0, 1))
        else:
            pos = centers + vel * t
            # reflect off the borders: fold positions into [0, size]
            size = np.array([h - 1, w - 1], dtype=np.float64)
            pos = np.abs((pos + size) % (2 * size) - size)
            labels = _render_blobs((h, w), pos, radii, wrap=False)
            yield _features(labels, embeddings, noise), labels
