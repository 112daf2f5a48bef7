"""Single-resolution stack of window-attention blocks with per-block hooks.

The token grid is tiled into non-overlapping windows and every block attends
within a window only. Callers may swap the token set (cluster it, refine it)
right before any block runs.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .numerics import Rng, gelu, layernorm, matmul, softmax_rows

MLP_RATIO = 4


@dataclass(frozen=True)
class GridSpec:
    height: int = 48
    width: int = 48
    window: int = 12
    channels: int = 64

    def __post_init__(self):
        if min(self.height, self.width, self.window, self.channels) < 1:
            raise ConfigError(f"grid dimensions must be positive: {self}")
        if self.height % self.window or self.width % self.window:
            raise ShapeError(
                f"{self.height}x{self.width} grid is not divisible by window {self.window}"
            )

    @property
    def tokens_per_window(self) -> int:
        return self.window * self.window

    @property
    def windows_per_row(self) -> int:
        return self.width // self.window

    @property
    def num_windows(self) -> int:
        return (self.height // self.window) * self.windows_per_row

    # short names
    M = tokens_per_window
    K = num_windows


@dataclass(frozen=True)
class TokenGrid:
    spec: GridSpec
    tokens: np.ndarray  # K x M x L

    @property
    def window_origin(self) -> list[tuple[int, int]]:
        w, per_row = self.spec.window, self.spec.windows_per_row
        return [((k // per_row) * w, (k % per_row) * w) for k in range(self.spec.num_windows)]


def partition_windows(raster: np.ndarray, window: int) -> TokenGrid:
    """Tile an H x W x L raster into windows, row-major both across and within windows."""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3:
        raise ShapeError(f"expected an H x W x L raster, got shape {raster.shape}")
    h, w, l = raster.shape
    spec = GridSpec(h, w, window, l)
    tiles = raster.reshape(h // window, window, w // window, window, l)
    tokens = tiles.transpose(0, 2, 1, 3, 4).reshape(spec.num_windows, window * window, l)
    return TokenGrid(spec, np.ascontiguousarray(tokens))


def merge_windows(g: TokenGrid) -> np.ndarray:
    s = g.spec
    tiles = g.tokens.reshape(s.height // s.window, s.width // s.window, s.window, s.window, s.channels)
    return np.ascontiguousarray(tiles.transpose(0, 2, 1, 3, 4).reshape(s.height, s.width, s.channels))


@dataclass
class BlockWeights:
    qkv_w: np.ndarray
    qkv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    norm1_g: np.ndarray
    norm1_b: np.ndarray
    norm2_g: np.ndarray
    norm2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    # serialization order; also the order of BlockWeights fields
    FIELDS = (
        "qkv_w", "qkv_b", "proj_w", "proj_b",
        "norm1_g", "norm1_b", "norm2_g", "norm2_b",
        "fc1_w", "fc1_b", "fc2_w", "fc2_b",
    )

    @staticmethod
    def shapes(channels: int) -> dict[str, tuple[int, ...]]:
        L, H = channels, MLP_RATIO * channels
        return {
            "qkv_w": (L, 3 * L), "qkv_b": (3 * L,),
            "proj_w": (L, L), "proj_b": (L,),
            "norm1_g": (L,), "norm1_b": (L,), "norm2_g": (L,), "norm2_b": (L,),
            "fc1_w": (L, H), "fc1_b": (H,),
            "fc2_w": (H, L), "fc2_b": (L,),
        }

    @classmethod
    def zeros(cls, channels: int) -> "BlockWeights":
        arrays = {name: np.zeros(shape) for name, shape in cls.shapes(channels).items()}
        arrays["norm1_g"][:] = 1.0
        arrays["norm2_g"][:] = 1.0
        return cls(**arrays)

    def equals(self, other: "BlockWeights") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)


@dataclass
class StageModel:
    spec: GridSpec
    heads: int
    blocks: list[BlockWeights] = field(default_factory=list)

    def __post_init__(self):
        if self.heads < 1 or self.spec.channels % self.heads:
            raise ConfigError(f"{self.spec.channels} channels do not split into {self.heads} heads")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def equals(self, other: "StageModel") -> bool:
        return (
            self.spec == other.spec
            and self.heads == other.heads
            and self.num_blocks == other.num_blocks
            and all(a.equals(b) for a, b in zip(self.blocks, other.blocks))
        )


def init_weights(seed: int, spec: GridSpec = GridSpec(), blocks: int = 12, heads: int = 4) -> StageModel:
    """Projections ~ U(-1/sqrt(L), 1/sqrt(L)) drawn block by block in field order;
    biases 0 and layer-norm affines (1, 0)."""
    rng = Rng(seed)
    bound = 1.0 / math.sqrt(spec.channels)
    shapes = BlockWeights.shapes(spec.channels)
    out = []
    for _ in range(blocks):
        w = BlockWeights.zeros(spec.channels)
        for name in ("qkv_w", "proj_w", "fc1_w", "fc2_w"):
            shape = shapes[name]
            setattr(w, name, rng.uniform(math.prod(shape), -bound, bound).reshape(shape))
        out.append(w)
    return StageModel(spec, heads, out)


def block_forward(x: np.ndarray, w: BlockWeights, heads: int) -> np.ndarray:
    """One pre-norm W-MSA block over K x t x L tokens, attending within each window.

    The token count t is whatever the windows currently hold (M or N), which
    is where clustering saves work.
    """
    K, t, L = x.shape
    if w.proj_w.shape[0] != L:
        raise ShapeError(f"block expects {w.proj_w.shape[0]} channels, tokens carry {L}")
    dh = L // heads

    h = layernorm(x, w.norm1_g, w.norm1_b)
    qkv = matmul(h.reshape(K * t, L), w.qkv_w) + w.qkv_b
    qkv = qkv.reshape(K, t, 3, heads, dh).transpose(2, 0, 3, 1, 4)  # 3, K, heads, t, dh
    q, k, v = qkv[0], qkv[1], qkv[2]
    attn = softmax_rows(matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)))
    ctx = matmul(attn, v).transpose(0, 2, 1, 3).reshape(K * t, L)
    x = x + (matmul(ctx, w.proj_w) + w.proj_b).reshape(K, t, L)

    h = layernorm(x, w.norm2_g, w.norm2_b).reshape(K * t, L)
    h = gelu(matmul(h, w.fc1_w) + w.fc1_b)
    return x + (matmul(h, w.fc2_w) + w.fc2_b).reshape(K, t, L)


# A hook gets the current window tokens (TokenGrid or ClusteredState) and
# returns the replacement. Imported lazily to avoid a cycle with clustering.
Hook = Callable[[object], object]


def stage_forward(model: StageModel, raster: np.ndarray, hooks: Mapping[int, Hook] | None = None) -> np.ndarray:
    """Run every block in order, calling ``hooks[i]`` right before block ``i``.

    Clustered tokens are expanded back to the full grid after the last block.
    """
    from .clustering import ClusteredState, reconstruct

    hooks = dict(hooks or {})
    bad = [i for i in hooks if not 0 <= i < model.num_blocks]
    if bad:
        raise ConfigError(f"hook at block {bad[0]} outside 0..{model.num_blocks - 1}")

    raster = np.asarray(raster, dtype=np.float64)
    if raster.shape != (model.spec.height, model.spec.width, model.spec.channels):
        raise ShapeError(
            f"frame of shape {raster.shape} does not match model grid "
            f"{model.spec.height}x{model.spec.width}x{model.spec.channels}"
        )
    x: Union[TokenGrid, ClusteredState] = partition_windows(raster, model.spec.window)
    for i, block in enumerate(model.blocks):
        if i in hooks:
            x = hooks[i](x)
        tokens = x.tokens
        # fixed-count window constraint
        assert tokens.ndim == 3 and tokens.shape[0] == model.spec.num_windows
        x = replace(x, tokens=block_forward(tokens, block, model.heads))
    if isinstance(x, ClusteredState):
        x = reconstruct(x)
    return merge_windows(x)


# ---------------------------------------------------------------- weight files

MAGIC = b"TCAW"
VERSION = 1
_HEADER = struct.Struct("<4sI6I")


def save_weights(model: StageModel, path: Union[str, Path]) -> None:
    s = model.spec
    parts = [_HEADER.pack(MAGIC, VERSION, s.height, s.width, s.window, s.channels, model.num_blocks, model.heads)]
    for block in model.blocks:
        for name in BlockWeights.FIELDS:
            parts.append(np.ascontiguousarray(getattr(block, name), dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: Union[str, Path]) -> StageModel:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header ({len(data)} of {_HEADER.size} bytes)", len(data))
    _, version, h, w, win, l, nblocks, heads = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    try:
        spec = GridSpec(h, w, win, l)
        if heads < 1 or l % heads:
            raise ConfigError(f"{l} channels do not split into {heads} heads")
    except (ConfigError, ShapeError) as exc:
        raise FormatError(f"inconsistent header: {exc}", 8) from exc

    offset = _HEADER.size
    shapes = BlockWeights.shapes(l)
    blocks = []
    for _ in range(nblocks):
        arrays = {}
        for name in BlockWeights.FIELDS:
            shape = shapes[name]
            nbytes = 8 * math.prod(shape)
            if offset + nbytes > len(data):
                raise FormatError(f"truncated while reading {name} ({len(data) - offset} of {nbytes} bytes left)", offset)
            arrays[name] = np.frombuffer(data, dtype="<f8", count=math.prod(shape), offset=offset).reshape(shape).astype(np.float64)
            offset += nbytes
        blocks.append(BlockWeights(**arrays))
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after {nblocks} blocks", offset)
    return StageModel(spec, heads, blocks)
