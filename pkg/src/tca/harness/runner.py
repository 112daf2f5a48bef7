"""Online (batch size 1) stream runner producing one FrameReport per frame."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from ..backbone import StageModel, stage_forward
from ..clustering import cluster_frame
from ..errors import ConfigError
from ..numerics import FlopCounter
from ..temporal import StreamState, TcaConfig, is_keyframe, process_frame
from .flops import METHODS, flops_stage
from .metrics import fidelity, mask_agreement, probe_weights

METHOD_ALIASES = {"baseline": "baseline", "cluster": "cluster-only", "tca": "cluster+tca"}
WARMUP_FRAMES = 3


def canonical_method(name: str) -> str:
    name = METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of {sorted(METHOD_ALIASES)}")
    return name


@dataclass
class FrameReport:
    frame_idx: int
    is_keyframe: bool
    flops_analytic: int
    flops_counted: int
    wall_ns: int
    fidelity_cos: float
    mask_agreement_miou: float

    COLUMNS = (
        "frame_idx", "is_keyframe", "flops_analytic", "flops_counted",
        "wall_ns", "fidelity_cos", "mask_agreement_miou",
    )


class Pipeline:
    """Holds per-stream state for one method and runs frames through it."""

    def __init__(self, model: StageModel, cfg: TcaConfig, method: str):
        self.model = model
        self.cfg = cfg
        self.method = canonical_method(method)
        if self.method != "baseline":
            cfg.validate(model.num_blocks, model.spec.tokens_per_window)
        self.state = StreamState(cfg)

    def keyframe_next(self) -> bool:
        return self.method == "cluster+tca" and is_keyframe(self.state.frame_idx, self.cfg.f_max)

    def step(self, raster: np.ndarray) -> np.ndarray:
        if self.method == "cluster+tca":
            out, self.state = process_frame(self.state, self.model, raster)
            return out
        hooks = {}
        if self.method == "cluster-only" and self.cfg.reduces(self.model.spec.tokens_per_window):
            n, iters = self.cfg.num_clusters, self.cfg.cluster_iters
            hooks = {self.cfg.alpha: lambda x: cluster_frame(x, n, iters)}
        self.state = replace(self.state, frame_idx=self.state.frame_idx + 1)
        return stage_forward(self.model, raster, hooks)


def run_stream(
    model: StageModel,
    frames: Iterable[np.ndarray],
    cfg: TcaConfig,
    method: str = "cluster+tca",
    baseline: Sequence[np.ndarray] | None = None,
    probe_seed: int = 1234,
    classes: int = 8,
    repeats: int = 1,
    warmup: int = WARMUP_FRAMES,
) -> list[FrameReport]:
    """Run ``frames`` in order and compare each output against the full model.

    ``frames`` holds rasters (or ``(raster, labels)`` pairs as produced by
    :func:`gen_stream`). ``baseline`` may carry precomputed full-model features
    for the same frames. Wall-clock covers only the method's forward pass; with
    ``repeats > 1`` the median of that many runs is reported. The first
    ``warmup`` frames are run once untimed on a throwaway pipeline first.
    """
    rasters = [f[0] if isinstance(f, tuple) else f for f in frames]
    pipe = Pipeline(model, cfg, method)
    weights = probe_weights(model.spec.channels, classes, probe_seed)

    scratch = Pipeline(model, cfg, method)
    for raster in rasters[:warmup]:
        scratch.step(raster)

    reports = []
    for t, raster in enumerate(rasters):
        key = pipe.keyframe_next()
        times = []
        for r in range(repeats):
            trial = pipe if r == repeats - 1 else _clone(pipe)
            with FlopCounter() as counter:
                start = time.perf_counter_ns()
                out = trial.step(raster)
                times.append(time.perf_counter_ns() - start)
        ref = baseline[t] if baseline is not None else stage_forward(model, raster)
        reports.append(
            FrameReport(
                frame_idx=t,
                is_keyframe=key,
                flops_analytic=flops_stage(model.spec, cfg, key, model.num_blocks, pipe.method),
                flops_counted=counter.count,
                wall_ns=int(statistics.median(times)),
                fidelity_cos=fidelity(out, ref),
                mask_agreement_miou=mask_agreement(out, ref, weights=weights),
            )
        )
    return reports


def _clone(pipe: Pipeline) -> Pipeline:
    twin = Pipeline.__new__(Pipeline)
    twin.__dict__.update(pipe.__dict__)
    return twin


def aggregate(reports: Sequence[FrameReport]) -> dict:
    wall = float(np.mean([r.wall_ns for r in reports]))
    return {
        "frames": len(reports),
        "mean_flops": float(np.mean([r.flops_analytic for r in reports])),
        "mean_wall_ns": wall,
        "fps": 1e9 / wall if wall > 0 else float("inf"),
        "mean_fidelity": float(np.mean([r.fidelity_cos for r in reports])),
        "mean_miou": float(np.mean([r.mask_agreement_miou for r in reports])),
    }
