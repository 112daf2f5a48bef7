"""(cluster_side, alpha, method) cross-product sweep with CSV/JSON/SVG output."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from ..backbone import StageModel, stage_forward
from ..errors import ConfigError
from ..temporal import TcaConfig
from .metrics import pareto_frontier
from .runner import FrameReport, aggregate, canonical_method, run_stream
from .streams import SyntheticStream, gen_stream

SWEEP_COLUMNS = (
    "cluster_side", "alpha", "method", "frames",
    "mean_flops", "mean_wall_ns", "fps", "mean_fidelity", "mean_miou",
)
# columns that depend on the clock; everything else is deterministic
TIMING_COLUMNS = ("mean_wall_ns", "fps")


@dataclass
class SweepRow:
    cluster_side: int
    alpha: int | None
    method: str
    frames: int
    mean_flops: float
    mean_wall_ns: float
    fps: float
    mean_fidelity: float
    mean_miou: float
    on_frontier: bool = False


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def frontier(self) -> list[SweepRow]:
        return [r for r in self.rows if r.on_frontier]

    def mark_frontier(self) -> None:
        flags = pareto_frontier([(r.fps, r.mean_miou) for r in self.rows])
        for row, flag in zip(self.rows, flags):
            row.on_frontier = flag


def write_frames_csv(reports: Sequence[FrameReport], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FrameReport.COLUMNS)
        for r in reports:
            w.writerow([
                r.frame_idx, int(r.is_keyframe), r.flops_analytic, r.flops_counted,
                r.wall_ns, f"{r.fidelity_cos:.12g}", f"{r.mask_agreement_miou:.12g}",
            ])


def _row_cells(row: SweepRow) -> list:
    d = asdict(row)
    cells = []
    for col in SWEEP_COLUMNS:
        v = d[col]
        if v is None:
            cells.append("")
        elif isinstance(v, float):
            cells.append(f"{v:.12g}")
        else:
            cells.append(v)
    return cells


def run_sweep(
    model: StageModel,
    stream: SyntheticStream,
    alphas: Sequence[int],
    cluster_sides: Sequence[int],
    methods: Sequence[str],
    out: str | Path | None = None,
    base_cfg: TcaConfig = TcaConfig(),
    svg: bool = False,
    **run_kwargs,
) -> SweepResult:
    """Evaluate every (method, alpha, cluster_side) on one stream.

    Baseline appears once, as cluster_side = window side with no alpha.
    Writes ``sweep.csv`` and ``sweep.json`` (and ``pareto.svg``) under ``out``.
    """
    if not alphas:
        raise ConfigError("sweep needs at least one alpha")
    if not cluster_sides:
        raise ConfigError("sweep needs at least one cluster side")
    methods = [canonical_method(m) for m in methods]
    if not methods:
        raise ConfigError("sweep needs at least one method")

    # validate everything before spending time on the stream
    M = model.spec.tokens_per_window
    configs = []
    for method in methods:
        if method == "baseline":
            configs.append((method, None))
            continue
        for alpha in alphas:
            for side in cluster_sides:
                cfg = replace(base_cfg, alpha=alpha, cluster_side=side)
                cfg.validate(model.num_blocks, M)
                configs.append((method, cfg))

    frames = [raster for raster, _ in gen_stream(stream)]
    baseline = [stage_forward(model, f) for f in frames]

    result = SweepResult()
    for method, cfg in configs:
        reports = run_stream(model, frames, cfg or base_cfg, method, baseline=baseline, **run_kwargs)
        agg = aggregate(reports)
        if cfg is None:
            side, alpha = model.spec.window, None
        else:
            side, alpha = cfg.cluster_side, cfg.alpha
        result.rows.append(SweepRow(side, alpha, method, **agg))
    result.mark_frontier()

    if out is not None:
        write_sweep(result, Path(out), svg=svg)
    return result


def write_sweep(result: SweepResult, out: Path, svg: bool = False) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for row in result.rows:
                w.writerow(_row_cells(row))
        (out / "sweep.json").write_text(json.dumps([asdict(r) for r in result.rows], indent=2))
        if svg:
            plot_pareto(result, out / "pareto.svg")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write sweep output: {exc.strerror}", str(exc.filename or out)) from exc


def plot_pareto(result: SweepResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in dict.fromkeys(r.method for r in result.rows):
        rows = [r for r in result.rows if r.method == method]
        ax.scatter([r.fps for r in rows], [r.mean_miou for r in rows], label=method, s=18)
    front = sorted(result.frontier(), key=lambda r: r.fps)
    ax.plot([r.fps for r in front], [r.mean_miou for r in front], "k--", lw=1, label="Pareto frontier")
    ax.set_xlabel("FPS")
    ax.set_ylabel("mask agreement (mIoU)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
