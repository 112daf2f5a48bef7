"""tca command line: run, sweep, gen-weights.

Every flag may also come from a JSON file given with ``--config`` (keys are
the flag names with dashes or underscores); flags on the command line win.
Exit codes: 0 ok, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..backbone import GridSpec, StageModel, init_weights, load_weights, save_weights
from ..errors import ConfigError, FormatError, ShapeError
from ..temporal import TcaConfig
from .runner import aggregate, canonical_method, run_stream
from .streams import SyntheticStream, gen_stream
from .sweep import run_sweep, write_frames_csv

log = logging.getLogger("tca")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

DEFAULTS = {
    "alpha": 0, "beta": 6, "fmax": 6, "d": 2, "clusters": 6, "refine": "auto",
    "method": "tca", "frames": 64, "grid": "48x48", "window": 12, "channels": 64,
    "blocks": 12, "heads": 4, "seed": 0, "weights": None, "out": "out",
    "iters": 5, "similarity": "l2", "motion": "drift", "velocity": "1,1",
    "pattern": "blobs", "noise": 0.3, "stream_seed": None, "repeats": 1,
    "alphas": "0..10", "clusters_list": "2,4,5,6,7,8", "methods": "cluster,tca",
    "svg": False,
}


def parse_int_list(text: str) -> list[int]:
    """``"0..10"`` (inclusive range) or ``"2,4,5"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse integer list {text!r}") from None


def parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = str(text).lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"grid must look like HxW, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--grid", help="token grid HxW (default 48x48)")
    p.add_argument("--window", type=int, help="window side in tokens (default 12)")
    p.add_argument("--channels", type=int, help="token channels L (default 64)")
    p.add_argument("--blocks", type=int, help="blocks in the stage (default 12)")
    p.add_argument("--heads", type=int, help="attention heads (default 4)")
    p.add_argument("--seed", type=int, help="weight seed (default 0)")
    p.add_argument("--weights", help="load a .tcaw weight file instead of seeding")
    p.add_argument("--out", help="output directory / file")


def _add_stream(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, help="stream length (default 64)")
    p.add_argument("--motion", choices=["static", "drift", "bounce"])
    p.add_argument("--velocity", help="dx,dy tokens per frame (default 1,1)")
    p.add_argument("--pattern", choices=["blobs", "stripes"])
    p.add_argument("--noise", type=float, help="feature noise sigma (default 0.3)")
    p.add_argument("--stream-seed", type=int, help="stream seed (default: --seed)")
    p.add_argument("--beta", type=int)
    p.add_argument("--fmax", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--refine", choices=["auto", "cga", "rbs", "acr"])
    p.add_argument("--similarity", choices=["l2", "cosine", "dot"])
    p.add_argument("--iters", type=int, help="Lloyd iterations per clustering (default 5)")
    p.add_argument("--repeats", type=int, help="time each frame this many times, report the median")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="stream one configuration and write frames.csv")
    _add_common(run)
    _add_stream(run)
    run.add_argument("--alpha", type=int)
    run.add_argument("--clusters", type=int, help="cluster side S, N = S*S (default 6)")
    run.add_argument("--method", choices=["baseline", "cluster", "tca"])

    sweep = sub.add_parser("sweep", help="cross-product sweep, writes sweep.csv/json")
    _add_common(sweep)
    _add_stream(sweep)
    sweep.add_argument("--alphas", help="e.g. 0..10 or 0,3,6")
    sweep.add_argument("--clusters", dest="clusters_list", help="cluster sides, e.g. 2,4,5,6,7,8")
    sweep.add_argument("--methods", help="comma list of baseline,cluster,tca")
    sweep.add_argument("--svg", action="store_true", default=None, help="also write pareto.svg")

    gen = sub.add_parser("gen-weights", help="write seeded weights to a .tcaw file")
    _add_common(gen)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < JSON config < command-line flags."""
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    for key, value in vars(args).items():
        if value is not None and key in values:
            values[key] = value
    return values


def _model(v: dict) -> StageModel:
    if v["weights"]:
        return load_weights(v["weights"])
    h, w = parse_grid(v["grid"])
    spec = GridSpec(h, w, int(v["window"]), int(v["channels"]))
    return init_weights(int(v["seed"]), spec, int(v["blocks"]), int(v["heads"]))


def _stream(v: dict, model: StageModel) -> SyntheticStream:
    vel = parse_int_list(v["velocity"])
    if len(vel) != 2:
        raise ConfigError(f"velocity needs dx,dy, got {v['velocity']!r}")
    seed = v["stream_seed"] if v["stream_seed"] is not None else v["seed"]
    return SyntheticStream(
        spec=model.spec, frames=int(v["frames"]), motion=v["motion"], velocity=tuple(vel),
        pattern=v["pattern"], noise_sigma=float(v["noise"]), seed=int(seed),
    )


def _tca_config(v: dict, **over) -> TcaConfig:
    cfg = TcaConfig(
        alpha=int(v["alpha"]), beta=int(v["beta"]), f_max=int(v["fmax"]), d=int(v["d"]),
        cluster_side=int(v["clusters"]), refine_mode=v["refine"], similarity=v["similarity"],
        cluster_iters=int(v["iters"]),
    )
    return replace(cfg, **over)


def cmd_run(v: dict) -> int:
    model = _model(v)
    cfg = _tca_config(v)
    method = canonical_method(v["method"])
    if method != "baseline":
        cfg.validate(model.num_blocks, model.spec.tokens_per_window)
    stream = _stream(v, model)
    reports = run_stream(model, gen_stream(stream), cfg, method, repeats=int(v["repeats"]))
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_frames_csv(reports, out / "frames.csv")
    summary = {"method": method, "config": cfg.__dict__, **aggregate(reports)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"{method}: {summary['fps']:.2f} FPS, fidelity {summary['mean_fidelity']:.4f}, "
          f"mIoU {summary['mean_miou']:.4f} -> {out / 'frames.csv'}")
    return EXIT_OK


def cmd_sweep(v: dict) -> int:
    model = _model(v)
    base = _tca_config(v)
    result = run_sweep(
        model, _stream(v, model),
        alphas=parse_int_list(v["alphas"]),
        cluster_sides=parse_int_list(v["clusters_list"]),
        methods=[m.strip() for m in str(v["methods"]).split(",") if m.strip()],
        out=v["out"], base_cfg=base, svg=bool(v["svg"]), repeats=int(v["repeats"]),
    )
    for row in result.frontier():
        print(f"frontier: {row.method:12s} S={row.cluster_side} alpha={row.alpha} "
              f"{row.fps:.2f} FPS mIoU {row.mean_miou:.4f}")
    return EXIT_OK


def cmd_gen_weights(v: dict) -> int:
    out = v["out"] if v["out"] != DEFAULTS["out"] else "model.tcaw"
    model = _model({**v, "weights": None})
    save_weights(model, out)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-weights": cmd_gen_weights}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](resolve(args))
    except (ConfigError, ShapeError, FormatError) as exc:
        print(f"tca: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tca: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
