"""Command-line interface.

Subcommands: gen, detect, benchmark, sweep, ablate. Every flag can also be
supplied through a YAML config file (--config); explicit flags win. Exit
codes: 0 all-benign/success, 1 usage error, 2 attack detected, 3 I/O failure.
The TEMPO_GUARD_SEED environment variable overrides the default seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import benchmark as bench
from .attacksim import AttackSpec, DENSE_BUDGET, SPARSE_BUDGET, ObjectPlacement, SceneSpec, generate_scene, inject
from .clustering import ClusterParams, DENSE_PRESET, SPARSE_PRESET
from .detector import DetectorConfig, PipelineConfig, detect
from .errors import InvalidArgumentError, TempoGuardError
from .frameio import load_frames, save_frames
from .sceneflow import SfeConfig

EXIT_BENIGN = 0
EXIT_USAGE = 1
EXIT_ATTACKED = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get("TEMPO_GUARD_SEED")
    return int(env) if env else 0


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file; flags override its keys")
    p.add_argument("--alpha", type=float, help="chamfer weight (default 1)")
    p.add_argument("--beta", type=float, help="coherence weight (default 2)")
    p.add_argument("--learning-rate", type=float, help="gradient-descent step size (default 0.0008)")
    p.add_argument("--iterations", type=int, help="optimization iterations per solve (default 30)")
    p.add_argument("--hidden-width", type=int, help="MLP hidden width (default 128)")
    p.add_argument("--num-layers", type=int, help="MLP linear layers (default 6)")
    p.add_argument("--pair-weight", type=float, help="constant coherence pair weight (default 1)")
    p.add_argument("--init-scale", type=float, help="hidden-layer init scale")
    p.add_argument("--preset", choices=["dense", "sparse"], help="DBSCAN preset (dense: 17/0.25, sparse: 9/0.75)")
    p.add_argument("--eps", type=float, help="DBSCAN distance threshold override")
    p.add_argument("--min-pts", type=int, help="DBSCAN count threshold override")
    p.add_argument("--flow-eps", type=float, help="DBSCAN eps for the flow coherence mask (default: detector eps)")
    p.add_argument("--flow-min-pts", type=int, help="DBSCAN min_pts for the flow coherence mask (default: detector min_pts)")
    p.add_argument("--threshold", type=float, help="decision threshold on the anomaly score (default 15)")
    p.add_argument("--history", type=int, help="history length L (default 10)")
    p.add_argument("--downsample-side", type=float, help="voxel downsampling side in meters (default 0.1)")
    p.add_argument("--propagation-side", type=float, help="flow propagation voxel side (default 1.0)")
    p.add_argument("--score-mode", choices=["point_count", "cluster_count"], help="anomaly score definition")
    p.add_argument("--seed", type=int, help="base seed (env TEMPO_GUARD_SEED overrides the default)")
    p.add_argument("--jobs", type=int, default=1, help="scenario-level parallelism")
    p.add_argument("--out", type=Path, help="output file path")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering next to the CSV")


def _merge_config(args: argparse.Namespace) -> dict:
    """Flags override YAML config keys; YAML keys use the flag spelling with underscores."""
    merged = {}
    if getattr(args, "config", None):
        try:
            loaded = yaml.safe_load(args.config.read_text())
        except OSError as exc:
            raise IOError(f"cannot read config: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise UsageError("config file must be a YAML mapping")
        merged.update(loaded or {})
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command", "func"):
            merged[key] = value
    return merged


def _get(cfg: dict, key: str, default):
    return cfg.get(key, default)


def _cluster_params(cfg: dict) -> ClusterParams:
    preset = DENSE_PRESET if _get(cfg, "preset", "dense") == "dense" else SPARSE_PRESET
    return ClusterParams(
        eps=_get(cfg, "eps", preset.eps),
        min_pts=_get(cfg, "min_pts", preset.min_pts),
    )


def _pipeline_config(cfg: dict) -> PipelineConfig:
    params = _cluster_params(cfg)
    flow_params = ClusterParams(
        eps=_get(cfg, "flow_eps", params.eps),
        min_pts=_get(cfg, "flow_min_pts", params.min_pts),
    )
    sfe = SfeConfig(
        alpha=_get(cfg, "alpha", 1.0),
        beta=_get(cfg, "beta", 2.0),
        learning_rate=_get(cfg, "learning_rate", 0.0008),
        iterations=_get(cfg, "iterations", 30),
        hidden_width=_get(cfg, "hidden_width", 128),
        num_layers=_get(cfg, "num_layers", 6),
        pair_weight=_get(cfg, "pair_weight", 1.0),
        cluster_params=flow_params,
        init_scale=_get(cfg, "init_scale", 1.8),
        seed=_get(cfg, "seed", _default_seed()),
    )
    return PipelineConfig(
        history_length=_get(cfg, "history", 10),
        downsample_side=_get(cfg, "downsample_side", 0.1),
        propagation_side=_get(cfg, "propagation_side", 1.0),
        sfe=sfe,
        detector=DetectorConfig(
            cluster_params=params,
            decision_threshold=_get(cfg, "threshold", 15.0),
            score_mode=_get(cfg, "score_mode", "point_count"),
        ),
    )


def _suite_from_args(cfg: dict, args) -> bench.SuiteConfig:
    if getattr(args, "suite", None):
        suite = bench.load_suite(args.suite)
    else:
        suite = bench.default_suite(getattr(args, "kind", None) or "dense")
    overrides = {}
    for flag, field in [
        ("n_benign", "n_benign"), ("n_poisoned", "n_poisoned"), ("seed", "seed_base"),
        ("history", "history_length"), ("threshold", "decision_threshold"),
        ("score_mode", "score_mode"), ("downsample_side", "downsample_side"),
        ("propagation_side", "propagation_side"), ("eps", "eps"), ("min_pts", "min_pts"),
        ("flow_eps", "flow_eps"), ("flow_min_pts", "flow_min_pts"),
        ("alpha", "alpha"), ("beta", "beta"), ("learning_rate", "learning_rate"),
        ("iterations", "iterations"), ("hidden_width", "hidden_width"),
        ("num_layers", "num_layers"), ("init_scale", "init_scale"),
    ]:
        if cfg.get(flag) is not None:
            overrides[field] = cfg[flag]
    if "TEMPO_GUARD_SEED" in os.environ and "seed_base" not in overrides:
        overrides["seed_base"] = int(os.environ["TEMPO_GUARD_SEED"])
    return replace(suite, **overrides) if overrides else suite


def _print_rates(fpr, tpr) -> None:
    print(f"FPR: {'' if fpr is None else format(fpr, '.4f')}")
    print(f"TPR: {'' if tpr is None else format(tpr, '.4f')}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _merge_config(args)
    seed = _get(cfg, "seed", _default_seed())
    rng = np.random.default_rng([seed, 0xC1])
    objects = []
    for _ in range(args.objects):
        pos = rng.uniform(-args.extent / 2 + 1.5, args.extent / 2 - 1.5, 2)
        speed = rng.uniform(0.3, 1.5)
        theta = rng.uniform(0, 2 * np.pi)
        tpl = str(rng.choice(["CAR", "CYCLIST", "PEDESTRIAN"]))
        budget = {"CAR": 90, "CYCLIST": 60, "PEDESTRIAN": 50}[tpl]
        objects.append(ObjectPlacement(tpl, (float(pos[0]), float(pos[1])),
                                       (float(speed * np.cos(theta)), float(speed * np.sin(theta))), budget))
    spec = SceneSpec(
        seed=seed,
        duration_frames=args.duration,
        ground_extent=args.extent,
        ground_spacing=args.spacing,
        noise_sigma=args.sigma,
        objects=tuple(objects),
    )
    frames, gt = generate_scene(spec)
    if args.attack != "none":
        kind = args.attack.upper()
        attack = AttackSpec(
            kind=kind,
            template=args.attack_template,
            point_count=args.attack_points or (DENSE_BUDGET if kind == "DENSE" else SPARSE_BUDGET),
            position=tuple(float(v) for v in args.attack_position.split(",")),
            target_frame=len(frames) - 1,
        )
        frames[-1], _ = inject(frames[-1], attack, seed=seed)
    out = args.out or Path("scene.tgpc")
    save_frames(frames, out)
    gt.save(Path(str(out) + ".gt.json"))
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_BENIGN


def cmd_detect(args) -> int:
    cfg = _merge_config(args)
    frames_path = args.frames or cfg.get("frames")
    if not frames_path:
        raise UsageError("--frames is required")
    config = _pipeline_config(cfg)
    frames = load_frames(frames_path)
    L = config.history_length
    if len(frames) < L + 1:
        raise UsageError(f"need at least {L + 1} frames for history length {L}, got {len(frames)}")
    buffer = config.new_buffer()
    for frame in frames[:L]:
        buffer.advance(frame)
    lines = []
    any_attacked = False
    for frame in frames[L:]:
        report = detect(buffer, frame, config)
        lines.append(report.to_json_line())
        any_attacked = any_attacked or report.decision == "ATTACKED"
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_ATTACKED if any_attacked else EXIT_BENIGN


def cmd_benchmark(args) -> int:
    cfg = _merge_config(args)
    suite = _suite_from_args(cfg, args)
    result = bench.run_benchmark(suite, jobs=args.jobs)
    out = args.out or Path(f"benchmark-{suite.kind}.csv")
    bench.write_rows_csv(result.rows, bench.BENCHMARK_COLUMNS, out)
    if not args.no_plot:
        from .figures import render_benchmark_figure

        render_benchmark_figure(result.rows, suite.decision_threshold, Path(out).with_suffix(".png"))
    _print_rates(result.fpr, result.tpr)
    for tpl, tpr in sorted(result.tpr_by_class.items()):
        print(f"TPR[{tpl}]: {tpr:.4f}")
    return EXIT_BENIGN


def _parse_grid(args) -> list[tuple[int, float]]:
    min_pts_values = [int(v) for v in args.min_pts_grid.split(",") if v]
    eps_values = [float(v) for v in args.eps_grid.split(",") if v]
    if not min_pts_values or not eps_values:
        raise UsageError("sweep grid must be non-empty")
    return [(m, e) for m in min_pts_values for e in eps_values]


def cmd_sweep(args) -> int:
    cfg = _merge_config(args)
    suite = _suite_from_args(cfg, args)
    rows = bench.run_sweep(suite, _parse_grid(args), jobs=args.jobs)
    out = args.out or Path(f"sweep-{suite.kind}.csv")
    bench.write_rows_csv(rows, bench.SWEEP_COLUMNS, out)
    if not args.no_plot:
        from .figures import render_sweep_figure

        render_sweep_figure(rows, Path(out).with_suffix(".png"))
    best = min(rows, key=lambda r: r.dist_ideal)
    print(f"best: min_pts={best.min_pts} eps={best.eps:g} "
          f"fpr={best.fpr:.4f} tpr={best.tpr:.4f} dist={best.dist_ideal:.4f}")
    return EXIT_BENIGN


def cmd_ablate(args) -> int:
    cfg = _merge_config(args)
    suite = _suite_from_args(cfg, args)
    betas = [float(v) for v in args.betas.split(",")] if args.betas else [suite.beta, 0.0]
    result = bench.run_ablation(suite, betas=betas, jobs=args.jobs)
    out = args.out or Path(f"ablation-{suite.kind}.csv")
    bench.write_rows_csv(result.rows, bench.ABLATION_COLUMNS, out)
    if not args.no_plot:
        from .figures import render_ablation_figure

        render_ablation_figure(result.rows, Path(out).with_suffix(".png"))
    for beta, fpr, tpr, var in result.rows:
        print(f"beta={beta:g}: fpr={fpr:.4f} tpr={tpr:.4f} flow_variance={var:.6g}")
    return EXIT_BENIGN


def build_parser() -> _Parser:
    parser = _Parser(prog="tempoguard", description="Spoofed point-cluster detection for LiDAR frame sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate a synthetic scene (optionally poisoned)")
    _add_pipeline_flags(p)
    p.add_argument("--duration", type=int, default=11, help="frames to generate")
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--extent", type=float, default=14.0)
    p.add_argument("--spacing", type=float, default=0.9)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--attack", choices=["none", "dense", "sparse"], default="none")
    p.add_argument("--attack-template", default="PEDESTRIAN")
    p.add_argument("--attack-points", type=int)
    p.add_argument("--attack-position", default="0.0,0.0", help="x,y of the fake object")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("detect", help="slide the detector over a frame file")
    _add_pipeline_flags(p)
    p.add_argument("--frames", type=Path, help="frame file path")
    p.set_defaults(func=cmd_detect)

    for name, func, extra in [
        ("benchmark", cmd_benchmark, None),
        ("sweep", cmd_sweep, "grid"),
        ("ablate", cmd_ablate, "betas"),
    ]:
        p = sub.add_parser(name, help=f"run the {name} harness over a scenario suite")
        _add_pipeline_flags(p)
        p.add_argument("--kind", choices=["dense", "sparse"], help="built-in suite kind (default dense)")
        p.add_argument("--suite", type=Path, help="YAML suite config")
        p.add_argument("--n-benign", type=int, dest="n_benign")
        p.add_argument("--n-poisoned", type=int, dest="n_poisoned")
        if extra == "grid":
            p.add_argument("--min-pts-grid", default="9,13,17,21")
            p.add_argument("--eps-grid", default="0.25,0.5,0.75,1.0")
        if extra == "betas":
            p.add_argument("--betas", help="comma-separated coherence weights (default '2,0')")
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgumentError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IOError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TempoGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
