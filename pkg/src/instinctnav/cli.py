"""Command-line experiment runner.

Subcommands: meta-train, adapt-test, baseline, ablate, plot-trajectories,
plot-field, fitness-curve. All runs are driven by a JSON config file (every
field has a default) plus a few overriding flags; outputs are CSV logs and
static SVG figures under --out.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentSpec, apply_scale, load_config, no_hazard_world, save_config
from .errors import ConfigError, TrajectoryParseError
from .experiments import (
    ABLATION_VARIANTS,
    VARIANT_MLIN,
    VARIANT_NO_INSTINCT,
    VARIANT_PURE_RL,
    run_adapt_cell,
    run_adapt_test,
    run_fitness_curve,
    write_curves_csv,
    write_rep_rows,
    write_report,
)
from .logs import TrajectoryLog, read_trajectory
from .metaevo import load_champion, run_meta_training
from .svgplot import emit_fitness_curves, emit_instinct_field_map, emit_trajectory_plot


def _load_spec(args) -> ExperimentSpec:
    spec = load_config(args.config) if args.config else ExperimentSpec()
    if getattr(args, "scale", None):
        spec = replace(spec, scale=args.scale)
        spec = apply_scale(spec)
    elif not args.config:
        spec = apply_scale(spec)  # default spec sizes to the desk preset
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, ga=replace(spec.ga, base_seed=args.seed), seeds=(args.seed,))
    if getattr(args, "out", None):
        spec = replace(spec, out_dir=args.out)
    if getattr(args, "workers", None) is not None:
        spec = replace(spec, workers=args.workers)
    return spec


def _out_dir(spec: ExperimentSpec, default: str) -> Path:
    out = Path(spec.out_dir) if spec.out_dir else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(spec: ExperimentSpec, out: Path):
    save_config(spec, out / "config_used.json")


def cmd_meta_train(args) -> int:
    spec = _load_spec(args)
    ga = spec.ga
    if args.method == "no_instinct":
        ga = replace(ga, instinct_enabled=False, policy_scale=0.5)
    world = spec.world if args.world == "hazard" else no_hazard_world()
    out = _out_dir(spec, "out/meta_train")
    _echo_config(replace(spec, ga=ga), out)

    def progress(row):
        print(
            f"gen {row['generation']:4d}  best {row['best_F']:10.3f}  "
            f"mean {row['mean_F']:10.3f}  best_viol {row['best_violations']:5d}  "
            f"sd {row['mutation_sd']:.6f}",
            flush=True,
        )

    result = run_meta_training(
        ga, world, spec.ppo, out_dir=out, workers=spec.workers,
        resume=args.resume, progress=progress,
    )
    print(f"champion fitness {result.best_result.fitness:.3f} -> {result.champion_path}")
    return 0


def _load_champion_arg(path) -> tuple:
    genome, meta = load_champion(path)
    return genome, meta


def _run_table_variant(spec: ExperimentSpec, variant: str, champion, out: Path, label: str) -> int:
    rows, report = run_adapt_test(
        champion, spec.world, spec.ppo, spec.adapt, variant, spec.workers
    )
    write_rep_rows(out / f"{label}_reps.csv", rows)
    write_report(out / f"{label}_report.csv", [report])
    print(
        f"{label}: distance fitness {report.mean_fitness:.3f} +- {report.sd_fitness:.3f}, "
        f"violations {report.mean_violations:.2f} +- {report.sd_violations:.2f} "
        f"({report.repetitions} repetitions)"
    )
    return 0


def cmd_adapt_test(args) -> int:
    spec = _load_spec(args)
    genome, meta = _load_champion_arg(args.champion)
    out = _out_dir(spec, "out/adapt_test")
    _echo_config(spec, out)
    variant = VARIANT_NO_INSTINCT if meta.get("method") == "no_instinct" else VARIANT_MLIN
    return _run_table_variant(spec, variant, genome, out, "adapt_test")


def cmd_baseline(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(spec, "out/baseline")
    _echo_config(spec, out)
    if args.which == "pure_rl":
        return _run_table_variant(spec, VARIANT_PURE_RL, None, out, "pure_rl")
    genome, meta = _load_champion_arg(args.champion)
    if meta.get("method") != "no_instinct":
        raise ConfigError("baseline no_instinct expects a champion trained without instinct")
    return _run_table_variant(spec, VARIANT_NO_INSTINCT, genome, out, "no_instinct")


def cmd_ablate(args) -> int:
    spec = _load_spec(args)
    genome, _ = _load_champion_arg(args.champion)
    out = _out_dir(spec, "out/ablate")
    _echo_config(spec, out)
    return _run_table_variant(spec, args.variant, genome, out, args.variant)


def cmd_plot_trajectories(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(spec, "out/plots")
    try:
        rows = read_trajectory(args.log)
    except TrajectoryParseError as e:
        print(f"error: {args.log}: {e}", file=sys.stderr)
        return 2
    target = out / (Path(args.log).stem + ".svg")
    emit_trajectory_plot(rows, spec.world, target)
    print(f"wrote {target}")
    return 0


def cmd_plot_field(args) -> int:
    spec = _load_spec(args)
    genome, meta = _load_champion_arg(args.champion)
    if genome.instinct_params is None:
        raise ConfigError("plot-field needs a champion with instinct parameters")
    from .agent import InstinctParams, PolicyParams

    out = _out_dir(spec, "out/plots")
    instinct = InstinctParams.from_flat(genome.instinct_params)
    policy = PolicyParams.from_flat(genome.policy_params_init) if args.overlay_policy else None
    target = out / "instinct_field.svg"
    emit_instinct_field_map(instinct, spec.world, args.resolution, target, policy)
    print(f"wrote {target}")
    return 0


def cmd_fitness_curve(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(spec, "out/fitness_curve")
    _echo_config(spec, out)
    worlds = {"hazard": spec.world, "no_hazard": no_hazard_world()}

    def progress(world_name, method, seed, row):
        print(
            f"{world_name}/{method} seed {seed}: final best {row['best_F']:.3f}", flush=True
        )

    series = run_fitness_curve(
        worlds, spec.ga, spec.ppo, spec.seeds, out_dir=out, workers=spec.workers,
        progress=progress,
    )
    write_curves_csv(out / "fitness_curves.csv", series)
    emit_fitness_curves(series, out / "fitness_curves.svg")
    print(f"wrote {out / 'fitness_curves.csv'} and fitness_curves.svg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="instinctnav",
        description="Evolutionary meta-learning of instinct-modulated navigation policies.",
    )
    p.add_argument("--version", action="version", version=f"instinctnav {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, champion=False):
        sp.add_argument("--config", help="JSON experiment config file")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scale", choices=["desk", "full"], help="GA size preset")
        sp.add_argument("--workers", type=int, help="parallel evaluation processes")
        if champion:
            sp.add_argument("--champion", required=True, help="champion checkpoint file")

    sp = sub.add_parser("meta-train", help="run the evolutionary outer loop")
    common(sp)
    sp.add_argument("--method", choices=["instinct", "no_instinct"], default="instinct")
    sp.add_argument("--world", choices=["hazard", "no_hazard"], default="hazard")
    sp.add_argument("--resume", action="store_true", help="continue from resume_state.ckpt")
    sp.set_defaults(func=cmd_meta_train)

    sp = sub.add_parser("adapt-test", help="lifetime adaptation test of a champion")
    common(sp, champion=True)
    sp.set_defaults(func=cmd_adapt_test)

    sp = sub.add_parser("baseline", help="pure-RL or no-instinct baseline tables")
    common(sp)
    sp.add_argument("--which", choices=["pure_rl", "no_instinct"], required=True)
    sp.add_argument("--champion", help="champion checkpoint (no_instinct baseline only)")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("ablate", help="champion ablations")
    common(sp, champion=True)
    sp.add_argument("--variant", choices=list(ABLATION_VARIANTS), required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot-trajectories", help="SVG figure from a trajectory CSV")
    common(sp)
    sp.add_argument("--log", required=True, help="trajectory CSV file")
    sp.set_defaults(func=cmd_plot_trajectories)

    sp = sub.add_parser("plot-field", help="instinct action field SVG")
    common(sp, champion=True)
    sp.add_argument("--resolution", type=int, default=21)
    sp.add_argument("--overlay-policy", action="store_true")
    sp.set_defaults(func=cmd_plot_field)

    sp = sub.add_parser("fitness-curve", help="training curves for both worlds and methods")
    common(sp)
    sp.set_defaults(func=cmd_fitness_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
