"""Lifetime-adaptation experiments, baselines, ablations and fitness curves.

Every variant shares one cell protocol: build the policy/instinct pair for
the variant, collect one exploration rollout on a single goal, apply one PPO
update, then score a deterministic episode. Reported "distance fitness" is
the deterministic episode's cumulative negative distance (hazard penalties
taken out and counted separately as violations).
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .agent import InstinctParams, PolicyParams
from .config import AdaptSpec
from .envsim import NavEnv, WorldConfig
from .errors import ConfigError
from .logs import ADAPT_REP_COLUMNS, REPORT_COLUMNS, TrajectoryLog, write_csv
from .metaevo import GaConfig, Genome, MetaTrainResult, _limit_worker_threads, run_meta_training
from .neural import AdamState
from .rlcore import PpoConfig, collect_rollout, deterministic_episode, ppo_update

VARIANT_MLIN = "mlin"
VARIANT_PURE_RL = "pure_rl"
VARIANT_NO_INSTINCT = "no_instinct"
VARIANT_INSTINCT_OFF = "instinct_off"
VARIANT_RANDOM_POLICY = "random_policy"

ADAPT_VARIANTS = (
    VARIANT_MLIN,
    VARIANT_PURE_RL,
    VARIANT_NO_INSTINCT,
    VARIANT_INSTINCT_OFF,
    VARIANT_RANDOM_POLICY,
)
ABLATION_VARIANTS = (VARIANT_INSTINCT_OFF, VARIANT_RANDOM_POLICY)


@dataclass(frozen=True)
class RepResult:
    """One adaptation repetition: goal + seed cell of the report table."""

    method: str
    cycle: int
    goal: int
    seed: int
    distance_fitness: float
    episode_reward: float
    exploration_violations: int
    det_violations: int


@dataclass(frozen=True)
class ReportRow:
    method: str
    mean_fitness: float
    sd_fitness: float
    mean_violations: float
    sd_violations: float
    repetitions: int


def cell_seed(base_seed: int, variant: str, cycle: int, goal: int) -> int:
    tag = zlib.crc32(variant.encode("utf-8"))
    return int(np.random.SeedSequence([base_seed, tag, cycle, goal]).generate_state(1, dtype=np.uint64)[0])


def _build_cell_agents(variant, champion, spec, rng):
    """Policy, instinct, learning rate and output scale for one repetition."""
    if variant == VARIANT_MLIN:
        if champion is None or champion.instinct_params is None:
            raise ConfigError("mlin variant needs a champion with instinct parameters")
        return (
            PolicyParams.from_flat(champion.policy_params_init),
            InstinctParams.from_flat(champion.instinct_params),
            champion.learning_rate,
            1.0,
        )
    if variant == VARIANT_PURE_RL:
        return (
            PolicyParams.kaiming(rng, spec.pure_rl_sigma),
            None,
            spec.pure_rl_lr,
            1.0,
        )
    if variant == VARIANT_NO_INSTINCT:
        if champion is None:
            raise ConfigError("no_instinct variant needs its meta-trained champion")
        # The 0.5 output scaling is part of this baseline's protocol, during
        # meta-training and testing alike.
        return (PolicyParams.from_flat(champion.policy_params_init), None, champion.learning_rate, 0.5)
    if variant == VARIANT_INSTINCT_OFF:
        if champion is None:
            raise ConfigError("instinct_off variant needs a champion")
        return (PolicyParams.from_flat(champion.policy_params_init), None, champion.learning_rate, 1.0)
    if variant == VARIANT_RANDOM_POLICY:
        if champion is None or champion.instinct_params is None:
            raise ConfigError("random_policy variant needs a champion with instinct parameters")
        return (
            PolicyParams.kaiming(rng, spec.pure_rl_sigma),
            InstinctParams.from_flat(champion.instinct_params),
            champion.learning_rate,
            1.0,
        )
    raise ConfigError(f"unknown adapt variant {variant!r}")


def run_adapt_cell(
    variant: str,
    champion: Genome | None,
    world: WorldConfig,
    ppo: PpoConfig,
    spec: AdaptSpec,
    cycle: int,
    goal: int,
    traj_log: TrajectoryLog | None = None,
) -> RepResult:
    seed = cell_seed(spec.base_seed, variant, cycle, goal)
    rng = np.random.default_rng(seed)
    policy, instinct, lr, scale = _build_cell_agents(variant, champion, spec, rng)

    env = NavEnv(world)
    batch = collect_rollout(
        env, policy, instinct, goal, spec.rollout_budget, rng, scale, traj_log=traj_log
    )
    opt = AdamState.for_size(policy.parameter_count)
    ppo_update(policy, batch, ppo, opt, lr, rng)
    det_id = -(cycle * len(world.goals) + goal + 1)
    reward, det_viol = deterministic_episode(
        env, policy, instinct, goal, scale, traj_log=traj_log, episode_id=det_id
    )
    distance_fitness = reward - world.hazard_penalty * det_viol
    return RepResult(
        method=variant,
        cycle=cycle,
        goal=goal,
        seed=seed,
        distance_fitness=distance_fitness,
        episode_reward=reward,
        exploration_violations=batch.violation_count,
        det_violations=det_viol,
    )


def _cell_job(args):
    return run_adapt_cell(*args)


def run_adapt_test(
    champion: Genome | None,
    world: WorldConfig,
    ppo: PpoConfig,
    spec: AdaptSpec,
    variant: str = VARIANT_MLIN,
    workers: int | None = None,
) -> tuple[list[RepResult], ReportRow]:
    """All (cycle, goal) repetitions of one variant plus the summary row."""
    cells = [
        (variant, champion, world, ppo, spec, cycle, goal)
        for cycle in range(spec.repetition_cycles)
        for goal in range(len(world.goals))
    ]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_worker_threads) as ex:
            rows = list(ex.map(_cell_job, cells, chunksize=1))
    else:
        rows = [_cell_job(c) for c in cells]
    return rows, summarize(variant, rows)


def run_ablation(
    champion: Genome,
    variant: str,
    world: WorldConfig,
    ppo: PpoConfig,
    spec: AdaptSpec,
    workers: int | None = None,
) -> tuple[list[RepResult], ReportRow]:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"ablation variant must be one of {ABLATION_VARIANTS}")
    return run_adapt_test(champion, world, ppo, spec, variant, workers)


def summarize(method: str, rows: list[RepResult]) -> ReportRow:
    fits = np.array([r.distance_fitness for r in rows], dtype=np.float64)
    viols = np.array([r.exploration_violations for r in rows], dtype=np.float64)
    n = len(rows)
    sd = lambda x: float(x.std(ddof=1)) if n > 1 else 0.0
    return ReportRow(
        method=method,
        mean_fitness=float(fits.mean()),
        sd_fitness=sd(fits),
        mean_violations=float(viols.mean()),
        sd_violations=sd(viols),
        repetitions=n,
    )


def write_rep_rows(path, rows: list[RepResult]):
    write_csv(
        path,
        ADAPT_REP_COLUMNS,
        [
            (
                r.method,
                r.cycle,
                r.goal,
                r.seed,
                r.distance_fitness,
                r.episode_reward,
                r.exploration_violations,
                r.det_violations,
            )
            for r in rows
        ],
    )


def write_report(path, report_rows: list[ReportRow]):
    write_csv(
        path,
        REPORT_COLUMNS,
        [
            (
                r.method,
                r.mean_fitness,
                r.sd_fitness,
                r.mean_violations,
                r.sd_violations,
                r.repetitions,
            )
            for r in report_rows
        ],
    )


def recompute_report(rows: list[RepResult]) -> list[ReportRow]:
    """Rebuild per-method summary rows from persisted repetition rows."""
    methods = []
    for r in rows:
        if r.method not in methods:
            methods.append(r.method)
    return [summarize(m, [r for r in rows if r.method == m]) for m in methods]


# --- fitness curves ----------------------------------------------------------


@dataclass
class CurveSeries:
    world_name: str
    method: str
    generations: list[int]
    mean_best: list[float]
    sd_best: list[float]
    per_seed: dict  # seed -> list of best_F


def run_fitness_curve(
    worlds: dict[str, WorldConfig],
    ga: GaConfig,
    ppo: PpoConfig,
    seeds,
    out_dir=None,
    workers: int | None = None,
    progress=None,
) -> list[CurveSeries]:
    """Meta-training curves for both methods on each world over the seed list.

    The instinct-free baseline evolves policy parameters only and applies the
    0.5 output scale throughout.
    """
    method_cfgs = {
        VARIANT_MLIN: replace(ga, instinct_enabled=True, policy_scale=1.0),
        VARIANT_NO_INSTINCT: replace(ga, instinct_enabled=False, policy_scale=0.5),
    }
    series = []
    for world_name, world in worlds.items():
        for method, cfg in method_cfgs.items():
            per_seed = {}
            for seed in seeds:
                run_cfg = replace(cfg, base_seed=int(seed))
                run_out = None
                if out_dir is not None:
                    run_out = f"{out_dir}/runs/{world_name}_{method}_seed{seed}"
                result: MetaTrainResult = run_meta_training(
                    run_cfg, world, ppo, out_dir=run_out, workers=workers
                )
                per_seed[int(seed)] = [row["best_F"] for row in result.history]
                if progress is not None:
                    progress(world_name, method, seed, result.history[-1])
            gens = list(range(cfg.generations + 1))
            stacked = np.array([per_seed[int(s)] for s in seeds])
            series.append(
                CurveSeries(
                    world_name=world_name,
                    method=method,
                    generations=gens,
                    mean_best=stacked.mean(axis=0).tolist(),
                    sd_best=stacked.std(axis=0).tolist(),
                    per_seed=per_seed,
                )
            )
    return series


def write_curves_csv(path, series: list[CurveSeries]):
    from .logs import CURVE_COLUMNS

    rows = []
    for s in series:
        for seed, best in sorted(s.per_seed.items()):
            for gen, value in enumerate(best):
                rows.append(
                    (
                        s.world_name,
                        s.method,
                        seed,
                        gen,
                        value,
                        s.mean_best[gen],
                        s.sd_best[gen],
                    )
                )
    write_csv(path, CURVE_COLUMNS, rows)


def generations_to_fraction(mean_curve, fraction: float = 0.9) -> int:
    """First generation reaching `fraction` of the total rise to the plateau."""
    start = mean_curve[0]
    plateau = mean_curve[-1]
    if plateau == start:
        return 0
    target = start + fraction * (plateau - start)
    for gen, v in enumerate(mean_curve):
        if v >= target:
            return gen
    return len(mean_curve) - 1
