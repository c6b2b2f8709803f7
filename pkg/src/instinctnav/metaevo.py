"""Outer evolutionary loop: genomes, inner-loop fitness, selection, mutation.

A genome bundles the initial policy parameters (actor + critic + log noise),
the instinct parameters, and the inner-loop learning rate. Fitness is the sum
over tasks of the post-update deterministic episode reward plus a penalty for
every hazard step taken while exploring that task. Inner-loop weight changes
are discarded between tasks and never inherited.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .agent import InstinctParams, PolicyParams, SIGMA_INIT
from .envsim import NavEnv, WorldConfig
from .errors import ConfigError, NumericError
from .logs import FITNESS_HISTORY_COLUMNS, write_csv
from .neural import AdamState, read_checkpoint, write_checkpoint
from .rlcore import (
    PpoConfig,
    collect_rollout,
    collect_rollouts_lockstep,
    deterministic_episode,
    ppo_update,
)

WORST_FITNESS = -1e9

SEED_MODE_PER_GENOME = "per_genome"
SEED_MODE_FIXED = "fixed"

DEFAULT_LR_INIT = 0.01


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 480
    parent_fraction: float = 0.10
    elite_count: int = 1
    mutation_sd_init: float = 0.01
    mutation_decay: float = 0.999
    mutation_sd_min: float = 0.001
    generations: int = 250
    base_seed: int = 0
    rollout_budget: int = 2000
    seed_mode: str = SEED_MODE_PER_GENOME
    strict_cumulative_violations: bool = False
    instinct_enabled: bool = True
    policy_scale: float = 1.0  # output scaling when no instinct is evolved
    checkpoint_every: int = 1
    lr_init: float = DEFAULT_LR_INIT
    sigma_init: float = SIGMA_INIT

    def __post_init__(self):
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if not 0.0 < self.parent_fraction <= 1.0:
            raise ConfigError("parent_fraction must be in (0, 1]")
        if self.elite_count < 1:
            raise ConfigError("elite_count must be >= 1")
        if self.elite_count > self.population_size:
            raise ConfigError("elite_count cannot exceed population_size")
        if self.mutation_sd_min > self.mutation_sd_init:
            raise ConfigError("mutation_sd_min must be <= mutation_sd_init")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.rollout_budget < 1:
            raise ConfigError("rollout_budget must be >= 1")
        if self.seed_mode not in (SEED_MODE_PER_GENOME, SEED_MODE_FIXED):
            raise ConfigError(f"unknown seed_mode {self.seed_mode!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass
class Genome:
    """Evolvable parameter bundle. instinct_params is None for the no-instinct baseline."""

    policy_params_init: np.ndarray
    instinct_params: np.ndarray | None
    learning_rate: float
    lineage_id: int

    def copy(self) -> "Genome":
        return Genome(
            policy_params_init=self.policy_params_init.copy(),
            instinct_params=None if self.instinct_params is None else self.instinct_params.copy(),
            learning_rate=self.learning_rate,
            lineage_id=self.lineage_id,
        )


@dataclass(frozen=True)
class EvalResult:
    fitness: float
    task_rewards: tuple  # deterministic episode reward per task
    violation_penalty: float  # total penalty contribution, <= 0
    task_violation_counts: tuple  # exploration violations per task
    task_det_violations: tuple  # deterministic-episode violations per task
    failed: bool = False

    @property
    def total_violations(self) -> int:
        return int(sum(self.task_violation_counts))


def init_genome(
    rng: np.random.Generator,
    instinct_enabled: bool = True,
    lr_init: float = DEFAULT_LR_INIT,
    sigma_init: float = SIGMA_INIT,
    lineage_id: int = 0,
) -> Genome:
    """Fresh genome: Kaiming-uniform weights, zero biases, log(sigma_init) noise."""
    policy = PolicyParams.kaiming(rng, sigma_init)
    instinct = InstinctParams.kaiming(rng).flatten() if instinct_enabled else None
    return Genome(
        policy_params_init=policy.flatten(),
        instinct_params=instinct,
        learning_rate=lr_init,
        lineage_id=lineage_id,
    )


def mutation_sd(config: GaConfig, generation: int) -> float:
    return max(config.mutation_sd_init * config.mutation_decay**generation, config.mutation_sd_min)


def mutate(genome: Genome, sd: float, rng: np.random.Generator, lineage_id: int = 0) -> Genome:
    """Additive Gaussian noise on every parameter, including the learning rate."""
    if sd <= 0:
        raise ValueError("mutation sd must be > 0")
    policy = genome.policy_params_init + rng.normal(0.0, sd, genome.policy_params_init.shape)
    instinct = None
    if genome.instinct_params is not None:
        instinct = genome.instinct_params + rng.normal(0.0, sd, genome.instinct_params.shape)
    alpha = max(genome.learning_rate + rng.normal(0.0, sd), 1e-6)
    return Genome(
        policy_params_init=policy,
        instinct_params=instinct,
        learning_rate=alpha,
        lineage_id=lineage_id,
    )


def evaluation_seed(base_seed: int, generation: int, genome_index: int, mode: str = SEED_MODE_PER_GENOME) -> int:
    """Deterministic evaluation seed; 'fixed' mode keeps it constant so the
    elite re-scores identically every generation."""
    if mode == SEED_MODE_FIXED:
        key = [base_seed]
    else:
        key = [base_seed, generation, genome_index]
    return int(np.random.SeedSequence(key).generate_state(1, dtype=np.uint64)[0])


def evaluate_genome(
    genome: Genome,
    world: WorldConfig,
    ppo: PpoConfig,
    seed: int,
    rollout_budget: int = 2000,
    strict_cumulative_violations: bool = False,
    policy_scale: float = 1.0,
) -> EvalResult:
    """Inner-loop evaluation over all goals in fixed order.

    Per task: copy the genome's policy, collect a stochastic rollout, run the
    PPO update with the genome's learning rate, then score one deterministic
    episode. The fitness term per task is that episode's reward plus the
    hazard penalty times the task's exploration violations (or the running
    cumulative count in strict mode). The genome itself is never modified.
    """
    rng = np.random.default_rng(seed)
    n_tasks = len(world.goals)
    instinct = (
        InstinctParams.from_flat(genome.instinct_params)
        if genome.instinct_params is not None
        else None
    )
    scale = policy_scale if instinct is None else 1.0
    try:
        shared_policy = PolicyParams.from_flat(genome.policy_params_init)
        batches = collect_rollouts_lockstep(
            world, shared_policy, instinct, range(n_tasks), rollout_budget, rng, scale
        )
        fitness = 0.0
        task_rewards = []
        task_violations = []
        task_det_violations = []
        running_violations = 0
        penalty_total = 0.0
        for task in range(n_tasks):
            policy = PolicyParams.from_flat(genome.policy_params_init)
            opt = AdamState.for_size(policy.parameter_count)
            violations = batches[task].violation_count
            ppo_update(policy, batches[task], ppo, opt, genome.learning_rate, rng)
            for _ in range(ppo.updates_per_task - 1):
                env = NavEnv(world)
                extra = collect_rollout(env, policy, instinct, task, rollout_budget, rng, scale)
                violations += extra.violation_count
                ppo_update(policy, extra, ppo, opt, genome.learning_rate, rng)
            env = NavEnv(world)
            det_reward, det_viol = deterministic_episode(env, policy, instinct, task, scale)
            if strict_cumulative_violations:
                running_violations += violations
                penalty = world.hazard_penalty * running_violations
            else:
                penalty = world.hazard_penalty * violations
            fitness += det_reward + penalty
            penalty_total += penalty
            task_rewards.append(det_reward)
            task_violations.append(violations)
            task_det_violations.append(det_viol)
        return EvalResult(
            fitness=fitness,
            task_rewards=tuple(task_rewards),
            violation_penalty=penalty_total,
            task_violation_counts=tuple(task_violations),
            task_det_violations=tuple(task_det_violations),
        )
    except NumericError:
        return EvalResult(
            fitness=WORST_FITNESS,
            task_rewards=(math.nan,) * n_tasks,
            violation_penalty=0.0,
            task_violation_counts=(0,) * n_tasks,
            task_det_violations=(0,) * n_tasks,
            failed=True,
        )


def select_and_reproduce(
    evaluated: list[tuple[Genome, EvalResult]],
    config: GaConfig,
    generation: int,
    rng: np.random.Generator,
) -> list[Genome]:
    """Truncation selection with elitism and round-robin cloning.

    The best elite_count genomes pass through unchanged; the remaining slots
    are mutated clones of the top parent_fraction, assigned round-robin in
    rank order. Mutation sd follows the decay schedule for this generation.
    """
    if not evaluated:
        raise ConfigError("cannot select from an empty population")
    n = len(evaluated)
    order = sorted(range(n), key=lambda i: (-evaluated[i][1].fitness, i))
    n_parents = max(1, math.ceil(config.parent_fraction * n))
    parents = [evaluated[i][0] for i in order[:n_parents]]
    sd = mutation_sd(config, generation)
    next_pop: list[Genome] = []
    for k in range(min(config.elite_count, n)):
        next_pop.append(evaluated[order[k]][0].copy())
    slot = 0
    while len(next_pop) < n:
        parent = parents[slot % n_parents]
        lineage = (generation + 1) * config.population_size + slot
        next_pop.append(mutate(parent, sd, rng, lineage))
        slot += 1
    return next_pop


# --- checkpoints -----------------------------------------------------------


def _net_tags() -> dict:
    from . import agent

    return {
        "actor": [s.to_tag() for s in agent.ACTOR_LAYERS],
        "actor_shapes": [[s.out_dim, s.in_dim] for s in agent.ACTOR_LAYERS],
        "critic": [s.to_tag() for s in agent.CRITIC_LAYERS],
        "critic_shapes": [[s.out_dim, s.in_dim] for s in agent.CRITIC_LAYERS],
        "instinct_trunk": [s.to_tag() for s in agent.INSTINCT_TRUNK_LAYERS],
        "instinct_heads": [
            agent.SUPPRESSION_HEAD_LAYERS[0].to_tag(),
            agent.INSTINCT_ACTION_HEAD_LAYERS[0].to_tag(),
        ],
    }


def save_champion(path, genome: Genome, config: GaConfig, generation: int, result: EvalResult):
    meta = {
        "kind": "champion",
        "generation": generation,
        "fitness": result.fitness,
        "task_rewards": list(result.task_rewards),
        "task_violation_counts": list(result.task_violation_counts),
        "learning_rate": genome.learning_rate,
        "lineage_id": genome.lineage_id,
        "method": "instinct" if genome.instinct_params is not None else "no_instinct",
        "policy_scale": config.policy_scale,
        "nets": _net_tags(),
        "ga_config": asdict(config),
    }
    arrays = {"policy_params_init": genome.policy_params_init}
    if genome.instinct_params is not None:
        arrays["instinct_params"] = genome.instinct_params
    write_checkpoint(path, meta, arrays)


def load_champion(path) -> tuple[Genome, dict]:
    meta, arrays = read_checkpoint(path)
    if meta.get("kind") != "champion":
        raise ConfigError(f"{path} is not a champion checkpoint")
    genome = Genome(
        policy_params_init=arrays["policy_params_init"],
        instinct_params=arrays.get("instinct_params"),
        learning_rate=float(meta["learning_rate"]),
        lineage_id=int(meta["lineage_id"]),
    )
    return genome, meta


# --- meta-training driver ----------------------------------------------------


@dataclass
class MetaTrainResult:
    best_genome: Genome
    best_result: EvalResult
    history: list[dict]
    champion_path: str | None = None


_WORKER_LIMITER = None


def _limit_worker_threads():
    # Each worker runs its own GEMMs; one BLAS thread per process avoids
    # oversubscription when several evaluations run in parallel.
    global _WORKER_LIMITER
    try:
        from threadpoolctl import threadpool_limits

        _WORKER_LIMITER = threadpool_limits(limits=1)
    except Exception:
        _WORKER_LIMITER = None


def _evaluate_job(args):
    genome, world, ppo, seed, budget, strict, scale = args
    return evaluate_genome(genome, world, ppo, seed, budget, strict, scale)


def _history_row(generation: int, results: list[EvalResult], sd: float) -> dict:
    fits = np.array([r.fitness for r in results])
    best_idx = int(np.argmax(fits))
    return {
        "generation": generation,
        "best_F": float(fits.max()),
        "mean_F": float(fits.mean()),
        "sd_F": float(fits.std()),
        "best_violations": results[best_idx].total_violations,
        "mutation_sd": sd,
    }


def _save_resume_state(path, config: GaConfig, next_generation: int, population: list[Genome], rng, history):
    meta = {
        "kind": "resume",
        "next_generation": next_generation,
        "rng_state": rng.bit_generator.state,
        "learning_rates": [g.learning_rate for g in population],
        "lineage_ids": [g.lineage_id for g in population],
        "has_instinct": population[0].instinct_params is not None,
        "history": history,
        "ga_config": asdict(config),
    }
    arrays = {"policies": np.stack([g.policy_params_init for g in population])}
    if population[0].instinct_params is not None:
        arrays["instincts"] = np.stack([g.instinct_params for g in population])
    write_checkpoint(path, meta, arrays)


def _load_resume_state(path):
    meta, arrays = read_checkpoint(path)
    if meta.get("kind") != "resume":
        raise ConfigError(f"{path} is not a resume checkpoint")
    population = []
    policies = arrays["policies"]
    instincts = arrays.get("instincts")
    for i in range(policies.shape[0]):
        population.append(
            Genome(
                policy_params_init=policies[i].copy(),
                instinct_params=None if instincts is None else instincts[i].copy(),
                learning_rate=float(meta["learning_rates"][i]),
                lineage_id=int(meta["lineage_ids"][i]),
            )
        )
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return int(meta["next_generation"]), population, rng, list(meta["history"])


def run_meta_training(
    config: GaConfig,
    world: WorldConfig,
    ppo: PpoConfig,
    out_dir=None,
    workers: int | None = None,
    resume: bool = False,
    progress=None,
) -> MetaTrainResult:
    """Evolve for config.generations reproduction rounds (generations+1 evaluations).

    Writes per-generation champion checkpoints, a fitness history CSV and a
    resume state file under out_dir when given. Genome evaluations within a
    generation run in parallel worker processes; per-genome seeding makes the
    result independent of scheduling order.
    """
    out = Path(out_dir) if out_dir is not None else None
    resume_path = out / "resume_state.ckpt" if out else None
    history: list[dict] = []
    start_gen = 0
    if resume and resume_path is not None and resume_path.exists():
        start_gen, population, rng, history = _load_resume_state(resume_path)
        if start_gen > config.generations:
            # Already complete for this generation count: hand back the stored
            # champion without re-evaluating anything.
            history = history[: config.generations + 1]
            genome, meta = load_champion(out / "champion_final.ckpt")
            result = EvalResult(
                fitness=float(meta["fitness"]),
                task_rewards=tuple(meta["task_rewards"]),
                violation_penalty=float(
                    meta["fitness"] - sum(meta["task_rewards"])
                ),
                task_violation_counts=tuple(meta["task_violation_counts"]),
                task_det_violations=(0,) * len(meta["task_rewards"]),
            )
            return MetaTrainResult(
                best_genome=genome,
                best_result=result,
                history=history,
                champion_path=str(out / "champion_final.ckpt"),
            )
    else:
        rng = np.random.default_rng(config.base_seed)
        population = [
            init_genome(rng, config.instinct_enabled, config.lr_init, config.sigma_init, i)
            for i in range(config.population_size)
        ]

    executor = None
    n_workers = workers if workers is not None else 1
    if n_workers > 1:
        executor = ProcessPoolExecutor(max_workers=n_workers, initializer=_limit_worker_threads)
    best_genome = None
    best_result = None
    champion_path = None
    try:
        for gen in range(start_gen, config.generations + 1):
            seeds = [
                evaluation_seed(config.base_seed, gen, i, config.seed_mode)
                for i in range(len(population))
            ]
            jobs = [
                (
                    g,
                    world,
                    ppo,
                    s,
                    config.rollout_budget,
                    config.strict_cumulative_violations,
                    config.policy_scale,
                )
                for g, s in zip(population, seeds)
            ]
            if executor is not None:
                results = list(executor.map(_evaluate_job, jobs, chunksize=1))
            else:
                results = [_evaluate_job(j) for j in jobs]

            sd = mutation_sd(config, gen)
            row = _history_row(gen, results, sd)
            history.append(row)
            best_idx = int(np.argmax([r.fitness for r in results]))
            best_genome = population[best_idx].copy()
            best_result = results[best_idx]
            if progress is not None:
                progress(row)

            if out is not None:
                if gen % config.checkpoint_every == 0 or gen == config.generations:
                    champion_path = str(out / "champions" / f"gen_{gen:05d}.ckpt")
                    save_champion(champion_path, best_genome, config, gen, best_result)
                write_csv(
                    out / "fitness_history.csv",
                    FITNESS_HISTORY_COLUMNS,
                    [[r[c] for c in FITNESS_HISTORY_COLUMNS] for r in history],
                )

            # Reproduce unconditionally (also after the final generation) so
            # the persisted resume state matches what a longer run would have
            # used as its next population.
            population = select_and_reproduce(list(zip(population, results)), config, gen, rng)
            if out is not None:
                _save_resume_state(resume_path, config, gen + 1, population, rng, history)
    finally:
        if executor is not None:
            executor.shutdown()

    if out is not None:
        final_path = out / "champion_final.ckpt"
        save_champion(final_path, best_genome, config, config.generations, best_result)
        champion_path = str(final_path)
    return MetaTrainResult(
        best_genome=best_genome,
        best_result=best_result,
        history=history,
        champion_path=champion_path,
    )
