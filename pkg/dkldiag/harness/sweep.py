"""
Seed sweeps: independent runs of one configuration on worker threads, and the
full-batch versus minibatch comparison built on top of them.
"""

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field

from .config import ExperimentConfig
from .experiment import RunResult, run_experiment
from .runners import ExperimentError

logger = logging.getLogger(__name__)

__all__ = [
    "SweepConfig",
    "SweepResult",
    "SeedSweep",
    "ComparisonRow",
    "ComparisonOutcome",
    "run_seed_sweep",
    "compare_minibatch_regularization",
]

DEFAULT_SEEDS = [0, 1, 2, 3, 4]


class SweepConfig(BaseModel):
    """
    Configuration for a seed sweep.
    """

    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS), description="Run seeds")
    max_workers: Optional[int] = Field(default=None, ge=1, description="Worker threads (one per seed when omitted)")
    timeout: Optional[float] = Field(default=None, gt=0, description="Per-run timeout in seconds")
    fail_silently: bool = Field(default=True, description="Continue if some runs fail")


class SweepResult(BaseModel):
    """Successful runs keyed by seed, plus the failures."""

    results: Dict[int, RunResult] = Field(default_factory=dict)
    failures: Dict[int, str] = Field(default_factory=dict, description="Seed -> error message")
    elapsed: float = Field(default=0.0, ge=0, description="Wall time in seconds")


class SeedSweep:
    """
    Runs one experiment configuration for several seeds concurrently. Each run owns
    its own model state and random streams, so runs share nothing.
    """

    def __init__(self, config: Optional[SweepConfig] = None, **kwargs):
        """
        Args:
            config: Sweep configuration
            **kwargs: Overrides of sweep configuration fields
        """
        if config is None:
            config = SweepConfig()
        if kwargs:
            config = config.model_copy(update=kwargs)
        if not config.seeds:
            raise ExperimentError("A sweep needs at least one seed")
        self.config = config

    async def _run_with_timeout(
        self,
        executor: ThreadPoolExecutor,
        experiment: ExperimentConfig,
        out_dir: Optional[Path],
        timed_out: List[int],
    ) -> Optional[RunResult]:
        loop = asyncio.get_running_loop()
        seed = experiment.seed
        try:
            future = loop.run_in_executor(executor, run_experiment, experiment, out_dir)
            result = await asyncio.wait_for(future, timeout=self.config.timeout)
            logger.info(f"Seed {seed} finished: objective/N={result.report.objective_per_point}")
            return result

        except asyncio.TimeoutError:
            logger.warning(f"Seed {seed} timed out after {self.config.timeout} seconds")
            timed_out.append(seed)
            if not self.config.fail_silently:
                raise ExperimentError(f"Seed {seed} timed out")
            return None

        except Exception as e:
            logger.error(f"Seed {seed} failed: {e}")
            if not self.config.fail_silently:
                raise ExperimentError(f"Seed {seed} failed: {e}") from e
            return None

    async def run(self, experiment: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> SweepResult:
        """
        Run ``experiment`` once per seed; outputs go to ``out_dir/seed_<seed>``.

        Raises:
            ExperimentError: If a run fails and ``fail_silently`` is off
        """
        start_time = datetime.now()
        base = Path(out_dir) if out_dir is not None else None
        seeds = list(dict.fromkeys(self.config.seeds))
        logger.info(f"Starting sweep of {experiment.model_kind} over seeds {seeds}")

        executor = ThreadPoolExecutor(max_workers=self.config.max_workers or len(seeds))
        timed_out: List[int] = []
        try:
            tasks = []
            for seed in seeds:
                run_config = experiment.model_copy(update={"seed": seed})
                run_dir = base / f"seed_{seed}" if base is not None else None
                tasks.append((seed, self._run_with_timeout(executor, run_config, run_dir, timed_out)))
            outcomes = await asyncio.gather(*[task for _, task in tasks], return_exceptions=True)
        finally:
            executor.shutdown(wait=False, cancel_futures=True)
            if timed_out:
                # threads cannot be interrupted; their results are dropped
                logger.warning(f"Seeds {sorted(timed_out)} timed out; their worker threads are still running")

        sweep = SweepResult()
        for (seed, _), outcome in zip(tasks, outcomes):
            if isinstance(outcome, Exception):
                logger.error(f"Exception in seed {seed}: {outcome}")
                if not self.config.fail_silently:
                    raise ExperimentError(f"Sweep failed at seed {seed}: {outcome}") from outcome
                sweep.failures[seed] = str(outcome)
            elif outcome is None:
                sweep.failures[seed] = "failed or timed out"
            else:
                sweep.results[seed] = outcome

        sweep.elapsed = (datetime.now() - start_time).total_seconds()
        logger.info(
            f"Sweep completed in {sweep.elapsed:.2f} seconds. "
            f"Successful runs: {len(sweep.results)}/{len(seeds)}"
        )
        return sweep


async def run_seed_sweep(
    config: ExperimentConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    out_dir: Optional[Union[str, Path]] = None,
    **kwargs,
) -> SweepResult:
    """Convenience wrapper: ``SeedSweep(seeds=seeds, **kwargs).run(config, out_dir)``."""
    return await SeedSweep(SweepConfig(seeds=list(seeds), **kwargs)).run(config, out_dir)


class ComparisonRow(BaseModel):
    """Full-batch and minibatch results of one seed."""

    seed: int
    full_objective_per_point: float
    minibatch_objective_per_point: float
    full_test_ll: float
    minibatch_test_ll: float
    holds: bool = Field(..., description="Full batch trains better but tests no better than minibatch")


class ComparisonOutcome(BaseModel):
    """Recorded outcome of the full-batch versus minibatch comparison."""

    full_kind: str
    minibatch_kind: str
    batch_size: int
    rows: List[ComparisonRow] = Field(default_factory=list)
    holds_count: int = 0
    required: int = Field(..., ge=0, description="Seeds that must agree for the outcome to hold")
    holds: bool = False


async def compare_minibatch_regularization(
    config: ExperimentConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    out_dir: Optional[Union[str, Path]] = None,
    full_kind: str = "exact-dkl",
    minibatch_kind: str = "svdkl",
    batch_size: Optional[int] = None,
    agreement: float = 0.8,
    **kwargs,
) -> ComparisonOutcome:
    """
    Train the same data full batch and minibatched for every seed and record whether the
    full-batch model reaches the higher training objective per point while its test log
    likelihood is no higher.

    Args:
        config: Base configuration (dataset, net, schedule)
        seeds: Run seeds
        out_dir: Root of ``full/``, ``minibatch/`` and ``comparison.json``
        full_kind: Full-batch model kind
        minibatch_kind: Minibatched model kind
        batch_size: Minibatch size (the config's, else 64)
        agreement: Fraction of seeds that must agree
        **kwargs: Sweep configuration overrides (timeout, max_workers, fail_silently)

    Raises:
        ExperimentError: If a seed has no result in either arm or lacks a test split
    """
    batch = batch_size or config.batch_size or 64
    base = Path(out_dir) if out_dir is not None else None
    full_config = config.model_copy(update={"model_kind": full_kind, "batch_size": None})
    mini_config = config.model_copy(update={"model_kind": minibatch_kind, "batch_size": batch})

    sweep = SeedSweep(SweepConfig(seeds=list(seeds), **kwargs))
    full = await sweep.run(full_config, None if base is None else base / "full")
    mini = await sweep.run(mini_config, None if base is None else base / "minibatch")

    rows = []
    for seed in dict.fromkeys(seeds):
        if seed not in full.results or seed not in mini.results:
            logger.warning(f"Seed {seed} is missing from one arm of the comparison")
            continue
        f, m = full.results[seed].report, mini.results[seed].report
        if f.test_ll is None or m.test_ll is None:
            raise ExperimentError("The comparison needs a held-out test split")
        holds = f.objective_per_point > m.objective_per_point and f.test_ll <= m.test_ll
        rows.append(
            ComparisonRow(
                seed=seed,
                full_objective_per_point=f.objective_per_point,
                minibatch_objective_per_point=m.objective_per_point,
                full_test_ll=f.test_ll,
                minibatch_test_ll=m.test_ll,
                holds=holds,
            )
        )
    if not rows:
        raise ExperimentError("No seed completed in both arms of the comparison")

    required = math.ceil(agreement * len(rows))
    holds_count = sum(row.holds for row in rows)
    outcome = ComparisonOutcome(
        full_kind=full_kind,
        minibatch_kind=minibatch_kind,
        batch_size=batch,
        rows=rows,
        holds_count=holds_count,
        required=required,
        holds=holds_count >= required,
    )
    logger.info(f"Minibatch comparison: {holds_count}/{len(rows)} seeds agree (need {required})")
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        (base / "comparison.json").write_text(outcome.model_dump_json(indent=2), encoding="utf-8")
    return outcome
