from __future__ import annotations

import asyncio
import math
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from loguru import logger

from .enums import ModelKind
from .exceptions import InvalidConfigException
from .polytope import HPolytope, ModelInfo, make_model
from .reports import BenchmarkRecord, BenchmarkReport, RunReport
from .volume import EstimatorConfig, VolumeEstimate, estimate_volume

__all__ = (
    "RepeatPool",
    "BudgetSearch",
    "search_budget",
    "run_volume",
    "run_benchmark",
    "BENCHMARK_DIMS",
)


BENCHMARK_DIMS: tuple[int, ...] = (50, 70, 100, 140, 175, 250)


def _run_repeat(P: HPolytope, info: ModelInfo, config: EstimatorConfig, repeat: int) -> VolumeEstimate:
    return estimate_volume(P, info, config, repeat)


class RepeatPool:
    """Runs independent repeats of :func:`estimate_volume`.

    Every repeat derives its random streams from ``(seed, repeat)``, so results do not depend on which
    worker ran them or in what order. With ``jobs == 1`` repeats run inline in the calling process.

    Parameters
    ----------
    jobs: int
        The maximum number of worker processes. Defaults to ``1``.
    """

    def __init__(self, jobs: int = 1) -> None:
        if jobs < 1:
            raise InvalidConfigException(f"jobs must be >= 1, got {jobs}", field="jobs")

        self._jobs = jobs

    def __repr__(self) -> str:
        return f"RepeatPool(jobs={self._jobs})"

    @property
    def jobs(self) -> int:
        return self._jobs

    async def run(
        self, P: HPolytope, info: ModelInfo, config: EstimatorConfig, repeats: Iterable[int]
    ) -> list[VolumeEstimate]:
        """Run the given repeats and return their estimates ordered by repeat index."""
        indices = list(repeats)

        if self._jobs == 1 or len(indices) <= 1:
            results = []
            for repeat in indices:
                results.append(_run_repeat(P, info, config, repeat))
                logger.debug(f"Repeat {repeat} finished")
            return results

        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=min(self._jobs, len(indices))) as executor:
            futures = [loop.run_in_executor(executor, _run_repeat, P, info, config, repeat) for repeat in indices]
            results = await asyncio.gather(*futures)

        return sorted(results, key=lambda e: e.repeat)

    def run_sync(
        self, P: HPolytope, info: ModelInfo, config: EstimatorConfig, repeats: Iterable[int]
    ) -> list[VolumeEstimate]:
        return asyncio.run(self.run(P, info, config, repeats))


def run_volume(
    P: HPolytope,
    info: ModelInfo,
    config: EstimatorConfig,
    *,
    repeats: int = 24,
    pool: RepeatPool | None = None,
) -> RunReport:
    """Run ``repeats`` independent estimates of the volume of ``P`` and collect them in a :class:`RunReport`."""
    if repeats < 1:
        raise InvalidConfigException(f"repeats must be >= 1, got {repeats}", field="repeats")

    pool = pool or RepeatPool()
    estimates = pool.run_sync(P, info, config, range(repeats))

    report = RunReport.from_estimates(
        estimates,
        model=info.name,
        dim=P.dim,
        seed=config.seed,
        budget=config.total_budget,
        exact_log_volume=info.exact_log_volume,
    )

    error = report.aggregate.median_rel_error
    logger.info(
        f"{info.name} d={P.dim} N={config.total_budget}: median time {report.aggregate.median_time_s:.2f}s"
        + (f", median relative error {error:.3%}" if error is not None else "")
    )
    return report


@dataclass
class BudgetSearch:
    """Outcome of :func:`search_budget`.

    Attributes
    ----------
    n: int
        The last budget tested.
    error: float
        The error measured at :attr:`n`.
    history: list[tuple[int, float]]
        Every ``(N, error)`` pair in the order they were measured.
    incomplete: bool
        Whether the search ran out of rounds or time before converging.
    """

    n: int
    error: float
    history: list[tuple[int, float]] = field(default_factory=list)
    incomplete: bool = False


def search_budget(
    measure: Callable[[int], float],
    *,
    start: int = 10_000,
    target: float = 0.04,
    band: float = 0.01,
    min_delta: float = 0.05,
    max_rounds: int = 32,
    deadline: float | None = None,
) -> BudgetSearch:
    """Search the smallest budget whose error lies in ``[target - band, target + band]``.

    The budget doubles (or halves) until the error crosses the band, then the bracket is bisected. The
    search also stops when the next budget would differ from the last tested one by less than ``min_delta``
    relative.

    Parameters
    ----------
    measure: Callable[[int], float]
        Returns the error observed with a given budget, usually a median over repeats.
    start: int
        The first budget tested. Defaults to ``10_000``.
    target: float
        Defaults to ``0.04``.
    band: float
        Defaults to ``0.01``.
    min_delta: float
        Defaults to ``0.05``.
    max_rounds: int
        Maximum number of budgets measured. Defaults to ``32``.
    deadline: float | None
        A :func:`time.monotonic` instant after which no new budget is measured.
    """
    if start < 1:
        raise InvalidConfigException(f"start must be >= 1, got {start}", field="start")
    if not 0.0 <= band < target:
        raise InvalidConfigException("need 0 <= band < target", field="band")

    history: list[tuple[int, float]] = []
    too_few: int | None = None
    too_many: int | None = None
    n = start

    for _ in range(max_rounds):
        if deadline is not None and time.monotonic() > deadline:
            break

        error = measure(n)
        history.append((n, error))
        logger.debug(f"Budget search: N={n} gives error {error:.4g}")

        if abs(error - target) <= band:
            return BudgetSearch(n, error, history)

        if error > target + band:
            too_few = n
        else:
            too_many = n

        if too_many is None:
            following = 2 * n
        elif too_few is None:
            following = max(1, n // 2)
        else:
            following = (too_few + too_many) // 2

        if abs(following - n) < min_delta * n:
            return BudgetSearch(n, error, history)

        n = following

    last_n, last_error = history[-1] if history else (start, math.nan)
    logger.warning(f"Budget search stopped after {len(history)} rounds without converging (N={last_n})")
    return BudgetSearch(last_n, last_error, history, incomplete=True)


def run_benchmark(
    kind: ModelKind,
    dims: Sequence[int],
    config: EstimatorConfig,
    *,
    repeats: int = 24,
    target: float = 0.04,
    band: float = 0.01,
    min_delta: float = 0.05,
    start: int = 10_000,
    max_rounds: int = 32,
    time_limit: float | None = None,
    pool: RepeatPool | None = None,
) -> BenchmarkReport:
    """Run the budget search of :func:`search_budget` for every dimension in ``dims``.

    The error of a budget is the median relative error of ``repeats`` independent estimates. When
    ``time_limit`` seconds pass, the running search stops and later dimensions are skipped; the report is
    then marked incomplete.

    Raises
    ------
    InvalidConfigException
        The model has no exact volume to measure errors against.
    """
    if kind is ModelKind.file:
        raise InvalidConfigException("benchmarks need a model with a known volume", field="model")

    pool = pool or RepeatPool()
    deadline = None if time_limit is None else time.monotonic() + time_limit

    records: list[BenchmarkRecord] = []
    skipped = False

    for dim in dims:
        if deadline is not None and time.monotonic() > deadline:
            logger.warning(f"Time limit reached, skipping d={dim}")
            skipped = True
            continue

        P, info = make_model(kind, dim)
        reports: dict[int, RunReport] = {}

        def measure(n: int) -> float:
            report = run_volume(P, info, replace(config, total_budget=n), repeats=repeats, pool=pool)
            reports[n] = report

            error = report.aggregate.median_rel_error
            assert error is not None
            return error

        search = search_budget(
            measure,
            start=start,
            target=target,
            band=band,
            min_delta=min_delta,
            max_rounds=max_rounds,
            deadline=deadline,
        )

        if not search.history:
            skipped = True
            continue

        record = BenchmarkRecord(dim=dim, n_final=search.n, report=reports[search.n], incomplete=search.incomplete)
        records.append(record)
        logger.info(f"Benchmark {kind.value} d={dim}: N={search.n}, error {search.error:.3%}")

    return BenchmarkReport(
        model=kind.value,
        seed=config.seed,
        repeats=repeats,
        target_error=target,
        error_band=band,
        records=records,
        incomplete=skipped,
    )
