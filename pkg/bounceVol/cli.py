from __future__ import annotations

import argparse
import contextlib
import csv
import math
import sys
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np
from loguru import logger

from .diagnostics import tune_refresh_rate
from .enums import EventKind, FinalMode, ModelKind, OutputFormat, TuningClock
from .exceptions import BaseBounceException, InvalidConfigException
from .harness import BENCHMARK_DIMS, RepeatPool, run_benchmark, run_volume
from .polytope import HPolytope, ModelInfo, make_model
from .sampler import BouncySampler, BpsState, EventListener, GaussianTarget
from .streams import StreamPurpose, derive_stream
from .volume import EstimatorConfig

__all__ = (
    "RunConfig",
    "build_parser",
    "cmd_volume",
    "cmd_benchmark",
    "cmd_sample",
    "main",
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_INCOMPLETE",
)


EXIT_OK: int = 0
EXIT_ERROR: int = 2
EXIT_INCOMPLETE: int = 3

COMMANDS: tuple[str, ...] = ("volume", "benchmark", "sample")
LOG_LEVELS: tuple[str, ...] = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, validated before any computation starts.

    Attributes
    ----------
    command: str
        One of ``volume``, ``benchmark`` or ``sample``.
    model: :class:`ModelKind`
        The polytope model.
    dim: int | None
        The dimension. Ignored for file polytopes, which carry their own.
    path: Path | None
        The polytope file for :attr:`ModelKind.file`.
    estimator: :class:`EstimatorConfig`
        Estimator settings, including ``N`` and the seed.
    repeats: int
        Independent repeats per budget. Defaults to ``24``.
    jobs: int
        Worker processes. Defaults to ``1``.
    target_error: float
        Defaults to ``0.04``.
    error_band: float
        Defaults to ``0.01``.
    min_delta: float
        Defaults to ``0.05``.
    dims: tuple[int, ...]
        Benchmark dimensions.
    start_samples: int
        First budget of the benchmark search. Defaults to ``10_000``.
    time_limit: float | None
        Benchmark time limit in seconds.
    sigma: float | None
        Standard deviation of the Gaussian sampled by ``sample``.
    output_format: :class:`OutputFormat`
        Defaults to :attr:`OutputFormat.json`.
    out: Path | None
        Where to write the report. ``None`` means standard output.
    event_log: Path | None
        Where ``sample`` writes every sampler event.
    """

    command: str
    model: ModelKind
    dim: int | None
    estimator: EstimatorConfig
    path: Path | None = None
    repeats: int = 24
    jobs: int = 1
    target_error: float = 0.04
    error_band: float = 0.01
    min_delta: float = 0.05
    dims: tuple[int, ...] = field(default=BENCHMARK_DIMS)
    start_samples: int = 10_000
    time_limit: float | None = None
    sigma: float | None = None
    output_format: OutputFormat = OutputFormat.json
    out: Path | None = None
    event_log: Path | None = None

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise InvalidConfigException(f"unknown command {self.command!r}", field="command")
        if self.model is ModelKind.file and self.path is None:
            raise InvalidConfigException("--model file needs --file", field="file")
        if self.model is not ModelKind.file and self.command != "benchmark" and (self.dim is None or self.dim < 1):
            raise InvalidConfigException("--dim must be a positive integer", field="dim")
        if self.repeats < 1:
            raise InvalidConfigException("--repeats must be >= 1", field="repeats")
        if self.jobs < 1:
            raise InvalidConfigException("--jobs must be >= 1", field="jobs")
        if not 0.0 <= self.error_band < self.target_error:
            raise InvalidConfigException("need 0 <= --error-band < --target-error", field="error_band")
        if not 0.0 < self.min_delta < 1.0:
            raise InvalidConfigException("--min-delta must be in (0, 1)", field="min_delta")
        if any(d < 1 for d in self.dims) or not self.dims:
            raise InvalidConfigException("--dims must list positive integers", field="dims")
        if self.start_samples < 1:
            raise InvalidConfigException("--start-samples must be >= 1", field="start_samples")
        if self.time_limit is not None and self.time_limit <= 0.0:
            raise InvalidConfigException("--time-limit must be positive", field="time_limit")
        if self.command == "benchmark" and self.model is ModelKind.file:
            raise InvalidConfigException("benchmarks need a model with a known volume", field="model")
        if self.command == "sample":
            if self.sigma is None or not self.sigma > 0.0:
                raise InvalidConfigException("sample needs a positive --sigma", field="sigma")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        model, path = _parse_model(args.model, args.file)

        estimator = EstimatorConfig(
            total_budget=args.samples,
            c_min=args.cmin,
            c_max=args.cmax,
            schedule_factor=args.schedule_factor,
            final_mode=FinalMode(args.final_mode),
            sigma0_trials=args.sigma0_trials,
            seed=args.seed,
            pilot_len=args.pilot_len,
            lambda_refresh=_parse_rate(args.lambda_refresh),
            tuning_clock=TuningClock(args.tuning_clock),
            escape_tol=args.escape_tol,
            max_escalations=args.max_escalations,
        )

        return cls(
            command=args.command,
            model=model,
            dim=args.dim,
            path=path,
            estimator=estimator,
            repeats=args.repeats,
            jobs=args.jobs,
            target_error=args.target_error,
            error_band=args.error_band,
            min_delta=args.min_delta,
            dims=_parse_dims(args.dims),
            start_samples=args.start_samples,
            time_limit=args.time_limit,
            sigma=args.sigma,
            output_format=OutputFormat(args.format),
            out=args.out,
            event_log=args.event_log,
        )

    def load_model(self) -> tuple[HPolytope, ModelInfo]:
        return make_model(self.model, None if self.model is ModelKind.file else self.dim, self.path)


def _parse_model(value: str, path: Path | None) -> tuple[ModelKind, Path | None]:
    if value.startswith("file:"):
        return ModelKind.file, Path(value.removeprefix("file:"))

    try:
        kind = ModelKind(value)
    except ValueError:
        raise InvalidConfigException(f"unknown model {value!r}", field="model") from None

    return kind, path


def _parse_rate(value: str) -> float | None:
    if value == "auto":
        return None

    try:
        rate = float(value)
    except ValueError:
        raise InvalidConfigException(f"--lambda-refresh must be 'auto' or a number, got {value!r}") from None

    if not (rate > 0.0 and math.isfinite(rate)):
        raise InvalidConfigException("--lambda-refresh must be positive", field="lambda_refresh")

    return rate


def _parse_dims(value: str | None) -> tuple[int, ...]:
    if not value:
        return BENCHMARK_DIMS

    try:
        return tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise InvalidConfigException(f"--dims must be a comma separated list of integers, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bouncevol",
        description="Estimate polytope volumes by Gaussian cooling with the Bouncy Particle Sampler.",
    )
    parser.add_argument("command", choices=COMMANDS)

    model = parser.add_argument_group("model")
    model.add_argument("--model", default="cube", help="cube, std-simplex, iso-simplex, file or file:<path>")
    model.add_argument("--file", type=Path, default=None, help="Polytope file for --model file.")
    model.add_argument("--dim", type=int, default=None)

    run = parser.add_argument_group("run")
    run.add_argument("--samples", type=int, default=100_000, help="Total output-sample budget N.")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--repeats", type=int, default=24)
    run.add_argument("--jobs", type=int, default=1, help="Worker processes for repeats.")

    estimator = parser.add_argument_group("estimator")
    estimator.add_argument("--schedule-factor", type=float, default=None)
    estimator.add_argument("--final-mode", choices=[m.value for m in FinalMode], default=FinalMode.exact_ratio.value)
    estimator.add_argument("--cmin", type=float, default=0.1)
    estimator.add_argument("--cmax", type=float, default=0.2)
    estimator.add_argument("--sigma0-trials", type=int, default=10_000)
    estimator.add_argument("--pilot-len", type=int, default=100)
    estimator.add_argument("--lambda-refresh", default="auto", help="'auto' or a fixed refresh rate.")
    estimator.add_argument("--tuning-clock", choices=[c.value for c in TuningClock], default=TuningClock.work.value)
    estimator.add_argument("--escape-tol", type=float, default=None)
    estimator.add_argument("--max-escalations", type=int, default=1)

    benchmark = parser.add_argument_group("benchmark")
    benchmark.add_argument("--dims", default=None, help="Comma separated dimensions.")
    benchmark.add_argument("--target-error", type=float, default=0.04)
    benchmark.add_argument("--error-band", type=float, default=0.01)
    benchmark.add_argument("--min-delta", type=float, default=0.05)
    benchmark.add_argument("--start-samples", type=int, default=10_000)
    benchmark.add_argument("--time-limit", type=float, default=None, help="Seconds.")

    sample = parser.add_argument_group("sample")
    sample.add_argument("--sigma", type=float, default=None)
    sample.add_argument("--event-log", type=Path, default=None)

    output = parser.add_argument_group("output")
    output.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.json.value)
    output.add_argument("--out", type=Path, default=None)
    output.add_argument("--log-level", choices=LOG_LEVELS, default="WARNING")

    return parser


@contextlib.contextmanager
def _open_output(path: Path | None) -> Iterator[IO[str]]:
    if path is None:
        yield sys.stdout
        return

    with open(path, "w", encoding="utf-8", newline="") as fp:
        yield fp


def cmd_volume(config: RunConfig) -> int:
    P, info = config.load_model()
    report = run_volume(P, info, config.estimator, repeats=config.repeats, pool=RepeatPool(config.jobs))

    with _open_output(config.out) as fp:
        if config.output_format is OutputFormat.json:
            report.write_json(fp)
        else:
            report.write_csv(fp)

    return EXIT_OK


def cmd_benchmark(config: RunConfig) -> int:
    report = run_benchmark(
        config.model,
        config.dims,
        config.estimator,
        repeats=config.repeats,
        target=config.target_error,
        band=config.error_band,
        min_delta=config.min_delta,
        start=config.start_samples,
        time_limit=config.time_limit,
        pool=RepeatPool(config.jobs),
    )

    with _open_output(config.out) as fp:
        if config.output_format is OutputFormat.json:
            report.write_json(fp)
        else:
            report.write_csv(fp)

    if report.incomplete:
        logger.warning("Benchmark incomplete, partial results were written")
        return EXIT_INCOMPLETE

    return EXIT_OK


def _event_writer(fp: IO[str], dim: int) -> EventListener:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["t", "kind", *(f"x{j + 1}" for j in range(dim))])

    def write(t: float, kind: EventKind, x: np.ndarray) -> None:
        writer.writerow([repr(t), kind.value, *(repr(float(c)) for c in x)])

    return write


def cmd_sample(config: RunConfig) -> int:
    """Write ``N`` output samples of the Gaussian at ``--sigma`` restricted to the polytope as CSV.

    Rates are tuned on a separate stream first. With ``--event-log`` every event of the production run is
    written as ``t, kind, x_1, ..., x_d``.
    """
    assert config.sigma is not None
    P, _ = config.load_model()
    estimator = config.estimator
    target = GaussianTarget.from_sigma(config.sigma)

    tuning_state = BpsState.start(P, None, derive_stream(estimator.seed, 0, 0, StreamPurpose.tuning))
    tuner = BouncySampler(P, target, estimator.sampler_params(), tuning_state)
    lambda_out = tuner.probe_output_rate(estimator.probe_events)
    tuner.params = tuner.params.with_rates(lambda_out=lambda_out)

    lambda_refresh = estimator.lambda_refresh
    if lambda_refresh is None:
        lambda_refresh, _ = tune_refresh_rate(
            lambda rate: tuner.pilot(estimator.pilot_len, rate), clock=estimator.tuning_clock
        )

    logger.info(f"Sampling sigma={config.sigma:.6g}, lambda_out={lambda_out:.4g}, lambda_refresh={lambda_refresh:.4g}")

    params = estimator.sampler_params(lambda_refresh=lambda_refresh, lambda_out=lambda_out)
    state = BpsState.start(P, tuning_state.x, derive_stream(estimator.seed, 0, 0, StreamPurpose.sample))

    with contextlib.ExitStack() as stack:
        listener: EventListener | None = None
        if config.event_log is not None:
            log_fp = stack.enter_context(open(config.event_log, "w", encoding="utf-8", newline=""))
            listener = _event_writer(log_fp, P.dim)

        sampler = BouncySampler(P, target, params, state, listener=listener)
        samples = sampler.run_safeguarded(estimator.total_budget)

    with _open_output(config.out) as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(P.dim)])
        writer.writerows([repr(float(c)) for c in row] for row in samples)

    if sampler.stats.m_count:
        logger.warning(f"{sampler.stats.m_count} escapes detected, {sampler.stats.r_count} fallbacks")

    return EXIT_OK


HANDLERS = {
    "volume": cmd_volume,
    "benchmark": cmd_benchmark,
    "sample": cmd_sample,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    logger.remove()
    logger.add(sys.stderr, level=args.log_level)

    try:
        config = RunConfig.from_args(args)
        return HANDLERS[config.command](config)
    except BaseBounceException as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR
