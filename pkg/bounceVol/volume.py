from __future__ import annotations

import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.special import logsumexp

from .diagnostics import EssReport, ess_report, tune_refresh_rate
from .enums import FinalMode, TuningClock
from .exceptions import BudgetException, EssException, InvalidConfigException, ScheduleException
from .polytope import HPolytope, ModelInfo, bounding_radius
from .sampler import BouncySampler, BpsState, EventCounters, GaussianTarget, NumericsStats, SamplerParams
from .streams import StreamPurpose, derive_stream

if TYPE_CHECKING:
    from .types.report import PhasePayload, RepeatPayload


__all__ = (
    "EstimatorConfig",
    "Schedule",
    "PhaseResult",
    "VolumeEstimate",
    "LogMeanExp",
    "choose_sigma0",
    "build_schedule",
    "log_density_ratio",
    "estimate_phase",
    "final_correction",
    "allocate_budget",
    "estimate_volume",
    "to_scientific",
    "relative_error",
)


Vector = npt.NDArray[np.float64]

LN_10: float = math.log(10.0)
SIGMA0_DOUBLINGS: int = 60
SIGMA0_MAX_STEPS: int = 200
REJECTION_CHUNK: int = 4096
SAMPLE_CHUNK: int = 1024


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings of one volume estimation.

    Attributes
    ----------
    total_budget: int
        ``N``, the output samples shared by all phases. Pilots are not counted. Defaults to ``100_000``.
    c_min: float
        Lower bound of the mass the first Gaussian places inside the polytope. Defaults to ``0.1``.
    c_max: float
        Upper bound of that mass. Defaults to ``0.2``.
    schedule_factor: float | None
        Ratio of successive variances. ``None`` means ``1 + 1 / sqrt(d)``.
    final_mode: :class:`FinalMode`
        How the last Gaussian is turned into a volume. Defaults to :attr:`FinalMode.exact_ratio`.
    sigma0_trials: int
        Gaussian draws per bisection step when choosing ``sigma_0``. Defaults to ``10_000``.
    seed: int
        The 64-bit run seed. Defaults to ``0``.
    pilot_len: int
        Output samples of each tuning pilot. Defaults to ``100``.
    lambda_refresh: float | None
        A fixed refresh rate, or ``None`` to tune it per phase.
    tuning_clock: :class:`TuningClock`
        The cost the refresh-rate search divides ESS by. Defaults to :attr:`TuningClock.work`.
    probe_events: int
        Bounce and reflection events simulated to tune the output rate. Defaults to ``1000``.
    escape_tol: float | None
        Passed to :class:`SamplerParams`.
    max_escalations: int
        Passed to :class:`SamplerParams`.
    flatness: float | None
        The ladder stops once ``sigma_m^2 >= flatness * R^2``. ``None`` means ``2`` for
        :attr:`FinalMode.exact_ratio` and ``100`` for :attr:`FinalMode.flat_approx`.
    """

    total_budget: int = 100_000
    c_min: float = 0.1
    c_max: float = 0.2
    schedule_factor: float | None = None
    final_mode: FinalMode = FinalMode.exact_ratio
    sigma0_trials: int = 10_000
    seed: int = 0
    pilot_len: int = 100
    lambda_refresh: float | None = None
    tuning_clock: TuningClock = TuningClock.work
    probe_events: int = 1000
    escape_tol: float | None = None
    max_escalations: int = 1
    flatness: float | None = None

    def __post_init__(self) -> None:
        if self.total_budget < 1:
            raise InvalidConfigException("total_budget must be >= 1", field="total_budget")
        if not (0.0 < self.c_min < self.c_max < 1.0):
            raise InvalidConfigException("need 0 < c_min < c_max < 1", field="c_min")
        if self.schedule_factor is not None and not self.schedule_factor > 1.0:
            raise InvalidConfigException("schedule_factor must be > 1", field="schedule_factor")
        if self.sigma0_trials < 1000:
            raise InvalidConfigException("sigma0_trials must be >= 1000", field="sigma0_trials")
        if self.pilot_len < 50:
            raise InvalidConfigException("pilot_len must be >= 50", field="pilot_len")
        if self.lambda_refresh is not None and self.lambda_refresh <= 0.0:
            raise InvalidConfigException("lambda_refresh must be > 0", field="lambda_refresh")
        if self.probe_events < 1000:
            raise InvalidConfigException("probe_events must be >= 1000", field="probe_events")
        if self.flatness is not None and not self.flatness > 0.0:
            raise InvalidConfigException("flatness must be > 0", field="flatness")

        # validates escape_tol and max_escalations
        self.sampler_params()

    @property
    def resolved_flatness(self) -> float:
        if self.flatness is not None:
            return self.flatness

        return 2.0 if self.final_mode is FinalMode.exact_ratio else 100.0

    def sampler_params(self, *, lambda_refresh: float = 1.0, lambda_out: float = 1.0) -> SamplerParams:
        return SamplerParams(
            lambda_refresh=lambda_refresh,
            lambda_out=lambda_out,
            escape_tol=self.escape_tol,
            max_escalations=self.max_escalations,
        )


@dataclass(frozen=True)
class Schedule:
    """The standard deviations ``sigma_0 < sigma_1 < ... < sigma_m`` of the cooling ladder."""

    sigmas: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.sigmas:
            raise ScheduleException("a schedule needs at least one Gaussian")

        if any(b <= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ScheduleException("schedule must be strictly increasing")

    def __len__(self) -> int:
        return len(self.sigmas)

    @property
    def m(self) -> int:
        """The number of ratios in the telescoping product."""
        return len(self.sigmas) - 1

    @property
    def variances(self) -> tuple[float, ...]:
        return tuple(s * s for s in self.sigmas)

    @property
    def phase_targets(self) -> tuple[GaussianTarget, ...]:
        return tuple(GaussianTarget.from_sigma(s) for s in self.sigmas)

    @property
    def last(self) -> float:
        return self.sigmas[-1]


@dataclass(frozen=True)
class PhaseResult:
    """Outcome of one phase of the estimator.

    Attributes
    ----------
    index: int
        Position of the phase, ``0`` being the ratio between ``sigma_0`` and ``sigma_1``.
    sigma_prev: float
        The standard deviation samples were drawn at.
    sigma_next: float
        The standard deviation of the numerator Gaussian. Equal to ``sigma_prev`` for the final correction.
    n_samples: int
        ``N_i``, output samples used.
    log_ratio: float
        ``log I_i``, or the log of the final correction.
    ess_per_sample: float
        ESS per sample measured on the production samples.
    wall_time: float
        Seconds spent sampling.
    lambda_out: float
        The tuned output rate.
    lambda_refresh: float
        The tuned refresh rate.
    pilot: :class:`EssReport` | None
        The report of the accepted tuning pilot. Could be None.
    final: bool
        Whether this is the final correction rather than a ratio of the product.
    """

    index: int
    sigma_prev: float
    sigma_next: float
    n_samples: int
    log_ratio: float
    ess_per_sample: float
    wall_time: float = 0.0
    lambda_out: float = 1.0
    lambda_refresh: float = 1.0
    pilot: EssReport | None = None
    final: bool = False

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise InvalidConfigException("a phase needs at least one sample", field="n_samples")

        if not math.isfinite(self.log_ratio):
            raise ScheduleException(f"phase {self.index} produced a non finite log ratio")

    def to_payload(self) -> PhasePayload:
        return {
            "index": self.index,
            "sigma": self.sigma_prev,
            "sigma_next": self.sigma_next,
            "N_i": self.n_samples,
            "ess_per_sample": self.ess_per_sample,
            "log_ratio": self.log_ratio,
            "final": self.final,
            "time_s": self.wall_time,
            "lambda_out": self.lambda_out,
            "lambda_refresh": self.lambda_refresh,
            "pilot": self.pilot.to_payload() if self.pilot else None,
        }


@dataclass(frozen=True)
class VolumeEstimate:
    """The result of :func:`estimate_volume`.

    Attributes
    ----------
    log_volume: float
        The natural log of the estimated volume.
    mantissa: float
        Decimal mantissa of the volume, in ``[1, 10)``.
    exponent: int
        Base-10 exponent of the volume.
    phases: tuple[:class:`PhaseResult`, ...]
        The ratio phases followed by the final correction when it was sampled.
    log_mass0: float
        Estimated log of the mass of the first Gaussian inside the polytope.
    sigma0: float
        The first standard deviation of the ladder.
    final_log_correction: float
        The log of the final correction, sampled or closed form.
    numerics: :class:`NumericsStats`
        Escape safeguard counters over every sampler of the run.
    events: :class:`EventCounters`
        Event tallies of the production samplers.
    total_time: float
        Wall-clock seconds for the whole estimation.
    rel_error: float | None
        ``|V_hat - V| / V`` when the exact volume is known. Could be None.
    repeat: int
        The repeat index the random streams were derived from.
    """

    log_volume: float
    mantissa: float
    exponent: int
    phases: tuple[PhaseResult, ...]
    log_mass0: float
    sigma0: float
    final_log_correction: float
    numerics: NumericsStats = field(default_factory=NumericsStats)
    events: EventCounters = field(default_factory=EventCounters)
    total_time: float = 0.0
    rel_error: float | None = None
    repeat: int = 0

    @property
    def volume(self) -> float:
        """The volume as a float. Overflows to ``inf`` in high dimensions; prefer :attr:`log_volume`."""
        try:
            return math.exp(self.log_volume)
        except OverflowError:
            return math.inf

    def to_payload(self) -> RepeatPayload:
        return {
            "repeat": self.repeat,
            "log_volume": self.log_volume,
            "volume_mantissa": self.mantissa,
            "volume_exp10": self.exponent,
            "rel_error": self.rel_error,
            "time_s": self.total_time,
            "sigma0": self.sigma0,
            "log_mass0": self.log_mass0,
            "phases": [phase.to_payload() for phase in self.phases],
            "events": {
                "bounces": self.events.bounces,
                "reflections": self.events.reflections,
                "refreshes": self.events.refreshes,
                "outputs": self.events.outputs,
            },
            "numerics": {"M": self.numerics.m_count, "R": self.numerics.r_count},
        }


class LogMeanExp:
    """Streaming ``log(mean(exp(values)))``.

    Each chunk is reduced with :func:`scipy.special.logsumexp` and folded into the running log-sum, so chunks
    can be discarded as they are produced.
    """

    __slots__ = ("_log_total", "_count")

    def __init__(self) -> None:
        self._log_total: float = -math.inf
        self._count: int = 0

    def __len__(self) -> int:
        return self._count

    def update(self, values: npt.ArrayLike) -> None:
        chunk = np.asarray(values, dtype=np.float64).ravel()
        if chunk.size == 0:
            return

        self._log_total = float(np.logaddexp(self._log_total, logsumexp(chunk)))
        self._count += chunk.size

    @property
    def value(self) -> float:
        if not self._count:
            raise ValueError("no values were accumulated")

        return self._log_total - math.log(self._count)


def _max_ratios(P: HPolytope, draws: Vector) -> Vector:
    # a draw z lies inside sigma * H exactly when sigma * max_i (Az)_i / b_i <= 1
    return np.max((draws @ P.A.T) / P.b, axis=1)


def _rejection_ratios(P: HPolytope, rng: np.random.Generator, n: int) -> Vector:
    out = np.empty(n)
    for start in range(0, n, REJECTION_CHUNK):
        stop = min(start + REJECTION_CHUNK, n)
        out[start:stop] = _max_ratios(P, rng.standard_normal((stop - start, P.dim)))

    return out


def choose_sigma0(
    P: HPolytope, config: EstimatorConfig, *, radius: float | None = None, repeat: int = 0
) -> tuple[float, float]:
    """Choose ``sigma_0`` so that ``N(0, sigma_0^2 I)`` puts between ``c_min`` and ``c_max`` of its mass inside ``P``.

    The fraction is estimated by rejection sampling. Every candidate reuses the same standard normal draws,
    so the estimated fraction is monotone in ``sigma`` and geometric bisection is well posed.

    Parameters
    ----------
    P: :class:`HPolytope`
        The polytope.
    config: :class:`EstimatorConfig`
        Supplies ``c_min``, ``c_max``, ``sigma0_trials`` and ``seed``.
    radius: float | None
        A bounding radius of ``P``. Computed by linear programming when ``None``.
    repeat: int
        The repeat index the rejection stream is derived from. Defaults to ``0``.

    Returns
    -------
    tuple[float, float]
        ``sigma_0`` and the log of its mass inside ``P``, re-estimated on ``4 * sigma0_trials`` fresh draws.

    Raises
    ------
    ScheduleException
        No ``sigma`` could be bracketed after 60 doublings.
    """
    if radius is None:
        radius = bounding_radius(P)

    rng = derive_stream(config.seed, repeat, 0, StreamPurpose.rejection)
    ratios = _rejection_ratios(P, rng, config.sigma0_trials)

    def mass(sigma: float) -> float:
        return float(np.mean(sigma * ratios <= 1.0))

    lo = 0.01 * radius / math.sqrt(P.dim)
    hi = 4.0 * radius

    for _ in range(SIGMA0_DOUBLINGS):
        if mass(hi) <= config.c_max:
            break
        hi *= 2.0
    else:
        raise ScheduleException(f"unable to bracket sigma_0: mass above {config.c_max} at sigma={hi:.6g}")

    for _ in range(SIGMA0_DOUBLINGS):
        if mass(lo) >= config.c_min:
            break
        lo /= 2.0
    else:
        raise ScheduleException(f"unable to bracket sigma_0: mass below {config.c_min} at sigma={lo:.6g}")

    sigma = math.sqrt(lo * hi)
    for _ in range(SIGMA0_MAX_STEPS):
        p = mass(sigma)
        if config.c_min <= p <= config.c_max:
            break

        if p > config.c_max:
            lo = sigma
        else:
            hi = sigma

        sigma = math.sqrt(lo * hi)
    else:
        raise ScheduleException(f"sigma_0 bisection did not converge in [{lo:.6g}, {hi:.6g}]")

    final = _rejection_ratios(P, rng, 4 * config.sigma0_trials)
    p_final = float(np.mean(sigma * final <= 1.0))
    if p_final <= 0.0:
        raise ScheduleException(f"no rejection draw landed inside the polytope at sigma_0={sigma:.6g}")

    logger.info(f"Chose sigma_0={sigma:.6g} with mass {p_final:.4f} inside the polytope")
    return sigma, math.log(p_final)


def build_schedule(
    sigma0: float, radius: float, factor: float | None = None, dim: int = 1, *, flatness: float = 2.0
) -> Schedule:
    """The geometric variance ladder ``sigma_{i+1}^2 = factor * sigma_i^2``.

    The ladder stops at the first ``sigma_m^2 >= flatness * R^2``. When ``sigma_0`` already passes the
    threshold the schedule holds ``sigma_0`` alone.

    Parameters
    ----------
    sigma0: float
        The first standard deviation.
    radius: float
        ``R``, a bounding radius of the polytope.
    factor: float | None
        Ratio of successive variances. ``None`` means ``1 + 1 / sqrt(dim)``.
    dim: int
        The dimension ``d``. Defaults to ``1``.
    flatness: float
        Defaults to ``2``.
    """
    if sigma0 <= 0.0 or radius <= 0.0:
        raise InvalidConfigException("sigma0 and radius must be positive", field="sigma0")

    if factor is None:
        factor = 1.0 + 1.0 / math.sqrt(dim)
    if factor <= 1.0:
        raise InvalidConfigException("schedule factor must be > 1", field="schedule_factor")

    # relative slack so that a ladder landing on the threshold up to rounding stops there
    threshold = flatness * radius * radius * (1.0 - 1e-12)

    variances = [sigma0 * sigma0]
    while variances[-1] < threshold:
        variances.append(variances[-1] * factor)

    logger.debug(f"Built a schedule of {len(variances)} Gaussians with factor {factor:.6g}")
    return Schedule(tuple(math.sqrt(v) for v in variances))


def log_density_ratio(x: npt.ArrayLike, sigma_prev: float, sigma_next: float, dim: int) -> float | Vector:
    """``log(f_next(x) / f_prev(x))`` for normalized isotropic Gaussians.

    ``x`` may be one point or an ``n x d`` block, in which case one value per row is returned.
    """
    points = np.asarray(x, dtype=np.float64)
    sq_norms = np.einsum("...i,...i->...", points, points)

    out = dim * math.log(sigma_prev / sigma_next) + 0.5 * sq_norms * (
        1.0 / (sigma_prev * sigma_prev) - 1.0 / (sigma_next * sigma_next)
    )
    if points.ndim == 1:
        return float(out)

    return out


def _sample_phase(
    sampler: BouncySampler, n_samples: int, log_terms: Callable[[Vector], Vector]
) -> tuple[float, float, float]:
    accumulator = LogMeanExp()
    blocks: list[Vector] = []

    started = time.perf_counter()
    remaining = n_samples
    while remaining:
        size = min(SAMPLE_CHUNK, remaining)
        block = sampler.run_safeguarded(size)
        accumulator.update(log_terms(block))
        blocks.append(block)
        remaining -= size
    wall_time = time.perf_counter() - started

    try:
        ess_per_sample = ess_report(np.vstack(blocks)).ess_per_sample
    except EssException:
        ess_per_sample = 1.0

    return accumulator.value, ess_per_sample, wall_time


def estimate_phase(
    P: HPolytope,
    sigma_prev: float,
    sigma_next: float,
    n_samples: int,
    sampler: BouncySampler,
    *,
    index: int = 0,
    pilot: EssReport | None = None,
) -> PhaseResult:
    """Estimate ``I_i``, the ratio of the masses inside ``P`` of the Gaussians at ``sigma_next`` and ``sigma_prev``.

    ``sampler`` must target the Gaussian at ``sigma_prev``. The mean of the density ratios is accumulated
    in the log domain while the samples stream out.
    """
    if n_samples < 1:
        raise InvalidConfigException(f"n_samples must be >= 1, got {n_samples}", field="n_samples")

    if not math.isclose(sampler.target.sigma, sigma_prev, rel_tol=1e-12):
        raise InvalidConfigException(
            f"sampler targets sigma={sampler.target.sigma:.6g}, expected {sigma_prev:.6g}", field="sigma_prev"
        )

    log_ratio, ess_per_sample, wall_time = _sample_phase(
        sampler, n_samples, lambda block: np.asarray(log_density_ratio(block, sigma_prev, sigma_next, P.dim))
    )

    logger.debug(f"Phase {index}: sigma {sigma_prev:.6g} -> {sigma_next:.6g}, log I={log_ratio:.6g}, N={n_samples}")
    return PhaseResult(
        index=index,
        sigma_prev=sigma_prev,
        sigma_next=sigma_next,
        n_samples=n_samples,
        log_ratio=log_ratio,
        ess_per_sample=ess_per_sample,
        wall_time=wall_time,
        lambda_out=sampler.params.lambda_out,
        lambda_refresh=sampler.params.lambda_refresh,
        pilot=pilot,
    )


def final_correction(
    P: HPolytope,
    sigma_m: float,
    n_samples: int,
    sampler: BouncySampler | None,
    mode: FinalMode = FinalMode.exact_ratio,
    *,
    index: int = 0,
    pilot: EssReport | None = None,
) -> tuple[float, PhaseResult | None]:
    """The log of ``Vol(P) / integral of f_m over P``.

    With :attr:`FinalMode.flat_approx` this is the closed form ``(d / 2) ln(2 pi sigma_m^2)`` and no sampler is
    needed. With :attr:`FinalMode.exact_ratio` it is the mean of ``1 / f_m`` over ``n_samples`` draws from
    ``f_m`` restricted to ``P``.

    Returns
    -------
    tuple[float, :class:`PhaseResult` | None]
        The log correction and, for the sampled mode, the phase record.
    """
    log_flat = 0.5 * P.dim * math.log(2.0 * math.pi * sigma_m * sigma_m)

    if mode is FinalMode.flat_approx:
        return log_flat, None

    if sampler is None:
        raise InvalidConfigException("the exact final correction needs a sampler", field="sampler")

    inv_two_var = 1.0 / (2.0 * sigma_m * sigma_m)
    log_value, ess_per_sample, wall_time = _sample_phase(
        sampler, n_samples, lambda block: log_flat + inv_two_var * np.einsum("ij,ij->i", block, block)
    )

    result = PhaseResult(
        index=index,
        sigma_prev=sigma_m,
        sigma_next=sigma_m,
        n_samples=n_samples,
        log_ratio=log_value,
        ess_per_sample=ess_per_sample,
        wall_time=wall_time,
        lambda_out=sampler.params.lambda_out,
        lambda_refresh=sampler.params.lambda_refresh,
        pilot=pilot,
        final=True,
    )
    return log_value, result


def allocate_budget(ess: Sequence[float], budget: int) -> list[int]:
    """Split ``budget`` so that every phase gets about the same number of independent samples.

    ``N_i`` is proportional to ``1 / ess_i``, every ``N_i`` is at least ``1`` and the largest-remainder rule
    makes the counts add up to ``budget`` exactly.

    Raises
    ------
    BudgetException
        ``budget`` is smaller than the number of phases.
    InvalidConfigException
        An ESS value is not positive.
    """
    weights = np.asarray(ess, dtype=np.float64)
    count = weights.size

    if count == 0:
        return []
    if budget < count:
        raise BudgetException(budget=budget, required=count)
    if np.any(~(weights > 0.0)):
        raise InvalidConfigException("every ess must be positive", field="ess")

    shares = budget * (1.0 / weights) / np.sum(1.0 / weights)
    counts = np.maximum(np.floor(shares).astype(np.int64), 1)
    remainders = shares - np.floor(shares)

    # stable sorts keep the smallest index first among equal remainders
    diff = budget - int(counts.sum())
    if diff > 0:
        order = np.argsort(-remainders, kind="stable")
        for i in range(diff):
            counts[order[i % count]] += 1
    while diff < 0:
        for j in np.argsort(remainders, kind="stable"):
            if diff == 0:
                break
            if counts[j] > 1:
                counts[j] -= 1
                diff += 1

    return [int(c) for c in counts]


def to_scientific(log_value: float) -> tuple[float, int]:
    """Split ``exp(log_value)`` into a mantissa in ``[1, 10)`` and a base-10 exponent."""
    log10 = log_value / LN_10
    nearest = round(log10)
    if abs(log10 - nearest) < 1e-12 * max(1.0, abs(log10)):
        log10 = float(nearest)

    exponent = math.floor(log10)
    mantissa = 10.0 ** (log10 - exponent)

    if mantissa >= 10.0:
        mantissa /= 10.0
        exponent += 1

    return mantissa, int(exponent)


def relative_error(log_estimate: float, log_exact: float) -> float:
    """``|V_hat - V| / V`` computed in the log domain."""
    return abs(math.expm1(log_estimate - log_exact))


@dataclass
class _PhaseTuning:
    sigma: float
    lambda_out: float
    lambda_refresh: float
    report: EssReport
    end: Vector


def _tune_phase(
    P: HPolytope, sigma: float, start: Vector | None, config: EstimatorConfig, repeat: int, phase: int
) -> tuple[_PhaseTuning, NumericsStats]:
    rng = derive_stream(config.seed, repeat, phase, StreamPurpose.tuning)
    state = BpsState.start(P, start, rng)
    sampler = BouncySampler(P, GaussianTarget.from_sigma(sigma), config.sampler_params(), state)

    lambda_out = sampler.probe_output_rate(config.probe_events)
    sampler.params = sampler.params.with_rates(lambda_out=lambda_out)

    if config.lambda_refresh is None:
        lambda_refresh, report = tune_refresh_rate(
            lambda rate: sampler.pilot(config.pilot_len, rate), clock=config.tuning_clock
        )
    else:
        lambda_refresh = config.lambda_refresh
        report = sampler.pilot(config.pilot_len, lambda_refresh)

    logger.debug(
        f"Tuned phase {phase} at sigma={sigma:.6g}: lambda_out={lambda_out:.4g}, lambda_refresh={lambda_refresh:.4g}, "
        f"ess/sample={report.ess_per_sample:.3f}"
    )
    return _PhaseTuning(sigma, lambda_out, lambda_refresh, report, state.x.copy()), sampler.stats


def estimate_volume(P: HPolytope, info: ModelInfo, config: EstimatorConfig, repeat: int = 0) -> VolumeEstimate:
    """Estimate the volume of ``P`` by multiphase Gaussian cooling.

    The pipeline is: choose ``sigma_0`` by rejection sampling, build the variance ladder, tune every
    phase (output rate, then refresh rate, then a pilot measuring its ESS) on a warm-started tuning
    chain, split the budget in inverse proportion to the pilot ESS, estimate every ratio and the final
    correction, and assemble everything in the log domain.

    Parameters
    ----------
    P: :class:`HPolytope`
        The polytope. The origin must be strictly inside.
    info: :class:`ModelInfo`
        Supplies the bounding radius and, when known, the exact volume for the relative error.
    config: :class:`EstimatorConfig`
        The estimator settings.
    repeat: int
        The repeat index random streams are derived from. Defaults to ``0``.

    Raises
    ------
    BudgetException
        The budget is smaller than the number of sampled phases.
    ScheduleException
        ``sigma_0`` could not be chosen.
    """
    started = time.perf_counter()

    radius = info.bounding_radius
    if radius is None:
        logger.warning(f"No bounding radius known for {P!r}, computing one by linear programming")
        radius = bounding_radius(P)

    sigma0, log_mass0 = choose_sigma0(P, config, radius=radius, repeat=repeat)
    schedule = build_schedule(sigma0, radius, config.schedule_factor, P.dim, flatness=config.resolved_flatness)

    sampled = list(schedule.sigmas[:-1])
    if config.final_mode is FinalMode.exact_ratio:
        sampled.append(schedule.last)

    logger.info(f"Repeat {repeat}: schedule of {len(schedule)} Gaussians, {len(sampled)} sampled phases")

    if config.total_budget < len(sampled):
        raise BudgetException(budget=config.total_budget, required=len(sampled))

    numerics = NumericsStats()
    tunings: list[_PhaseTuning] = []
    start: Vector | None = None
    for phase, sigma in enumerate(sampled):
        tuning, stats = _tune_phase(P, sigma, start, config, repeat, phase)
        tunings.append(tuning)
        numerics += stats
        start = tuning.end

    counts = allocate_budget([t.report.ess_per_sample for t in tunings], config.total_budget)

    events = EventCounters()
    phases: list[PhaseResult] = []
    final_log = 0.0
    for phase, (tuning, n_samples) in enumerate(zip(tunings, counts)):
        state = BpsState.start(P, tuning.end, derive_stream(config.seed, repeat, phase, StreamPurpose.production))
        params = config.sampler_params(lambda_refresh=tuning.lambda_refresh, lambda_out=tuning.lambda_out)
        sampler = BouncySampler(P, GaussianTarget.from_sigma(tuning.sigma), params, state)

        if phase < schedule.m:
            result = estimate_phase(
                P, tuning.sigma, schedule.sigmas[phase + 1], n_samples, sampler, index=phase, pilot=tuning.report
            )
        else:
            final_log, final = final_correction(
                P, tuning.sigma, n_samples, sampler, FinalMode.exact_ratio, index=phase, pilot=tuning.report
            )
            assert final is not None
            result = final

        phases.append(result)
        numerics += sampler.stats
        events += state.counters

    if config.final_mode is FinalMode.flat_approx:
        final_log, _ = final_correction(P, schedule.last, 0, None, FinalMode.flat_approx)

    log_volume = log_mass0 + sum(p.log_ratio for p in phases if not p.final) + final_log
    mantissa, exponent = to_scientific(log_volume)

    rel_error = None
    if info.exact_log_volume is not None:
        rel_error = relative_error(log_volume, info.exact_log_volume)

    total_time = time.perf_counter() - started
    logger.info(
        f"Repeat {repeat}: volume {mantissa:.4f}e{exponent:+d} in {total_time:.2f}s"
        + (f", relative error {rel_error:.3%}" if rel_error is not None else "")
    )

    if numerics.m_count:
        logger.warning(f"Repeat {repeat}: {numerics.m_count} escapes detected, {numerics.r_count} fallbacks")

    return VolumeEstimate(
        log_volume=log_volume,
        mantissa=mantissa,
        exponent=exponent,
        phases=tuple(phases),
        log_mass0=log_mass0,
        sigma0=sigma0,
        final_log_correction=final_log,
        numerics=numerics,
        events=events,
        total_time=total_time,
        rel_error=rel_error,
        repeat=repeat,
    )
