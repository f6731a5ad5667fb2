from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from loguru import logger

from .enums import TuningClock
from .exceptions import EssException

if TYPE_CHECKING:
    from .types.report import EssPayload

__all__ = (
    "EssReport",
    "ess",
    "ess_report",
    "tune_output_rate",
    "tune_refresh_rate",
    "REFRESH_RATE_BOUNDS",
)


MIN_SERIES_LENGTH: int = 8
REFRESH_RATE_BOUNDS: tuple[float, float] = (1e-3, 1e3)


def ess(series: npt.ArrayLike) -> float:
    """Effective sample size of a single series.

    Autocorrelations are estimated from the centered series and summed in pairs
    ``rho_2t + rho_2t+1`` while the pairs stay positive, each pair capped by the previous one
    (Geyer's initial monotone sequence). Lags are computed on demand, at most ``n / 2`` of them.

    Parameters
    ----------
    series: array_like
        At least 8 values.

    Returns
    -------
    float
        ``n / (1 + 2 * sum(rho_t))`` clamped to ``[1, n]``.

    Raises
    ------
    EssException
        The series is too short or constant.
    """
    values = np.asarray(series, dtype=np.float64).ravel()
    n = values.size

    if n < MIN_SERIES_LENGTH:
        raise EssException(f"series too short for an ESS estimate: {n} < {MIN_SERIES_LENGTH}")

    if np.ptp(values) == 0.0:
        raise EssException("zero variance")

    centered = values - values.mean()
    acov0 = float(centered @ centered)
    if acov0 <= 0.0:
        raise EssException("zero variance")

    def rho(lag: int) -> float:
        return float(centered[: n - lag] @ centered[lag:]) / acov0

    max_lag = n // 2
    pair_sum = 0.0
    previous = math.inf

    lag = 0
    while lag + 1 <= max_lag:
        pair = (1.0 if lag == 0 else rho(lag)) + rho(lag + 1)
        if pair <= 0.0:
            break

        pair = min(pair, previous)
        pair_sum += pair
        previous = pair
        lag += 2

    tau = -1.0 + 2.0 * pair_sum
    if tau <= 0.0:
        return float(n)

    return float(min(max(n / tau, 1.0), n))


@dataclass(frozen=True)
class EssReport:
    """ESS summary of a block of samples.

    Attributes
    ----------
    ess_min: float
        Minimum ESS over the coordinate projections.
    ess_norm: float
        ESS of the series of sample norms.
    ess_per_sample: float
        ``min(ess_min, ess_norm) / n``, in ``(0, 1]``.
    n: int
        The number of samples.
    wall_time: float
        Seconds spent generating the samples, excluding the ESS computation.
    work: int
        Deterministic work units spent generating the samples.
    """

    ess_min: float
    ess_norm: float
    ess_per_sample: float
    n: int
    wall_time: float = 0.0
    work: int = 0

    @property
    def ess(self) -> float:
        return min(self.ess_min, self.ess_norm)

    def cost(self, clock: TuningClock = TuningClock.work) -> float:
        if clock is TuningClock.wall:
            return self.wall_time

        return float(self.work)

    def efficiency(self, clock: TuningClock = TuningClock.work) -> float:
        """ESS per unit of ``clock``. Infinite when nothing was spent."""
        cost = self.cost(clock)
        if cost <= 0.0:
            return math.inf

        return self.ess / cost

    def to_payload(self) -> EssPayload:
        return {
            "ess_min": self.ess_min,
            "ess_norm": self.ess_norm,
            "ess_per_sample": self.ess_per_sample,
            "n": self.n,
            "wall_time": self.wall_time,
            "work": self.work,
        }


def ess_report(samples: npt.ArrayLike, *, wall_time: float = 0.0, work: int = 0) -> EssReport:
    """Build an :class:`EssReport` from an ``n x d`` block of samples."""
    block = np.asarray(samples, dtype=np.float64)
    if block.ndim == 1:
        block = block[:, None]

    n = block.shape[0]
    ess_min = min(ess(block[:, j]) for j in range(block.shape[1]))
    ess_norm = ess(np.linalg.norm(block, axis=1))

    return EssReport(
        ess_min=ess_min,
        ess_norm=ess_norm,
        ess_per_sample=min(ess_min, ess_norm) / n,
        n=n,
        wall_time=wall_time,
        work=work,
    )


def tune_output_rate(events: int, elapsed: float, dim: int) -> float:
    """Output rate giving on average ``dim`` bounce or reflection events between two outputs.

    Parameters
    ----------
    events: int
        Bounces and reflections observed during the probe.
    elapsed: float
        Trajectory time covered by the probe.
    dim: int
        The dimension ``d``.

    Returns
    -------
    float
        ``events / (elapsed * dim)``, or ``1.0`` when the probe saw no events.
    """
    if events <= 0 or elapsed <= 0.0:
        logger.warning(f"Output-rate probe saw {events} events over time {elapsed:.3g}, falling back to rate 1.0")
        return 1.0

    return events / (elapsed * dim)


def _clamp(rate: float, bounds: tuple[float, float]) -> float:
    return min(max(rate, bounds[0]), bounds[1])


def tune_refresh_rate(
    pilot: Callable[[float], EssReport],
    initial: float = 1.0,
    *,
    factor: float = 1.5,
    max_iters: int = 10,
    bounds: tuple[float, float] = REFRESH_RATE_BOUNDS,
    clock: TuningClock = TuningClock.work,
) -> tuple[float, EssReport]:
    """Search the refresh rate that maximises ESS per unit cost.

    When ``ess_min > ess_norm`` the rate is increased by ``factor``, otherwise it is decreased.
    A proposal is accepted only if it strictly improves ``min(ess_min, ess_norm) / cost``; the search
    stops at the first rejection or after ``max_iters`` proposals.

    Parameters
    ----------
    pilot: Callable[[float], :class:`EssReport`]
        Runs a pilot at the given refresh rate and reports its ESS.
    initial: float
        The starting rate. Defaults to ``1.0``. Clamped to ``bounds``.
    factor: float
        The multiplicative step. Defaults to ``1.5``.
    max_iters: int
        Maximum number of proposals. Defaults to ``10``.
    bounds: tuple[float, float]
        Rates never leave this interval. The lower bound keeps the sampler ergodic.
    clock: :class:`TuningClock`
        What cost the ESS is divided by. Defaults to :attr:`TuningClock.work`.

    Returns
    -------
    tuple[float, :class:`EssReport`]
        The accepted rate and its pilot report.
    """
    rate = _clamp(initial, bounds)
    report = pilot(rate)

    for _ in range(max_iters):
        step = factor if report.ess_min > report.ess_norm else 1.0 / factor
        proposal = _clamp(rate * step, bounds)

        if proposal == rate:
            break

        candidate = pilot(proposal)
        if candidate.efficiency(clock) > report.efficiency(clock):
            efficiency = candidate.efficiency(clock)
            logger.debug(f"Refresh rate {rate:.4g} -> {proposal:.4g} accepted (ESS/cost {efficiency:.4g})")
            rate, report = proposal, candidate
            continue

        logger.debug(f"Refresh rate {proposal:.4g} rejected, keeping {rate:.4g}")
        break

    return rate, report
