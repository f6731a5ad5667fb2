from __future__ import annotations

import math
import time
from collections.abc import Callable
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import numpy.typing as npt
from loguru import logger

from .diagnostics import EssReport, ess_report, tune_output_rate
from .enums import EventKind
from .exceptions import DimensionMismatchException, InvalidConfigException, SamplerException
from .polytope import DIRECTION_CUTOFF, HPolytope

__all__ = (
    "GaussianTarget",
    "SamplerParams",
    "EventCounters",
    "NumericsStats",
    "BpsState",
    "Checkpoint",
    "BouncySampler",
    "bounce_time",
    "reflect_boundary",
    "bounce_gradient",
    "refresh_velocity",
    "advance_to_output",
    "run_safeguarded",
)


Vector = npt.NDArray[np.float64]
EventListener = Callable[[float, EventKind, Vector], None]
FaultHook = Callable[["BpsState"], None]

ORIGIN_SQ_NORM: float = 1e-28
MAX_FALLBACKS: int = 64


@dataclass(frozen=True)
class GaussianTarget:
    """The restricted Gaussian ``pi(x) ~ exp(-a ||x||^2) 1_H(x)``.

    Attributes
    ----------
    a: float
        The precision coefficient ``1 / (2 sigma^2)``.
    sigma: float
        The standard deviation, kept for reporting.
    """

    a: float
    sigma: float

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and self.sigma > 0.0):
            raise InvalidConfigException("Gaussian target needs a > 0 and sigma > 0", field="a")

        if abs(self.a * 2.0 * self.sigma * self.sigma - 1.0) > 1e-12:
            raise InvalidConfigException("Gaussian target needs a = 1 / (2 sigma^2)", field="a")

    @classmethod
    def from_sigma(cls, sigma: float) -> GaussianTarget:
        if sigma <= 0.0:
            raise InvalidConfigException(f"sigma must be positive, got {sigma}", field="sigma")

        return cls(a=1.0 / (2.0 * sigma * sigma), sigma=sigma)


@dataclass(frozen=True)
class SamplerParams:
    """Rates and safeguard settings of the Bouncy Particle Sampler.

    Attributes
    ----------
    lambda_refresh: float
        Rate of velocity refreshes. ``0`` disables refreshes. Defaults to ``1.0``.
    lambda_out: float
        Rate of the output clock. Defaults to ``1.0``; usually replaced by the tuned value.
    escape_tol: float | None
        Slack when checking outputs are inside the polytope. ``None`` means ``1e-9 * max(1, max(b))``.
    max_escalations: int
        Compensated replays attempted after an escape before falling back to a new velocity. Defaults to ``1``.
    resync_caches: bool
        Whether ``Ax`` and ``Av`` are recomputed densely at every output. Defaults to ``True``.
    """

    lambda_refresh: float = 1.0
    lambda_out: float = 1.0
    escape_tol: float | None = None
    max_escalations: int = 1
    resync_caches: bool = True

    def __post_init__(self) -> None:
        if self.lambda_refresh < 0.0 or not math.isfinite(self.lambda_refresh):
            raise InvalidConfigException("lambda_refresh must be finite and >= 0", field="lambda_refresh")
        if self.lambda_out <= 0.0 or not math.isfinite(self.lambda_out):
            raise InvalidConfigException("lambda_out must be finite and > 0", field="lambda_out")
        if self.escape_tol is not None and self.escape_tol < 0.0:
            raise InvalidConfigException("escape_tol must be >= 0", field="escape_tol")
        if self.max_escalations < 0:
            raise InvalidConfigException("max_escalations must be >= 0", field="max_escalations")

    def resolve_escape_tol(self, polytope: HPolytope) -> float:
        if self.escape_tol is not None:
            return self.escape_tol

        return 1e-9 * max(1.0, float(np.max(np.abs(polytope.b))))

    def with_rates(self, *, lambda_refresh: float | None = None, lambda_out: float | None = None) -> SamplerParams:
        return replace(
            self,
            lambda_refresh=self.lambda_refresh if lambda_refresh is None else lambda_refresh,
            lambda_out=self.lambda_out if lambda_out is None else lambda_out,
        )


@dataclass
class EventCounters:
    """Tallies of sampler events.

    ``work`` counts deterministic work units: ``k + d`` per event and ``k * d`` per dense product.
    """

    bounces: int = 0
    reflections: int = 0
    refreshes: int = 0
    outputs: int = 0
    work: int = 0

    @property
    def events(self) -> int:
        """Bounces plus reflections, the events that decorrelate the trajectory."""
        return self.bounces + self.reflections

    def copy(self) -> EventCounters:
        return replace(self)

    def __add__(self, other: EventCounters) -> EventCounters:
        return EventCounters(
            bounces=self.bounces + other.bounces,
            reflections=self.reflections + other.reflections,
            refreshes=self.refreshes + other.refreshes,
            outputs=self.outputs + other.outputs,
            work=self.work + other.work,
        )

    def __sub__(self, other: EventCounters) -> EventCounters:
        return EventCounters(
            bounces=self.bounces - other.bounces,
            reflections=self.reflections - other.reflections,
            refreshes=self.refreshes - other.refreshes,
            outputs=self.outputs - other.outputs,
            work=self.work - other.work,
        )


@dataclass
class NumericsStats:
    """Counters of the escape safeguard.

    Attributes
    ----------
    m_count: int
        Outputs found outside the polytope (#M).
    r_count: int
        Times the escalation limit was reached and a new velocity was drawn (#R).
    """

    m_count: int = 0
    r_count: int = 0

    def __add__(self, other: NumericsStats) -> NumericsStats:
        return NumericsStats(m_count=self.m_count + other.m_count, r_count=self.r_count + other.r_count)


@dataclass(frozen=True)
class Checkpoint:
    """A full copy of a :class:`BpsState`, random stream included."""

    x: Vector
    v: Vector
    Ax: Vector
    Av: Vector
    t: float
    rng_state: dict[str, Any]
    counters: EventCounters
    since_sync: int = 0


class BpsState:
    """Position, velocity, cached products and clock of one sampler chain.

    The state is owned by one worker at a time; it can be handed to another worker between calls.

    Attributes
    ----------
    x: numpy.ndarray
        The position.
    v: numpy.ndarray
        The velocity.
    Ax: numpy.ndarray
        Cached ``A @ x``.
    Av: numpy.ndarray
        Cached ``A @ v``.
    t: float
        The trajectory clock.
    rng: numpy.random.Generator
        The random stream driving this chain.
    counters: :class:`EventCounters`
        Event tallies.
    since_sync: int
        Events since ``Ax`` and ``Av`` were last recomputed densely.
    """

    __slots__ = ("x", "v", "Ax", "Av", "t", "rng", "counters", "since_sync", "_x_lo", "_Ax_lo")

    def __init__(
        self,
        x: Vector,
        v: Vector,
        Ax: Vector,
        Av: Vector,
        *,
        rng: np.random.Generator,
        t: float = 0.0,
        counters: EventCounters | None = None,
    ) -> None:
        self.x = x
        self.v = v
        self.Ax = Ax
        self.Av = Av
        self.t = t
        self.rng = rng
        self.counters = counters or EventCounters()
        self.since_sync = 0

        self._x_lo: Vector | None = None
        self._Ax_lo: Vector | None = None

    @classmethod
    def start(cls, polytope: HPolytope, x0: npt.ArrayLike | None, rng: np.random.Generator) -> BpsState:
        """Start a chain at ``x0`` (the origin when ``None``) with a standard normal velocity."""
        if x0 is None:
            x = np.zeros(polytope.dim)
        else:
            x = np.array(x0, dtype=np.float64)

        if x.shape != (polytope.dim,):
            raise DimensionMismatchException(expected=polytope.dim, received=x.size)

        v = rng.standard_normal(polytope.dim)
        return cls(x, v, polytope.A @ x, polytope.A @ v, rng=rng)

    def __repr__(self) -> str:
        return f"BpsState(dim={self.x.size}, t={self.t:.6g}, counters={self.counters})"

    @property
    def compensated(self) -> bool:
        """Whether position updates currently use compensated summation."""
        return self._x_lo is not None

    def begin_compensated(self) -> None:
        self._x_lo = np.zeros_like(self.x)
        self._Ax_lo = np.zeros_like(self.Ax)

    def end_compensated(self) -> None:
        if self._x_lo is None or self._Ax_lo is None:
            return

        self.x = self.x - self._x_lo
        self.Ax = self.Ax - self._Ax_lo
        self._x_lo = None
        self._Ax_lo = None

    def advance(self, tau: float) -> None:
        """Fly for ``tau`` along the current velocity, updating ``x`` and ``Ax`` without a dense product."""
        if self._x_lo is None or self._Ax_lo is None:
            self.x += tau * self.v
            self.Ax += tau * self.Av
        else:
            # Kahan: *_lo holds the negated low-order part lost so far
            step = tau * self.v - self._x_lo
            total = self.x + step
            self._x_lo = (total - self.x) - step
            self.x = total

            step = tau * self.Av - self._Ax_lo
            total = self.Ax + step
            self._Ax_lo = (total - self.Ax) - step
            self.Ax = total

        self.t += tau

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            x=self.x.copy(),
            v=self.v.copy(),
            Ax=self.Ax.copy(),
            Av=self.Av.copy(),
            t=self.t,
            rng_state=self.rng.bit_generator.state,
            counters=self.counters.copy(),
            since_sync=self.since_sync,
        )

    def restore(self, checkpoint: Checkpoint) -> None:
        self.x = checkpoint.x.copy()
        self.v = checkpoint.v.copy()
        self.Ax = checkpoint.Ax.copy()
        self.Av = checkpoint.Av.copy()
        self.t = checkpoint.t
        self.rng.bit_generator.state = checkpoint.rng_state
        self.counters = checkpoint.counters.copy()
        self.since_sync = checkpoint.since_sync
        self._x_lo = None
        self._Ax_lo = None

    def resync(self, polytope: HPolytope, *, velocity: bool = True) -> None:
        """Recompute ``Ax``, and ``Av`` when ``velocity`` is set, from ``x`` and ``v``.

        A pending compensation term is folded into ``x`` first; compensation stays on if it was on.
        """
        if self._x_lo is not None:
            self.x = self.x - self._x_lo
            self._x_lo = np.zeros_like(self.x)
            self._Ax_lo = np.zeros_like(self.Ax)

        self.Ax = polytope.A @ self.x
        self.counters.work += polytope.nrows * polytope.dim

        if velocity:
            self.Av = polytope.A @ self.v
            self.counters.work += polytope.nrows * polytope.dim

        self.since_sync = 0


def bounce_time(m: float, q: float, a: float, u: float) -> float:
    """Solve ``integral_0^t max(0, 2a(m + s q)) ds = u`` for ``t``.

    Parameters
    ----------
    m: float
        ``<x, v>``.
    q: float
        ``||v||^2``, positive.
    a: float
        The precision coefficient, positive.
    u: float
        An ``Exp(1)`` draw, positive.

    Returns
    -------
    float
        ``(-m + sqrt(max(m, 0)^2 + u q / a)) / q``, evaluated without cancellation when ``m > 0``.
    """
    c = u * q / a
    if m > 0.0:
        return (u / a) / (m + math.sqrt(m * m + c))

    return (-m + math.sqrt(c)) / q


def reflect_boundary(state: BpsState, face: int, polytope: HPolytope) -> BpsState:
    """Specular reflection of the velocity off facet ``face``.

    ``Av`` is updated from the precomputed column ``A @ a_face``; no dense product is needed.

    Raises
    ------
    SamplerException
        The velocity is not moving out through ``face``.
    """
    normal = polytope.A[face]
    dot = float(normal @ state.v)

    if dot <= 0.0:
        raise SamplerException(f"reflection on facet {face} with incoming velocity (<a, v> = {dot:.3e})")

    coef = 2.0 * dot / polytope.row_sq_norms[face]
    state.v = state.v - coef * normal
    state.Av = state.Av - coef * polytope.gram_rows[:, face]

    state.counters.reflections += 1
    return state


def refresh_velocity(state: BpsState, polytope: HPolytope) -> BpsState:
    """Resample the velocity from the standard normal and recompute ``Av`` densely."""
    state.v = state.rng.standard_normal(polytope.dim)
    state.Av = polytope.A @ state.v

    state.counters.refreshes += 1
    state.counters.work += polytope.nrows * polytope.dim
    return state


def bounce_gradient(state: BpsState, polytope: HPolytope) -> BpsState:
    """Reflect the velocity against the gradient of the Gaussian, which is colinear with ``x``.

    ``Av`` is updated from the cached ``Ax``. At the origin the gradient vanishes and the velocity is refreshed
    instead.
    """
    sq_norm = float(state.x @ state.x)
    if sq_norm < ORIGIN_SQ_NORM:
        return refresh_velocity(state, polytope)

    coef = 2.0 * float(state.x @ state.v) / sq_norm
    state.v = state.v - coef * state.x
    state.Av = state.Av - coef * state.Ax

    state.counters.bounces += 1
    return state


class BouncySampler:
    """The Bouncy Particle Sampler restricted to a polytope.

    Between events the particle flies in a straight line. Four clocks compete: the gradient bounce
    (solved exactly for the Gaussian), the boundary hit, the refresh clock and the output clock. All
    exponential clocks are redrawn after every event.

    Parameters
    ----------
    polytope: :class:`HPolytope`
        The polytope, shared read-only.
    target: :class:`GaussianTarget`
        The Gaussian to sample restricted to the polytope.
    params: :class:`SamplerParams`
        Rates and safeguard settings.
    state: :class:`BpsState`
        The chain to drive. It is mutated in place.
    listener: Callable[[float, :class:`EventKind`, numpy.ndarray], None] | None
        Called after every event with the clock, the event kind and the position. Defaults to ``None``.
    fault_hook: Callable[[:class:`BpsState`], None] | None
        Called on the state right before every output is verified. Only used to inject faults in tests.
    """

    def __init__(
        self,
        polytope: HPolytope,
        target: GaussianTarget,
        params: SamplerParams,
        state: BpsState,
        *,
        listener: EventListener | None = None,
        fault_hook: FaultHook | None = None,
    ) -> None:
        if state.x.shape != (polytope.dim,):
            raise DimensionMismatchException(expected=polytope.dim, received=state.x.size)

        self._polytope = polytope
        self._target = target
        self._params = params
        self._state = state
        self._listener = listener
        self._fault_hook = fault_hook

        self._escape_tol: float = params.resolve_escape_tol(polytope)
        self._event_work: int = polytope.nrows + polytope.dim
        self.stats: NumericsStats = NumericsStats()

    def __repr__(self) -> str:
        return f"BouncySampler(polytope={self._polytope!r}, sigma={self._target.sigma:.6g}, params={self._params})"

    @property
    def polytope(self) -> HPolytope:
        return self._polytope

    @property
    def target(self) -> GaussianTarget:
        return self._target

    @target.setter
    def target(self, value: GaussianTarget) -> None:
        self._target = value

    @property
    def params(self) -> SamplerParams:
        return self._params

    @params.setter
    def params(self, value: SamplerParams) -> None:
        self._params = value
        self._escape_tol = value.resolve_escape_tol(self._polytope)

    @property
    def state(self) -> BpsState:
        return self._state

    @property
    def counters(self) -> EventCounters:
        return self._state.counters

    def _dispatch(self, kind: EventKind) -> None:
        if self._listener is not None:
            self._listener(self._state.t, kind, self._state.x.copy())

    def _reflect(self, face: int) -> bool:
        """Reflect off ``face`` if ``v`` really exits through it, otherwise resync the cached products.

        Incremental updates of ``Av`` drift; a facet can look exiting in the cache while ``<a_face, v> <= 0``.
        """
        state, polytope = self._state, self._polytope

        if float(polytope.A[face] @ state.v) <= 0.0:
            logger.debug(f"Stale cache on facet {face} at t={state.t:.6g}, recomputing Ax and Av")
            state.resync(polytope)
            return False

        reflect_boundary(state, face, polytope)
        self._dispatch(EventKind.reflect)
        return True

    def _settle_corner(self) -> None:
        # a reflection near a corner may leave v still exiting through a neighbouring facet
        state, polytope = self._state, self._polytope

        for _ in range(polytope.dim):
            cutoff = DIRECTION_CUTOFF * polytope.row_norms * math.sqrt(float(state.v @ state.v))
            exiting = (state.Ax >= polytope.b - self._escape_tol) & (state.Av > cutoff)
            if not exiting.any():
                return

            self._reflect(int(np.argmax(exiting)))
            state.counters.work += self._event_work

        refresh_velocity(state, polytope)
        self._dispatch(EventKind.refresh)

    def _next_event(self, emit: bool) -> EventKind:
        state, polytope, params = self._state, self._polytope, self._params

        draws = state.rng.standard_exponential(3)
        q = float(state.v @ state.v)
        m = float(state.x @ state.v)

        tau, face = polytope.boundary_hit_unchecked(state.Ax, state.Av, math.sqrt(q))
        kind = EventKind.reflect

        tau_bounce = bounce_time(m, q, self._target.a, float(draws[0]))
        if tau_bounce < tau:
            tau, kind = tau_bounce, EventKind.bounce

        if params.lambda_refresh > 0.0:
            tau_refresh = float(draws[1]) / params.lambda_refresh
            if tau_refresh < tau:
                tau, kind = tau_refresh, EventKind.refresh

        if emit:
            tau_out = float(draws[2]) / params.lambda_out
            if tau_out < tau:
                tau, kind = tau_out, EventKind.output

        if not math.isfinite(tau):
            raise SamplerException("no event can happen: unbounded direction with every clock disabled")

        state.advance(tau)
        state.counters.work += self._event_work

        if kind is EventKind.reflect:
            self._reflect(face)
            self._settle_corner()
        elif kind is EventKind.bounce:
            bounce_gradient(state, polytope)
            self._dispatch(kind)
        elif kind is EventKind.refresh:
            refresh_velocity(state, polytope)
            self._dispatch(kind)
        else:
            state.counters.outputs += 1
            self._dispatch(kind)

        # dense recompute every d events, O(k) amortised per event
        state.since_sync += 1
        if state.since_sync >= polytope.dim:
            state.resync(polytope)

        return kind

    def advance_to_output(self) -> Vector:
        """Simulate until the output clock rings and return the position at that instant."""
        while self._next_event(emit=True) is not EventKind.output:
            pass

        return self._state.x.copy()

    def simulate_events(self, n_events: int, *, emit: bool = False) -> tuple[int, float]:
        """Simulate until ``n_events`` bounces or reflections happened.

        The number of loop iterations is capped at ``20 * n_events + 1000`` so degenerate targets terminate.

        Returns
        -------
        tuple[int, float]
            The number of bounces and reflections seen and the trajectory time elapsed.
        """
        state = self._state
        start_events, start_time = state.counters.events, state.t

        for _ in range(20 * n_events + 1000):
            if state.counters.events - start_events >= n_events:
                break
            self._next_event(emit=emit)

        return state.counters.events - start_events, state.t - start_time

    def _verify(self) -> bool:
        state, polytope = self._state, self._polytope

        if self._fault_hook is not None:
            self._fault_hook(state)

        Ax = polytope.A @ state.x
        state.counters.work += polytope.nrows * polytope.dim
        if not bool(np.all(Ax <= polytope.b + self._escape_tol)):
            return False

        if self._params.resync_caches:
            state.Ax = Ax
            state.Av = polytope.A @ state.v
            state.counters.work += polytope.nrows * polytope.dim
            state.since_sync = 0

        return True

    def _safe_output(self) -> Vector:
        state = self._state
        checkpoint = state.checkpoint()

        for _ in range(MAX_FALLBACKS):
            x = self.advance_to_output()
            if self._verify():
                return x

            self.stats.m_count += 1
            logger.warning(f"Trajectory escaped the polytope at t={state.t:.6g}, replaying with compensated sums")

            for _ in range(self._params.max_escalations):
                state.restore(checkpoint)
                state.begin_compensated()
                self.advance_to_output()
                state.end_compensated()

                if self._verify():
                    return state.x.copy()

            self.stats.r_count += 1
            logger.warning(f"Escalation limit reached at t={checkpoint.t:.6g}, drawing a new velocity")

            state.restore(checkpoint)
            refresh_velocity(state, self._polytope)
            checkpoint = state.checkpoint()

        raise SamplerException(f"unable to keep the trajectory inside the polytope after {MAX_FALLBACKS} fallbacks")

    def run_safeguarded(self, n_samples: int) -> Vector:
        """Emit ``n_samples`` outputs, each verified inside the polytope.

        Before each output the state is checkpointed. An output found outside is replayed from the checkpoint
        with compensated summation up to ``max_escalations`` times, then the velocity is redrawn. Escapes and
        fallbacks are counted in :attr:`stats`.

        Returns
        -------
        numpy.ndarray
            An ``n_samples x d`` array.
        """
        if n_samples < 1:
            raise InvalidConfigException(f"n_samples must be >= 1, got {n_samples}", field="n_samples")

        samples = np.empty((n_samples, self._polytope.dim))
        for i in range(n_samples):
            samples[i] = self._safe_output()

        return samples

    def probe_output_rate(self, n_events: int = 1000) -> float:
        """Measure the bounce and reflection rate with outputs disabled and return ``rate / d``."""
        events, elapsed = self.simulate_events(n_events)
        return tune_output_rate(events, elapsed, self._polytope.dim)

    def pilot(self, n_samples: int, lambda_refresh: float | None = None) -> EssReport:
        """Run ``n_samples`` outputs, at ``lambda_refresh`` if given, and report their ESS.

        The reported wall time and work cover sample generation only.
        """
        if lambda_refresh is not None:
            self.params = self._params.with_rates(lambda_refresh=lambda_refresh)

        work_before = self._state.counters.work
        started = time.perf_counter()
        samples = self.run_safeguarded(n_samples)
        wall_time = time.perf_counter() - started

        return ess_report(samples, wall_time=wall_time, work=self._state.counters.work - work_before)


def advance_to_output(
    state: BpsState, polytope: HPolytope, target: GaussianTarget, params: SamplerParams
) -> tuple[BpsState, Vector]:
    """Simulate ``state`` until the output clock rings. See :meth:`BouncySampler.advance_to_output`."""
    sample = BouncySampler(polytope, target, params, state).advance_to_output()
    return state, sample


def run_safeguarded(
    state: BpsState, polytope: HPolytope, target: GaussianTarget, params: SamplerParams, n_samples: int
) -> tuple[Vector, NumericsStats]:
    """Emit ``n_samples`` verified outputs from ``state``. See :meth:`BouncySampler.run_safeguarded`."""
    sampler = BouncySampler(polytope, target, params, state)
    samples = sampler.run_safeguarded(n_samples)
    return samples, sampler.stats
