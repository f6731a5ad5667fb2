import math

import numpy as np
import pytest

from bounceVol import (
    REFRESH_RATE_BOUNDS,
    BouncySampler,
    BpsState,
    EssException,
    EssReport,
    GaussianTarget,
    SamplerParams,
    TuningClock,
    derive_stream,
    ess,
    ess_report,
    make_cube,
    tune_output_rate,
    tune_refresh_rate,
)


def ar1(rng: np.random.Generator, rho: float, n: int) -> np.ndarray:
    noise = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = noise[0] / math.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        out[t] = rho * out[t - 1] + noise[t]
    return out


def test_ess_of_independent_draws(rng):
    series = rng.standard_normal(10_000)
    assert 0.8 <= ess(series) / series.size <= 1.2


def test_ess_of_ar1(rng):
    series = ar1(rng, 0.5, 100_000)
    assert ess(series) / series.size == pytest.approx(1.0 / 3.0, rel=0.2)


def test_ess_is_affine_invariant(rng):
    series = ar1(rng, 0.8, 5000)
    assert ess(-3.0 * series + 7.0) == pytest.approx(ess(series), rel=1e-9)


def test_ess_is_clamped_to_length(rng):
    series = np.where(np.arange(1000) % 2 == 0, 1.0, -1.0) + 0.01 * rng.standard_normal(1000)
    assert ess(series) == 1000.0


def test_ess_of_repeated_series_is_less_than_doubled():
    block = np.concatenate([np.zeros(250), np.ones(500), np.zeros(250)])

    single = ess(block)
    repeated = ess(np.tile(block, 2))

    assert single == pytest.approx(5.0, rel=0.05)
    assert single < repeated < 2.0 * single


def test_ess_rejects_constant_series():
    with pytest.raises(EssException, match="zero variance"):
        ess(np.full(100, 2.5))


def test_ess_rejects_short_series():
    with pytest.raises(EssException):
        ess([1.0, 2.0, 3.0])


def test_ess_report(rng):
    samples = rng.standard_normal((2000, 3))
    report = ess_report(samples, wall_time=0.5, work=1000)

    assert report.n == 2000
    assert report.ess == min(report.ess_min, report.ess_norm)
    assert 0.0 < report.ess_per_sample <= 1.0
    assert report.efficiency(TuningClock.work) == pytest.approx(report.ess / 1000)
    assert report.efficiency(TuningClock.wall) == pytest.approx(report.ess / 0.5)
    assert report.to_payload()["work"] == 1000


def test_ess_report_of_one_coordinate(rng):
    report = ess_report(rng.standard_normal(500))
    assert report.n == 500
    assert report.efficiency() == math.inf


def test_tune_output_rate():
    assert tune_output_rate(5000, 250.0, 10) == pytest.approx(5000 / (250.0 * 10))
    assert tune_output_rate(1200, 3.0, 1) == pytest.approx(400.0)


def test_tune_output_rate_without_events():
    assert tune_output_rate(0, 10.0, 4) == 1.0
    assert tune_output_rate(10, 0.0, 4) == 1.0


def synthetic_pilot(optimum: float, calls: list[float] | None = None):
    """ESS per unit work peaks at ``optimum``; the coordinate/norm imbalance points toward it."""

    def pilot(rate: float) -> EssReport:
        if calls is not None:
            calls.append(rate)

        value = 100.0 * math.exp(-math.log(rate / optimum) ** 2)
        low, high = (1.1 * value, value) if rate < optimum else (value, 1.1 * value)
        return EssReport(ess_min=low, ess_norm=high, ess_per_sample=value / 100.0, n=100, wall_time=1.0, work=1)

    return pilot


def test_tune_refresh_rate_reaches_local_optimum():
    pilot = synthetic_pilot(4.0)
    rate, report = tune_refresh_rate(pilot, 1.0)

    best = report.efficiency()
    assert best >= pilot(rate * 1.5).efficiency()
    assert best >= pilot(rate / 1.5).efficiency()
    assert rate == pytest.approx(1.5**3)


def test_tune_refresh_rate_keeps_initial_on_first_rejection():
    calls: list[float] = []
    rate, _ = tune_refresh_rate(synthetic_pilot(1.0, calls), 1.0)

    assert rate == 1.0
    assert calls == [1.0, pytest.approx(1.0 / 1.5)]


def test_tune_refresh_rate_stays_within_bounds():
    def always_lower(rate: float) -> EssReport:
        return EssReport(ess_min=1.0, ess_norm=2.0, ess_per_sample=0.5, n=100, work=1, wall_time=rate)

    rate, _ = tune_refresh_rate(always_lower, 1.0, max_iters=100, clock=TuningClock.wall)
    assert rate == pytest.approx(REFRESH_RATE_BOUNDS[0])
    assert rate > 0.0


def test_tune_refresh_rate_on_sampler_pilots():
    P, _ = make_cube(3)
    state = BpsState.start(P, None, derive_stream(6))
    sampler = BouncySampler(P, GaussianTarget.from_sigma(1.0), SamplerParams(), state)

    rate, report = tune_refresh_rate(lambda r: sampler.pilot(100, r))

    assert REFRESH_RATE_BOUNDS[0] <= rate <= REFRESH_RATE_BOUNDS[1]
    assert report.n == 100
    assert report.work > 0
    assert sampler.params.lambda_refresh > 0.0
