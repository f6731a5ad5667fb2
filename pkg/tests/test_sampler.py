import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate, stats

from bounceVol import (
    BouncySampler,
    BpsState,
    EventKind,
    GaussianTarget,
    HPolytope,
    InvalidConfigException,
    SamplerException,
    SamplerParams,
    bounce_gradient,
    bounce_time,
    derive_stream,
    ess,
    make_cube,
    make_iso_simplex,
    make_std_simplex,
    reflect_boundary,
    refresh_velocity,
    run_safeguarded,
)


def make_sampler(P: HPolytope, sigma: float, seed: int = 1, **params) -> BouncySampler:
    state = BpsState.start(P, None, derive_stream(seed))
    return BouncySampler(P, GaussianTarget.from_sigma(sigma), SamplerParams(**params), state)


def make_state(P: HPolytope, x, v, seed: int = 1) -> BpsState:
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return BpsState(x, v, P.A @ x, P.A @ v, rng=derive_stream(seed))


@pytest.mark.parametrize(
    ("m", "expected"),
    [(0.0, 1.0), (1.0, math.sqrt(2.0) - 1.0), (-1.0, 2.0)],
)
def test_bounce_time_examples(m, expected):
    assert bounce_time(m, 1.0, 0.5, 0.5) == pytest.approx(expected, rel=1e-12)


def test_bounce_time_solves_integrated_rate(rng):
    for _ in range(1000):
        m = rng.uniform(-5.0, 5.0)
        q = rng.uniform(0.1, 10.0)
        a = rng.uniform(0.01, 10.0)
        u = rng.uniform(0.01, 5.0)

        t = bounce_time(m, q, a, u)
        kink = -m / q
        points = [kink] if 0.0 < kink < t else None

        value, _ = integrate.quad(
            lambda s: max(0.0, 2.0 * a * (m + s * q)), 0.0, t, points=points, epsabs=1e-13, epsrel=1e-13
        )
        assert abs(value - u) <= 1e-8


def test_gaussian_target_validation():
    target = GaussianTarget.from_sigma(2.0)
    assert target.a == pytest.approx(0.125)

    with pytest.raises(InvalidConfigException):
        GaussianTarget.from_sigma(0.0)
    with pytest.raises(InvalidConfigException):
        GaussianTarget(a=1.0, sigma=1.0)


@pytest.mark.parametrize(
    "kwargs",
    [{"lambda_out": 0.0}, {"lambda_refresh": -1.0}, {"max_escalations": -1}, {"escape_tol": -1e-3}],
)
def test_sampler_params_validation(kwargs):
    with pytest.raises(InvalidConfigException):
        SamplerParams(**kwargs)


def test_escape_tol_default_scales_with_offsets():
    P = HPolytope([[1.0], [-1.0]], [50.0, 2.0])
    assert SamplerParams().resolve_escape_tol(P) == pytest.approx(5e-8)
    assert SamplerParams().resolve_escape_tol(make_cube(2)[0]) == pytest.approx(1e-9)


def test_reflect_boundary_specular_flip(cube2):
    state = make_state(cube2, [1.0, 0.2], [0.3, 0.4])
    reflect_boundary(state, 0, cube2)

    npt.assert_allclose(state.v, [-0.3, 0.4])
    npt.assert_allclose(state.Av, cube2.A @ state.v, atol=1e-15)
    npt.assert_array_equal(state.x, [1.0, 0.2])
    assert state.counters.reflections == 1


def test_reflect_boundary_rejects_incoming_velocity(cube2):
    state = make_state(cube2, [1.0, 0.2], [-0.3, 0.4])
    with pytest.raises(SamplerException):
        reflect_boundary(state, 0, cube2)


def test_reflect_boundary_is_an_isometry_and_involution(rng, random_polytope):
    P = random_polytope(rng, 6, 20)
    for face in range(P.nrows):
        v = rng.standard_normal(6)
        if float(P.A[face] @ v) <= 0.0:
            v = -v

        state = make_state(P, np.zeros(6), v)
        reflect_boundary(state, face, P)

        assert float(P.A[face] @ state.v) == pytest.approx(-float(P.A[face] @ v), rel=1e-12)
        assert np.linalg.norm(state.v) == pytest.approx(np.linalg.norm(v), rel=1e-12)
        npt.assert_allclose(state.Av, P.A @ state.v, atol=1e-10)

        # reflecting through -a_face is the same map and brings v back
        mirrored = HPolytope(np.vstack([-P.A[face]]), np.ones(1))
        again = BpsState(state.x, state.v, mirrored.A @ state.x, mirrored.A @ state.v, rng=state.rng)
        reflect_boundary(again, 0, mirrored)
        npt.assert_allclose(again.v, v, rtol=1e-12, atol=1e-12)


def test_bounce_gradient_example(cube2):
    state = make_state(cube2, [1.0, 0.0], [1.0, 1.0])
    bounce_gradient(state, cube2)

    npt.assert_allclose(state.v, [-1.0, 1.0])
    assert state.counters.bounces == 1


def test_bounce_gradient_identities(rng, random_polytope):
    P = random_polytope(rng, 8, 24)
    for _ in range(100):
        x = rng.uniform(-0.1, 0.1, size=8)
        v = rng.standard_normal(8)
        state = make_state(P, x, v)
        bounce_gradient(state, P)

        assert float(x @ state.v) == pytest.approx(-float(x @ v), rel=1e-12, abs=1e-14)
        assert np.linalg.norm(state.v) == pytest.approx(np.linalg.norm(v), rel=1e-12)
        npt.assert_allclose(state.Av, P.A @ state.v, atol=1e-10)


def test_bounce_gradient_at_origin_refreshes(cube2):
    state = make_state(cube2, [0.0, 0.0], [1.0, 1.0])
    bounce_gradient(state, cube2)

    assert state.counters.bounces == 0
    assert state.counters.refreshes == 1
    npt.assert_array_equal(state.Av, cube2.A @ state.v)


def test_refresh_velocity_moments():
    P, _ = make_cube(5)
    state = make_state(P, np.zeros(5), np.ones(5), seed=3)

    draws = np.empty((100_000, 5))
    for i in range(draws.shape[0]):
        refresh_velocity(state, P)
        draws[i] = state.v

    assert np.all(np.abs(draws.mean(axis=0)) < 4.0 * math.sqrt(1e-5))
    npt.assert_allclose(draws.var(axis=0), 1.0, rtol=0.05)
    npt.assert_array_equal(state.Av, P.A @ state.v)
    assert state.counters.refreshes == 100_000


def test_refresh_velocity_is_deterministic(cube2):
    first = make_state(cube2, [0.0, 0.0], [1.0, 0.0], seed=9)
    second = make_state(cube2, [0.0, 0.0], [1.0, 0.0], seed=9)

    for _ in range(10):
        refresh_velocity(first, cube2)
        refresh_velocity(second, cube2)
        npt.assert_array_equal(first.v, second.v)


def test_straight_flight_reflects_at_unit_time():
    P = HPolytope([[1.0], [-1.0]], [1.0, 1.0])
    state = make_state(P, [0.0], [1.0])
    events = []

    sampler = BouncySampler(
        P,
        GaussianTarget.from_sigma(1.0 / math.sqrt(2e-12)),
        SamplerParams(lambda_refresh=0.0),
        state,
        listener=lambda t, kind, x: events.append((t, kind, x)),
    )
    sampler.simulate_events(1)

    t, kind, x = events[0]
    assert kind is EventKind.reflect
    assert t == pytest.approx(1.0)
    npt.assert_allclose(x, [1.0])
    npt.assert_allclose(state.v, [-1.0])


def test_listener_sees_only_known_kinds(cube2):
    kinds = set()
    sampler = make_sampler(cube2, 1.0)
    sampler._listener = lambda t, kind, x: kinds.add(kind)
    sampler.run_safeguarded(500)

    assert kinds <= set(EventKind)
    assert EventKind.output in kinds


def test_speed_changes_only_at_refresh():
    P, _ = make_cube(3)
    sampler = make_sampler(P, 0.7, lambda_refresh=0.0)
    speed = np.linalg.norm(sampler.state.v)

    sampler.simulate_events(2000)

    assert sampler.counters.refreshes == 0
    assert np.linalg.norm(sampler.state.v) == pytest.approx(speed, rel=1e-12)


def test_cache_fidelity_without_resync():
    P, _ = make_cube(20)
    sampler = make_sampler(P, 1.0, lambda_refresh=0.0, resync_caches=False)
    sampler.simulate_events(10_000)

    state = sampler.state
    assert np.max(np.abs(state.Ax - P.A @ state.x)) <= 1e-6
    assert np.max(np.abs(state.Av - P.A @ state.v)) <= 1e-6


@pytest.mark.parametrize(("builder", "dim"), [(make_std_simplex, 3), (make_iso_simplex, 5)])
def test_cached_products_follow_dense_products(builder, dim):
    P, _ = builder(dim)
    sampler = make_sampler(P, 0.3, seed=7, resync_caches=False)
    sampler.simulate_events(5000)

    state = sampler.state
    npt.assert_allclose(state.Ax, P.A @ state.x, rtol=0.0, atol=1e-10)
    npt.assert_allclose(state.Av, P.A @ state.v, rtol=0.0, atol=1e-10 * max(1.0, float(np.linalg.norm(state.v))))
    assert state.since_sync < dim


def test_stale_velocity_cache_is_resynced_instead_of_reflected(cube2):
    x = np.array([1.0, 0.0])
    v = np.array([-1.0, 0.5])
    state = make_state(cube2, x, v)
    face = int(np.argmax(cube2.A @ x))
    state.Av[face] = 1.0

    sampler = BouncySampler(cube2, GaussianTarget.from_sigma(1.0), SamplerParams(), state)
    kind = sampler._next_event(emit=False)

    assert kind is EventKind.reflect
    assert state.counters.reflections == 0
    npt.assert_array_equal(state.v, v)
    npt.assert_array_equal(state.Av, cube2.A @ v)

    samples = sampler.run_safeguarded(50)
    assert all(cube2.contains(x) for x in samples)


def test_checkpoint_keeps_its_own_stream_state(cube2):
    sampler = make_sampler(cube2, 1.0, seed=12)
    checkpoint = sampler.state.checkpoint()
    first = sampler.state.rng.standard_normal(4)

    sampler.state.restore(checkpoint)
    npt.assert_array_equal(sampler.state.rng.standard_normal(4), first)


def test_outputs_resync_caches():
    P, _ = make_cube(10)
    sampler = make_sampler(P, 1.0)
    sampler.run_safeguarded(50)

    npt.assert_array_equal(sampler.state.Ax, P.A @ sampler.state.x)
    npt.assert_array_equal(sampler.state.Av, P.A @ sampler.state.v)


def test_samples_stay_inside():
    P, _ = make_cube(20)
    state = BpsState.start(P, None, derive_stream(5))
    samples, stats = run_safeguarded(state, P, GaussianTarget.from_sigma(1.0), SamplerParams(lambda_out=2.0), 2000)

    assert samples.shape == (2000, 20)
    assert all(P.contains(x) for x in samples)
    assert (stats.m_count, stats.r_count) == (0, 0)


@pytest.mark.slow
def test_samples_stay_inside_high_dimension():
    P, _ = make_cube(100)
    sampler = make_sampler(P, 1.0)
    sampler.params = sampler.params.with_rates(lambda_out=sampler.probe_output_rate())

    samples = sampler.run_safeguarded(10_000)

    assert all(P.contains(x) for x in samples)
    assert sampler.stats.m_count == 0


def test_same_seed_gives_identical_streams(cube2):
    first = make_sampler(cube2, 1.0, seed=42).run_safeguarded(300)
    second = make_sampler(cube2, 1.0, seed=42).run_safeguarded(300)
    other = make_sampler(cube2, 1.0, seed=43).run_safeguarded(300)

    npt.assert_array_equal(first, second)
    assert not np.array_equal(first, other)


def test_checkpoint_replays_bit_for_bit(cube2):
    sampler = make_sampler(cube2, 1.0, seed=11)
    sampler.run_safeguarded(10)

    checkpoint = sampler.state.checkpoint()
    first = sampler.advance_to_output()
    counters = sampler.counters.copy()

    sampler.state.restore(checkpoint)
    second = sampler.advance_to_output()

    npt.assert_array_equal(first, second)
    assert sampler.counters == counters


def test_fault_injection_replays_from_checkpoint(cube2):
    faults = []

    def fault(state: BpsState) -> None:
        if not faults:
            faults.append(state.t)
            state.x[0] = 5.0

    state = BpsState.start(cube2, None, derive_stream(8))
    sampler = BouncySampler(cube2, GaussianTarget.from_sigma(1.0), SamplerParams(), state, fault_hook=fault)
    samples = sampler.run_safeguarded(20)

    assert sampler.stats.m_count == 1
    assert sampler.stats.r_count == 0
    assert all(cube2.contains(x) for x in samples)


def test_fault_injection_falls_back_to_new_velocity(cube2):
    fired = []

    def fault(state: BpsState) -> None:
        if not fired:
            fired.append(True)
            state.x[1] = -3.0

    state = BpsState.start(cube2, None, derive_stream(8))
    params = SamplerParams(max_escalations=0)
    sampler = BouncySampler(cube2, GaussianTarget.from_sigma(1.0), params, state, fault_hook=fault)
    samples = sampler.run_safeguarded(5)

    assert (sampler.stats.m_count, sampler.stats.r_count) == (1, 1)
    assert sampler.counters.refreshes >= 1
    assert all(cube2.contains(x) for x in samples)


def test_persistent_escape_raises(cube2):
    def fault(state: BpsState) -> None:
        state.x[0] = 5.0

    state = BpsState.start(cube2, None, derive_stream(8))
    sampler = BouncySampler(cube2, GaussianTarget.from_sigma(1.0), SamplerParams(), state, fault_hook=fault)

    with pytest.raises(SamplerException):
        sampler.run_safeguarded(1)

    assert sampler.stats.r_count <= sampler.stats.m_count


def test_mean_events_per_output_close_to_dimension():
    P, _ = make_cube(5)
    sampler = make_sampler(P, 1.0, seed=4)
    sampler.params = sampler.params.with_rates(lambda_out=sampler.probe_output_rate(5000))

    before = sampler.counters.copy()
    sampler.run_safeguarded(5000)
    spent = sampler.counters - before

    assert 0.8 * 5 <= spent.events / spent.outputs <= 1.2 * 5


@pytest.mark.slow
def test_square_outputs_match_truncated_normal():
    P, _ = make_cube(2)
    sampler = make_sampler(P, 1.0, seed=2024)
    sampler.params = sampler.params.with_rates(lambda_out=sampler.probe_output_rate(5000))
    samples = sampler.run_safeguarded(100_000)

    oracle = stats.truncnorm(-1.0, 1.0)
    for j in range(2):
        column = samples[:, j]
        assert stats.kstest(column, oracle.cdf).statistic < 0.01

        n_eff = ess(column)
        assert abs(column.mean()) < 3.0 * oracle.std() / math.sqrt(n_eff)

        second = column**2
        assert abs(second.mean() - oracle.moment(2)) < 3.0 * second.std() / math.sqrt(ess(second))
