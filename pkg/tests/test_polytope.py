import math
import pickle

import numpy as np
import numpy.testing as npt
import pytest

from bounceVol import (
    DimensionMismatchException,
    HPolytope,
    ModelKind,
    PolytopeException,
    PolytopeFormatException,
    bounding_radius,
    make_cube,
    make_iso_simplex,
    make_model,
    make_std_simplex,
    read_polytope,
    write_polytope,
)


def test_contains_cube(cube2):
    assert cube2.contains([0.0, 0.0])
    assert not cube2.contains([1.1, 0.0])
    assert cube2.contains([1.1, 0.0], tol=0.2)


def test_contains_std_simplex_in_literature_coordinates():
    P, info = make_std_simplex(3)
    x = np.array([0.2, 0.3, 0.4])

    assert P.contains(x - info.origin_shift)
    assert not P.contains(np.array([0.5, 0.6, 0.1]) - info.origin_shift)
    assert not P.contains(np.array([-0.1, 0.3, 0.4]) - info.origin_shift)


def test_contains_dimension_mismatch(cube2):
    with pytest.raises(DimensionMismatchException) as info:
        cube2.contains([0.0, 0.0, 0.0])

    assert info.value.expected == 2
    assert info.value.received == 3


def test_boundary_hit_examples(cube2):
    x = np.array([0.0, 0.0])
    v = np.array([1.0, 0.0])
    assert cube2.boundary_hit(cube2.A @ x, cube2.A @ v) == (1.0, 0)

    x = np.array([0.5, 0.0])
    v = np.array([-1.0, 0.0])
    tau, face = cube2.boundary_hit(cube2.A @ x, cube2.A @ v)
    assert tau == pytest.approx(1.5)
    npt.assert_array_equal(cube2.A[face], [-1.0, 0.0])


def test_boundary_hit_ties_go_to_smallest_face(cube2):
    v = np.array([1.0, 1.0])
    tau, face = cube2.boundary_hit(np.zeros(4), cube2.A @ v)
    assert tau == pytest.approx(1.0)
    assert face == 0


def test_boundary_hit_no_facet_ahead():
    P = HPolytope([[1.0, 0.0]], [1.0])
    assert P.boundary_hit(np.zeros(1), np.array([-1.0])) == (math.inf, -1)


def test_boundary_hit_matches_dense_oracle(rng, random_polytope):
    for _ in range(1000):
        d = int(rng.integers(1, 21))
        k = int(rng.integers(2 * d, max(2 * d, 60) + 1))
        P = random_polytope(rng, d, k)

        x = rng.uniform(-1.0, 1.0, size=d)
        x *= 0.9 / float(np.max(P.A @ x / P.b))
        v = rng.standard_normal(d)

        tau, face = P.boundary_hit(P.A @ x, P.A @ v, speed=float(np.linalg.norm(v)))

        times = []
        for i in range(k):
            rate = float(P.A[i] @ v)
            if rate > 1e-14 * P.row_norms[i] * np.linalg.norm(v):
                times.append(((P.b[i] - float(P.A[i] @ x)) / rate, i))

        expected_tau, expected_face = min(times)
        assert tau == pytest.approx(expected_tau, rel=1e-9)
        assert face == expected_face
        assert float(P.A[face] @ (x + tau * v)) == pytest.approx(P.b[face], abs=1e-9)


@pytest.mark.filterwarnings("error")
def test_unchecked_boundary_hit_agrees(rng, random_polytope):
    P = random_polytope(rng, 4, 12)

    for _ in range(200):
        x = rng.uniform(-0.3, 0.3, size=4)
        v = rng.standard_normal(4)
        v[rng.integers(4)] = 0.0
        Ax, Av = P.A @ x, P.A @ v
        speed = float(np.linalg.norm(v))

        assert P.boundary_hit_unchecked(Ax, Av, speed) == P.boundary_hit(Ax, Av, speed=speed)


def test_caches(rng, random_polytope):
    P = random_polytope(rng, 5, 17)

    npt.assert_array_equal(P.row_sq_norms, np.sum(P.A**2, axis=1))
    for j in range(P.nrows):
        npt.assert_allclose(P.gram_rows[:, j], P.A @ P.A[j], rtol=1e-12)

    v = rng.standard_normal(5)
    for j in range(P.nrows):
        coef = 2.0 * float(P.A[j] @ v) / P.row_sq_norms[j]
        reflected = v - coef * P.A[j]
        npt.assert_allclose(P.A @ reflected, P.A @ v - coef * P.gram_rows[:, j], atol=1e-10)


def test_polytope_is_read_only(cube2):
    with pytest.raises(ValueError):
        cube2.A[0, 0] = 3.0


@pytest.mark.parametrize(
    ("A", "b", "message"),
    [
        ([[1.0, 0.0], [-1.0, 0.0]], [1.0, 0.0], "origin not strictly interior"),
        ([[1.0, 0.0], [0.0, 0.0]], [1.0, 1.0], "zero row"),
        ([1.0, 0.0], [1.0], "k x d"),
        ([[1.0, 0.0]], [1.0, 1.0], "offsets"),
    ],
)
def test_invalid_polytopes(A, b, message):
    with pytest.raises(PolytopeException, match=message):
        HPolytope(A, b)


def test_pickle_round_trip(cube2):
    restored = pickle.loads(pickle.dumps(cube2))
    assert restored == cube2
    npt.assert_array_equal(restored.gram_rows, cube2.gram_rows)


@pytest.mark.parametrize("d", [1, 2, 5, 10])
def test_cube_model(d):
    P, info = make_cube(d)

    assert (P.dim, P.nrows) == (d, 2 * d)
    assert info.kind is ModelKind.cube
    assert info.exact_log_volume == pytest.approx(d * math.log(2.0))
    assert info.bounding_radius == pytest.approx(math.sqrt(d))


def test_cube_volume_values():
    assert make_cube(2)[1].exact_log_volume == pytest.approx(math.log(4.0))


@pytest.mark.parametrize("d", [2, 3, 6, 10])
def test_std_simplex_model(d):
    P, info = make_std_simplex(d)

    assert info.exact_log_volume == pytest.approx(-sum(math.log(j) for j in range(2, d + 1)))
    assert np.all(P.b > 0)

    vertices = np.vstack([np.zeros((1, d)), np.eye(d)]) - info.origin_shift
    for vertex in vertices:
        assert P.contains(vertex, tol=1e-12)
        assert np.linalg.norm(vertex) <= info.bounding_radius + 1e-12


def test_std_simplex_volume_value():
    assert make_std_simplex(3)[1].exact_log_volume == pytest.approx(-1.791759, abs=1e-6)


def test_iso_simplex_triangle_area():
    _, info = make_iso_simplex(2)
    assert info.exact_log_volume == pytest.approx(math.log(3.0 * math.sqrt(3.0) / 4.0), rel=1e-10)


def test_iso_simplex_tetrahedron_volume():
    _, info = make_iso_simplex(3)
    edge = 4.0 / math.sqrt(6.0)
    assert info.exact_log_volume == pytest.approx(math.log(edge**3 / (6.0 * math.sqrt(2.0))), rel=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3, 8, 20])
def test_iso_simplex_is_regular(d):
    P, info = make_iso_simplex(d)

    assert P.nrows == d + 1
    assert info.bounding_radius == 1.0
    npt.assert_allclose(np.linalg.norm(P.A, axis=1), 1.0, rtol=1e-12)
    npt.assert_allclose(P.b, 1.0 / d, rtol=1e-9)


def test_bounding_radius_by_linear_programming():
    P, info = make_cube(4)
    assert bounding_radius(P) == pytest.approx(info.bounding_radius, rel=1e-7)


def test_bounding_radius_unbounded():
    P = HPolytope([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0])
    with pytest.raises(PolytopeException, match="unbounded"):
        bounding_radius(P)


def test_write_read_round_trip(tmp_path, rng, random_polytope):
    for P in (make_cube(2)[0], make_iso_simplex(4)[0], random_polytope(rng, 6, 20)):
        path = tmp_path / "polytope.txt"
        write_polytope(P, path, comment="round trip")

        assert read_polytope(path) == P


def test_read_rejects_non_positive_offset(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n1 0 0\n-1 0 1\n", encoding="utf-8")

    with pytest.raises(PolytopeException, match="origin not strictly interior"):
        read_polytope(path)


def test_read_reports_line_of_short_row(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# a comment\n3 3\n1 0 0 1\n0 1 1\n0 0 1 1\n", encoding="utf-8")

    with pytest.raises(PolytopeFormatException) as info:
        read_polytope(path)

    assert info.value.line == 4
    assert "line 4" in str(info.value)


@pytest.mark.parametrize(
    "text",
    ["", "2\n", "2 x\n", "2 2\n1 0 1\n", "1 2\n1 1\n-1 1\n5\n", "1 2\n1 nan\n-1 1\n"],
)
def test_read_malformed(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text, encoding="utf-8")

    with pytest.raises(PolytopeFormatException):
        read_polytope(path)


def test_make_model_from_file(tmp_path):
    P, _ = make_cube(3)
    path = tmp_path / "cube.txt"
    write_polytope(P, path)

    loaded, info = make_model(ModelKind.file, path=path)

    assert loaded == P
    assert info.exact_log_volume is None
    assert info.bounding_radius == pytest.approx(math.sqrt(3.0), rel=1e-7)


def test_make_model_needs_dimension():
    with pytest.raises(PolytopeException):
        make_model(ModelKind.cube)


def test_scaled(cube2):
    doubled = cube2.scaled(2.0)
    assert doubled.contains([1.9, -1.9])
    assert not doubled.contains([2.1, 0.0])
