from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.special import gammaln

from .enums import ModelKind
from .exceptions import DimensionMismatchException, PolytopeException
from .utils.polyfile import PolytopeReader, PolytopeWriter

__all__ = (
    "HPolytope",
    "ModelInfo",
    "make_cube",
    "make_std_simplex",
    "make_iso_simplex",
    "make_model",
    "read_polytope",
    "write_polytope",
    "bounding_radius",
)


Vector = npt.NDArray[np.float64]

DIRECTION_CUTOFF: float = 1e-14


def _frozen(array: npt.ArrayLike) -> Vector:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


class HPolytope:
    """An H-polytope ``{x | (Ax)_i <= b_i for all i}`` with the origin strictly inside.

    The reflection caches are built once on construction: the squared row norms, and the row Gram
    products whose column ``j`` is ``A @ a_j``. Updating ``Av`` after a reflection on facet ``j`` then
    costs ``O(k)`` instead of a dense matrix-vector product.

    The polytope is immutable and safe to share between samplers.

    .. container:: operations

        .. describe:: P == other

            Whether both polytopes have identical constraints.

        .. describe:: repr(P)

            The official string representation of this polytope.

    Parameters
    ----------
    A: array_like
        The ``k x d`` constraint matrix. Row ``i`` is the outward normal of facet ``i``.
    b: array_like
        The ``k`` offsets. Every entry must be positive.

    Raises
    ------
    PolytopeException
        ``A`` is not two dimensional, the shapes do not agree, a row is zero or an offset is not positive.
    """

    __slots__ = ("_A", "_b", "_row_sq_norms", "_row_norms", "_gram_rows")

    def __init__(self, A: npt.ArrayLike, b: npt.ArrayLike) -> None:
        A_ = np.asarray(A, dtype=np.float64)
        b_ = np.asarray(b, dtype=np.float64)

        if A_.ndim != 2 or A_.shape[0] < 1 or A_.shape[1] < 1:
            raise PolytopeException(f"constraint matrix must be a non-empty k x d matrix, got shape {A_.shape}")

        if b_.shape != (A_.shape[0],):
            raise PolytopeException(f"offsets must have length {A_.shape[0]}, got shape {b_.shape}")

        if not (np.all(np.isfinite(A_)) and np.all(np.isfinite(b_))):
            raise PolytopeException("constraints must be finite")

        bad_offsets = np.flatnonzero(b_ <= 0.0)
        if bad_offsets.size:
            raise PolytopeException(f"origin not strictly interior: b[{int(bad_offsets[0])}] <= 0")

        row_sq_norms = np.sum(A_ * A_, axis=1)
        zero_rows = np.flatnonzero(row_sq_norms <= 0.0)
        if zero_rows.size:
            raise PolytopeException(f"zero row in constraint matrix at row {int(zero_rows[0])}")

        self._A = _frozen(A_)
        self._b = _frozen(b_)
        self._row_sq_norms = _frozen(row_sq_norms)
        self._row_norms = _frozen(np.sqrt(row_sq_norms))
        self._gram_rows = _frozen(A_ @ A_.T)

    def __repr__(self) -> str:
        return f"HPolytope(dim={self.dim}, nrows={self.nrows})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HPolytope):
            return NotImplemented

        return np.array_equal(self._A, other._A) and np.array_equal(self._b, other._b)

    def __hash__(self) -> int:
        return hash((self._A.tobytes(), self._b.tobytes()))

    def __reduce__(self) -> tuple[Any, ...]:
        return (HPolytope, (np.array(self._A), np.array(self._b)))

    @property
    def dim(self) -> int:
        """The dimension ``d`` of the ambient space."""
        return self._A.shape[1]

    @property
    def nrows(self) -> int:
        """The number ``k`` of facet inequalities."""
        return self._A.shape[0]

    @property
    def A(self) -> Vector:
        """The read-only ``k x d`` constraint matrix."""
        return self._A

    @property
    def b(self) -> Vector:
        """The read-only ``k`` offsets."""
        return self._b

    @property
    def row_sq_norms(self) -> Vector:
        """The squared norms ``||a_i||^2`` of the rows of :attr:`A`."""
        return self._row_sq_norms

    @property
    def row_norms(self) -> Vector:
        return self._row_norms

    @property
    def gram_rows(self) -> Vector:
        """The ``k x k`` matrix whose column ``j`` is ``A @ a_j``."""
        return self._gram_rows

    def _check_point(self, x: Vector) -> Vector:
        x_ = np.asarray(x, dtype=np.float64)
        if x_.shape != (self.dim,):
            raise DimensionMismatchException(expected=self.dim, received=x_.size)
        return x_

    def contains(self, x: npt.ArrayLike, tol: float = 0.0) -> bool:
        """Whether ``(Ax)_i <= b_i + tol`` holds for every facet.

        Parameters
        ----------
        x: array_like
            A point of length ``d``.
        tol: float
            Non-negative slack added to every offset. Defaults to ``0``.

        Raises
        ------
        DimensionMismatchException
            ``x`` does not have length ``d``.
        """
        x_ = self._check_point(np.asarray(x, dtype=np.float64))
        return bool(np.all(self._A @ x_ <= self._b + tol))

    def boundary_hit(self, Ax: Vector, Av: Vector, *, speed: float = 1.0) -> tuple[float, int]:
        """The time until the ray ``x + t v`` leaves through the first facet.

        Only facets with ``(Av)_i > 1e-14 * ||a_i|| * speed`` count as being moved toward. Times are clamped
        below at ``0`` and ties go to the smallest facet index.

        Parameters
        ----------
        Ax: numpy.ndarray
            The cached product ``A @ x``.
        Av: numpy.ndarray
            The cached product ``A @ v``.
        speed: float
            The norm of ``v``, used to scale the grazing-incidence cutoff. Defaults to ``1``.

        Returns
        -------
        tuple[float, int]
            The hitting time and the facet index. ``(inf, -1)`` when no facet is being moved toward.
        """
        if Ax.shape != (self.nrows,):
            raise DimensionMismatchException(expected=self.nrows, received=Ax.size)
        if Av.shape != (self.nrows,):
            raise DimensionMismatchException(expected=self.nrows, received=Av.size)

        return self.boundary_hit_unchecked(Ax, Av, speed)

    def boundary_hit_unchecked(self, Ax: Vector, Av: Vector, speed: float = 1.0) -> tuple[float, int]:
        """:meth:`boundary_hit` without the shape checks, for the sampler's event loop."""
        toward = Av > DIRECTION_CUTOFF * self._row_norms * speed
        if not toward.any():
            return math.inf, -1

        times = np.divide(self._b - Ax, Av, out=np.full(self.nrows, np.inf), where=toward)
        face = int(np.argmin(times))
        return max(float(times[face]), 0.0), face

    def scaled(self, factor: float) -> HPolytope:
        """The polytope ``factor * H``, obtained by dividing the rows of :attr:`A` by ``factor``."""
        if factor <= 0:
            raise PolytopeException("scale factor must be positive")

        return HPolytope(self._A / factor, self._b)


@dataclass(frozen=True)
class ModelInfo:
    """What is known about a polytope beyond its constraints.

    Attributes
    ----------
    kind: :class:`ModelKind`
        Where the polytope came from.
    exact_log_volume: float | None
        The natural log of the exact volume. ``None`` for file polytopes.
    bounding_radius: float | None
        Radius of an origin centered ball containing the polytope.
    origin_shift: numpy.ndarray | None
        The translation that was applied to put the origin inside. A point ``x`` of the model as written in
        the literature is ``x - origin_shift`` in the stored polytope. ``None`` when nothing was moved.
    """

    kind: ModelKind
    exact_log_volume: float | None = None
    bounding_radius: float | None = None
    origin_shift: Vector | None = field(default=None, compare=False)

    @property
    def name(self) -> str:
        return self.kind.value


def _check_dim(d: int) -> None:
    if d < 1:
        raise PolytopeException(f"dimension must be at least 1, got {d}")


def make_cube(d: int) -> tuple[HPolytope, ModelInfo]:
    """The cube ``-1 <= x_i <= 1``.

    Rows come in pairs ``+e_i, -e_i`` with offset ``1``.
    """
    _check_dim(d)

    A = np.zeros((2 * d, d))
    for i in range(d):
        A[2 * i, i] = 1.0
        A[2 * i + 1, i] = -1.0

    info = ModelInfo(ModelKind.cube, exact_log_volume=d * math.log(2.0), bounding_radius=math.sqrt(d))
    return HPolytope(A, np.ones(2 * d)), info


def make_std_simplex(d: int) -> tuple[HPolytope, ModelInfo]:
    """The standard simplex ``sum(x) <= 1, x_i >= 0`` translated so its centroid is the origin."""
    _check_dim(d)

    centroid = np.full(d, 1.0 / (d + 1))
    A = np.vstack([-np.eye(d), np.ones((1, d))])
    b = np.full(d + 1, 1.0 / (d + 1))

    vertices = np.vstack([np.zeros((1, d)), np.eye(d)]) - centroid
    radius = float(np.max(np.linalg.norm(vertices, axis=1)))

    info = ModelInfo(
        ModelKind.std_simplex,
        exact_log_volume=-float(gammaln(d + 1)),
        bounding_radius=radius,
        origin_shift=_frozen(centroid),
    )
    return HPolytope(A, b), info


def _simplex_facets(vertices: Vector) -> tuple[Vector, Vector]:
    # facet i passes through every vertex except v_i; the origin is inside so n . x = 1 is well posed
    count, d = vertices.shape
    A = np.empty((count, d))
    b = np.empty(count)

    for i in range(count):
        others = np.delete(vertices, i, axis=0)
        normal = np.linalg.solve(others, np.ones(d))
        scale = np.linalg.norm(normal)

        A[i] = normal / scale
        b[i] = 1.0 / scale

    return A, b


def _simplex_log_volume(vertices: Vector) -> float:
    d = vertices.shape[1]
    _, logdet = np.linalg.slogdet(vertices[1:] - vertices[0])
    return float(logdet - gammaln(d + 1))


def make_iso_simplex(d: int) -> tuple[HPolytope, ModelInfo]:
    """The regular simplex with ``d + 1`` vertices on the unit sphere, centered at the origin.

    The vertices are the standard basis of ``R^(d+1)`` expressed in an orthonormal basis of the hyperplane
    ``sum(y) = 0`` and rescaled to unit norm, giving pairwise dot products of ``-1/d``.
    """
    _check_dim(d)

    basis = null_space(np.ones((1, d + 1)))
    vertices = basis * math.sqrt((d + 1) / d)

    A, b = _simplex_facets(vertices)
    info = ModelInfo(ModelKind.iso_simplex, exact_log_volume=_simplex_log_volume(vertices), bounding_radius=1.0)
    return HPolytope(A, b), info


def bounding_radius(P: HPolytope) -> float:
    """Radius of an origin centered ball containing ``P``.

    Each coordinate is maximised and minimised by a linear program. The result is the norm of the farthest
    corner of the resulting bounding box, an upper bound on the true circumradius.

    Raises
    ------
    PolytopeException
        A linear program is unbounded or fails.
    """
    extent = np.zeros(P.dim)

    for j in range(P.dim):
        for sign in (1.0, -1.0):
            c = np.zeros(P.dim)
            c[j] = -sign

            result = linprog(c, A_ub=P.A, b_ub=P.b, bounds=(None, None), method="highs")
            if result.status == 3:
                raise PolytopeException("polytope is unbounded")
            if not result.success:
                raise PolytopeException(f"bounding box linear program failed: {result.message}")

            extent[j] = max(extent[j], abs(float(result.x[j])))

    return float(np.linalg.norm(extent))


def read_polytope(path: str | os.PathLike[str]) -> HPolytope:
    """Read a polytope from the text format.

    Raises
    ------
    PolytopeFormatException
        The file is malformed. The message includes the line number.
    PolytopeException
        The file cannot be opened, or the constraints violate an invariant, e.g. a zero row or ``b_i <= 0``.
    """
    try:
        with open(path, encoding="utf-8") as fp:
            A, b = PolytopeReader(fp).read()
    except OSError as exc:
        raise PolytopeException(f"cannot read polytope file {os.fspath(path)!r}: {exc.strerror}") from exc

    return HPolytope(A, b)


def write_polytope(P: HPolytope, path: str | os.PathLike[str], *, comment: str | None = None) -> None:
    """Write a polytope in the text format with 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fp:
        writer = PolytopeWriter(fp)

        if comment:
            writer.write_comment(comment)

        writer.write(P.A, P.b)


def make_model(
    kind: ModelKind, dim: int | None = None, path: str | os.PathLike[str] | None = None
) -> tuple[HPolytope, ModelInfo]:
    """Build a named model or load a file polytope.

    File polytopes get their bounding radius from :func:`bounding_radius` and no exact volume.
    """
    if kind is ModelKind.file:
        if path is None:
            raise PolytopeException("a file model needs a path")

        P = read_polytope(path)
        if dim is not None and dim != P.dim:
            raise DimensionMismatchException(expected=dim, received=P.dim)

        radius = bounding_radius(P)
        logger.debug(f"Computed bounding radius {radius:.6g} for {P!r} read from {os.fspath(path)!r}")
        return P, ModelInfo(ModelKind.file, bounding_radius=radius)

    if dim is None:
        raise PolytopeException(f"model {kind.value!r} needs a dimension")

    builders = {
        ModelKind.cube: make_cube,
        ModelKind.std_simplex: make_std_simplex,
        ModelKind.iso_simplex: make_iso_simplex,
    }
    return builders[kind](dim)
