import enum

__all__ = (
    "ModelKind",
    "FinalMode",
    "EventKind",
    "OutputFormat",
    "TuningClock",
)


class ModelKind(enum.Enum):
    """Enum representing where a :class:`HPolytope` came from.

    Attributes
    ----------
    cube
        The cube ``-1 <= x_i <= 1``.
    std_simplex
        The standard simplex ``sum(x) <= 1, x >= 0``, translated so its centroid is the origin.
    iso_simplex
        The regular simplex with unit circumradius centered at the origin.
    file
        A polytope read from a file.
    """

    cube = "cube"
    std_simplex = "std-simplex"
    iso_simplex = "iso-simplex"
    file = "file"


class FinalMode(enum.Enum):
    """Enum representing how the last Gaussian of the schedule is converted into a volume.

    Attributes
    ----------
    flat_approx
        Assume the last Gaussian is flat on the polytope. No samples are used.
    exact_ratio
        Estimate ``Vol(H) / integral of f_m over H`` with samples from the last Gaussian. This is the default.
    """

    flat_approx = "flat"
    exact_ratio = "exact"


class EventKind(enum.Enum):
    """Enum representing the events of the Bouncy Particle Sampler.

    Attributes
    ----------
    bounce
        Reflection of the velocity against the gradient of the Gaussian.
    reflect
        Specular reflection off a facet.
    refresh
        Velocity resampled from the standard normal.
    output
        The output clock rang and the current position was emitted.
    """

    bounce = "bounce"
    reflect = "reflect"
    refresh = "refresh"
    output = "output"


class OutputFormat(enum.Enum):
    json = "json"
    csv = "csv"


class TuningClock(enum.Enum):
    """Enum representing the cost measure that refresh-rate tuning divides the ESS by.

    Attributes
    ----------
    work
        Deterministic work units counted by the sampler. Keeps runs reproducible. This is the default.
    wall
        Wall-clock seconds spent generating the pilot samples.
    """

    work = "work"
    wall = "wall"
