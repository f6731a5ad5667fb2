from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Sequence
from typing import IO, TYPE_CHECKING, Any

import numpy as np
from scipy.stats import linregress

from .volume import VolumeEstimate

if TYPE_CHECKING:
    from .types.report import (
        AggregatePayload,
        BenchmarkRecordPayload,
        BenchmarkReportPayload,
        RegressionPayload,
        RepeatPayload,
        RunReportPayload,
    )


__all__ = (
    "RepeatRecord",
    "Aggregate",
    "RunReport",
    "Regression",
    "BenchmarkRecord",
    "BenchmarkReport",
    "CSV_FIELDS",
)


CSV_FIELDS: tuple[str, ...] = (
    "model",
    "dim",
    "seed",
    "N",
    "repeat",
    "log_volume",
    "volume_mantissa",
    "volume_exp10",
    "rel_error",
    "time_s",
    "sigma0",
    "log_mass0",
    "phases",
    "bounces",
    "reflections",
    "refreshes",
    "outputs",
    "M",
    "R",
)


class RepeatRecord:
    """One repeat of a volume run, as stored in the JSON report.

    Attributes
    ----------
    repeat: int
        The repeat index.
    log_volume: float
        The natural log of the estimate.
    rel_error: float | None
        The relative error against the exact volume. Could be None.
    time_s: float
        Wall-clock seconds of the repeat.
    m_count: int
        Escapes detected (#M).
    r_count: int
        Fallbacks to a new velocity (#R).
    """

    def __init__(self, data: RepeatPayload) -> None:
        self.repeat: int = data["repeat"]
        self.log_volume: float = data["log_volume"]
        self.rel_error: float | None = data["rel_error"]
        self.time_s: float = data["time_s"]
        self.m_count: int = data["numerics"]["M"]
        self.r_count: int = data["numerics"]["R"]

        self._data = data

    def __repr__(self) -> str:
        return f"RepeatRecord(repeat={self.repeat}, log_volume={self.log_volume:.6g}, rel_error={self.rel_error})"

    @classmethod
    def from_estimate(cls, estimate: VolumeEstimate) -> RepeatRecord:
        return cls(estimate.to_payload())

    @property
    def data(self) -> RepeatPayload:
        """The raw payload of this repeat."""
        return self._data

    def csv_row(self) -> dict[str, Any]:
        data = self._data
        return {
            "repeat": data["repeat"],
            "log_volume": repr(data["log_volume"]),
            "volume_mantissa": repr(data["volume_mantissa"]),
            "volume_exp10": data["volume_exp10"],
            "rel_error": "" if data["rel_error"] is None else repr(data["rel_error"]),
            "time_s": repr(data["time_s"]),
            "sigma0": repr(data["sigma0"]),
            "log_mass0": repr(data["log_mass0"]),
            "phases": len(data["phases"]),
            "bounces": data["events"]["bounces"],
            "reflections": data["events"]["reflections"],
            "refreshes": data["events"]["refreshes"],
            "outputs": data["events"]["outputs"],
            "M": data["numerics"]["M"],
            "R": data["numerics"]["R"],
        }


class Aggregate:
    """Medians and totals over the repeats of a run.

    The values only depend on the per-repeat records, so they can be recomputed from a stored report.

    Attributes
    ----------
    median_log_volume: float
        Median of the log-volumes.
    median_rel_error: float | None
        Median relative error, ``None`` when the exact volume is unknown.
    median_time_s: float
        Median wall-clock seconds per repeat.
    m_total: int
        Total escapes over all repeats.
    r_total: int
        Total fallbacks over all repeats.
    """

    def __init__(self, records: Sequence[RepeatRecord]) -> None:
        if not records:
            raise ValueError("cannot aggregate zero repeats")

        self.median_log_volume: float = float(np.median([r.log_volume for r in records]))
        self.median_time_s: float = float(np.median([r.time_s for r in records]))
        self.m_total: int = sum(r.m_count for r in records)
        self.r_total: int = sum(r.r_count for r in records)

        errors = [r.rel_error for r in records]
        self.median_rel_error: float | None = None
        if all(e is not None for e in errors):
            self.median_rel_error = float(np.median([e for e in errors if e is not None]))

    def to_payload(self) -> AggregatePayload:
        return {
            "median_log_volume": self.median_log_volume,
            "median_rel_error": self.median_rel_error,
            "median_time_s": self.median_time_s,
            "M_total": self.m_total,
            "R_total": self.r_total,
        }


class RunReport:
    """The report of a ``volume`` run.

    .. container:: operations

        .. describe:: len(report)

            The number of repeats.

    Attributes
    ----------
    model: str
        The model name.
    dim: int
        The dimension.
    seed: int
        The run seed.
    budget: int
        ``N``, the sample budget of every repeat.
    exact_log_volume: float | None
        The exact log-volume. Could be None.
    records: list[:class:`RepeatRecord`]
        The repeats, ordered by repeat index.
    aggregate: :class:`Aggregate`
        Medians and totals over :attr:`records`.
    """

    def __init__(
        self,
        *,
        model: str,
        dim: int,
        seed: int,
        budget: int,
        records: Iterable[RepeatRecord],
        exact_log_volume: float | None = None,
    ) -> None:
        self.model = model
        self.dim = dim
        self.seed = seed
        self.budget = budget
        self.exact_log_volume = exact_log_volume
        self.records: list[RepeatRecord] = sorted(records, key=lambda r: r.repeat)
        self.aggregate: Aggregate = Aggregate(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"RunReport(model={self.model!r}, dim={self.dim}, repeats={len(self)})"

    @classmethod
    def from_estimates(
        cls,
        estimates: Iterable[VolumeEstimate],
        *,
        model: str,
        dim: int,
        seed: int,
        budget: int,
        exact_log_volume: float | None = None,
    ) -> RunReport:
        return cls(
            model=model,
            dim=dim,
            seed=seed,
            budget=budget,
            records=[RepeatRecord.from_estimate(e) for e in estimates],
            exact_log_volume=exact_log_volume,
        )

    @classmethod
    def from_payload(cls, data: RunReportPayload) -> RunReport:
        """Rebuild a report, aggregates included, from its JSON payload. Stored aggregates are ignored."""
        return cls(
            model=data["model"],
            dim=data["dim"],
            seed=data["seed"],
            budget=data["N"],
            records=[RepeatRecord(r) for r in data["results"]],
            exact_log_volume=data["exact_log_volume"],
        )

    def to_payload(self) -> RunReportPayload:
        return {
            "model": self.model,
            "dim": self.dim,
            "seed": self.seed,
            "N": self.budget,
            "repeats": len(self),
            "exact_log_volume": self.exact_log_volume,
            "results": [r.data for r in self.records],
            "aggregate": self.aggregate.to_payload(),
        }

    def write_json(self, fp: IO[str]) -> None:
        json.dump(self.to_payload(), fp, indent=2)
        fp.write("\n")

    def write_csv(self, fp: IO[str]) -> None:
        writer = csv.DictWriter(fp, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()

        for record in self.records:
            row = {"model": self.model, "dim": self.dim, "seed": self.seed, "N": self.budget}
            writer.writerow({**row, **record.csv_row()})


class Regression:
    """A least-squares line ``y = slope * x + intercept`` fitted in log-log scale.

    Attributes
    ----------
    slope: float
    intercept: float
    r_squared: float
    """

    def __init__(self, slope: float, intercept: float, r_squared: float) -> None:
        self.slope = slope
        self.intercept = intercept
        self.r_squared = r_squared

    def __repr__(self) -> str:
        return f"Regression(slope={self.slope:.4g}, intercept={self.intercept:.4g}, r_squared={self.r_squared:.4g})"

    @classmethod
    def fit(cls, x: Sequence[float], y: Sequence[float]) -> Regression | None:
        """Fit ``y`` against ``x``. ``None`` with fewer than two distinct ``x`` values."""
        if len(set(x)) < 2:
            return None

        result = linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return cls(float(result.slope), float(result.intercept), float(result.rvalue) ** 2)

    def to_payload(self) -> RegressionPayload:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}


class BenchmarkRecord:
    """The outcome of the budget search in one dimension.

    Attributes
    ----------
    dim: int
        The dimension.
    n_final: int
        The last budget tested.
    report: :class:`RunReport`
        The repeats run at :attr:`n_final`.
    incomplete: bool
        Whether the search stopped before its error landed in the target band.
    """

    def __init__(self, *, dim: int, n_final: int, report: RunReport, incomplete: bool = False) -> None:
        self.dim = dim
        self.n_final = n_final
        self.report = report
        self.incomplete = incomplete

    def __repr__(self) -> str:
        return f"BenchmarkRecord(dim={self.dim}, n_final={self.n_final}, incomplete={self.incomplete})"

    @property
    def median_rel_error(self) -> float:
        error = self.report.aggregate.median_rel_error
        return math.nan if error is None else error

    @property
    def median_time_s(self) -> float:
        return self.report.aggregate.median_time_s

    def to_payload(self) -> BenchmarkRecordPayload:
        aggregate = self.report.aggregate
        return {
            "dim": self.dim,
            "N_final": self.n_final,
            "median_rel_error": self.median_rel_error,
            "median_time_s": self.median_time_s,
            "volumes": [r.log_volume for r in self.report.records],
            "M_total": aggregate.m_total,
            "R_total": aggregate.r_total,
            "log_dim": math.log(self.dim),
            "log_time": math.log(max(self.median_time_s, 1e-9)),
            "log_N": math.log(self.n_final),
            "incomplete": self.incomplete,
        }


class BenchmarkReport:
    """Budget-search records over several dimensions and their log-log regressions.

    Attributes
    ----------
    model: str
    seed: int
    repeats: int
    target_error: float
    error_band: float
    records: list[:class:`BenchmarkRecord`]
        Completed dimensions in the order they ran.
    incomplete: bool
        Whether a dimension was cut short or skipped.
    """

    def __init__(
        self,
        *,
        model: str,
        seed: int,
        repeats: int,
        target_error: float,
        error_band: float,
        records: Iterable[BenchmarkRecord],
        incomplete: bool = False,
    ) -> None:
        self.model = model
        self.seed = seed
        self.repeats = repeats
        self.target_error = target_error
        self.error_band = error_band
        self.records: list[BenchmarkRecord] = list(records)
        self.incomplete = incomplete or any(r.incomplete for r in self.records)

    def __repr__(self) -> str:
        dims = [r.dim for r in self.records]
        return f"BenchmarkReport(model={self.model!r}, dims={dims}, incomplete={self.incomplete})"

    @property
    def time_regression(self) -> Regression | None:
        """``log(time)`` against ``log(d)`` over the completed dimensions."""
        done = [r for r in self.records if not r.incomplete and r.median_time_s > 0]
        points = [(math.log(r.dim), math.log(r.median_time_s)) for r in done]
        return Regression.fit([p[0] for p in points], [p[1] for p in points])

    @property
    def samples_regression(self) -> Regression | None:
        """``log(N)`` against ``log(d)`` over the completed dimensions."""
        points = [(math.log(r.dim), math.log(r.n_final)) for r in self.records if not r.incomplete]
        return Regression.fit([p[0] for p in points], [p[1] for p in points])

    def to_payload(self) -> BenchmarkReportPayload:
        time_fit = self.time_regression
        samples_fit = self.samples_regression
        return {
            "model": self.model,
            "seed": self.seed,
            "repeats": self.repeats,
            "target_error": self.target_error,
            "error_band": self.error_band,
            "records": [r.to_payload() for r in self.records],
            "time_regression": time_fit.to_payload() if time_fit else None,
            "samples_regression": samples_fit.to_payload() if samples_fit else None,
            "incomplete": self.incomplete,
        }

    def write_json(self, fp: IO[str]) -> None:
        json.dump(self.to_payload(), fp, indent=2)
        fp.write("\n")

    def write_csv(self, fp: IO[str]) -> None:
        fields = ("dim", "N_final", "median_rel_error", "median_time_s", "M_total", "R_total", "incomplete")
        writer = csv.DictWriter(fp, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()

        for record in self.records:
            writer.writerow(record.to_payload())
