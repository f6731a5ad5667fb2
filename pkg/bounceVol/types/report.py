from typing import TypedDict


class EssPayload(TypedDict):
    ess_min: float
    ess_norm: float
    ess_per_sample: float
    n: int
    wall_time: float
    work: int


class PhasePayload(TypedDict):
    index: int
    sigma: float
    sigma_next: float
    N_i: int
    ess_per_sample: float
    log_ratio: float
    final: bool
    time_s: float
    lambda_out: float
    lambda_refresh: float
    pilot: EssPayload | None


class EventsPayload(TypedDict):
    bounces: int
    reflections: int
    refreshes: int
    outputs: int


class NumericsPayload(TypedDict):
    M: int
    R: int


class RepeatPayload(TypedDict):
    repeat: int
    log_volume: float
    volume_mantissa: float
    volume_exp10: int
    rel_error: float | None
    time_s: float
    sigma0: float
    log_mass0: float
    phases: list[PhasePayload]
    events: EventsPayload
    numerics: NumericsPayload


class AggregatePayload(TypedDict):
    median_log_volume: float
    median_rel_error: float | None
    median_time_s: float
    M_total: int
    R_total: int


class RunReportPayload(TypedDict):
    model: str
    dim: int
    seed: int
    N: int
    repeats: int
    exact_log_volume: float | None
    results: list[RepeatPayload]
    aggregate: AggregatePayload


class BenchmarkRecordPayload(TypedDict):
    dim: int
    N_final: int
    median_rel_error: float
    median_time_s: float
    volumes: list[float]
    M_total: int
    R_total: int
    log_dim: float
    log_time: float
    log_N: float
    incomplete: bool


class RegressionPayload(TypedDict):
    slope: float
    intercept: float
    r_squared: float


class BenchmarkReportPayload(TypedDict):
    model: str
    seed: int
    repeats: int
    target_error: float
    error_band: float
    records: list[BenchmarkRecordPayload]
    time_regression: RegressionPayload | None
    samples_regression: RegressionPayload | None
    incomplete: bool
