import csv
import json
import math

import numpy as np
import pytest

from bounceVol import CSV_FIELDS, EventKind, make_cube, write_polytope
from bounceVol.cli import EXIT_ERROR, EXIT_INCOMPLETE, EXIT_OK, RunConfig, build_parser, main


def test_volume_json(tmp_path):
    out = tmp_path / "report.json"
    code = main(["volume", "--model", "cube", "--dim", "2", "--samples", "1000", "--repeats", "2", "--out", str(out)])

    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["model"] == "cube"
    assert payload["dim"] == 2
    assert payload["repeats"] == 2
    assert payload["exact_log_volume"] == pytest.approx(2.0 * math.log(2.0))
    assert [r["repeat"] for r in payload["results"]] == [0, 1]
    assert payload["aggregate"]["median_rel_error"] is not None


def test_volume_csv(tmp_path):
    out = tmp_path / "report.csv"
    args = ["volume", "--dim", "2", "--samples", "1000", "--repeats", "1", "--format", "csv", "--out", str(out)]

    assert main(args) == EXIT_OK
    with open(out, newline="") as fp:
        rows = list(csv.DictReader(fp))

    assert tuple(rows[0]) == CSV_FIELDS
    assert len(rows) == 1


def test_volume_of_file_polytope(tmp_path):
    path = tmp_path / "square.txt"
    write_polytope(make_cube(2)[0], path)
    out = tmp_path / "report.json"

    code = main(["volume", "--model", f"file:{path}", "--samples", "1000", "--repeats", "1", "--out", str(out)])

    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["model"] == "file"
    assert payload["exact_log_volume"] is None
    assert payload["results"][0]["rel_error"] is None


@pytest.mark.parametrize(
    "argv",
    [
        ["volume", "--model", "dodecahedron", "--dim", "3"],
        ["volume", "--model", "cube"],
        ["volume", "--model", "file"],
        ["volume", "--dim", "2", "--lambda-refresh", "fast"],
        ["volume", "--dim", "2", "--cmin", "0.5", "--cmax", "0.2"],
        ["sample", "--dim", "2"],
        ["benchmark", "--model", "file", "--file", "cube.txt"],
        ["volume", "--model", "file:/nonexistent/polytope.txt"],
    ],
)
def test_invalid_runs_exit_with_error(argv):
    assert main(argv) == EXIT_ERROR


def test_benchmark_incomplete(tmp_path):
    out = tmp_path / "bench.json"
    code = main(["benchmark", "--model", "cube", "--dims", "2,3", "--time-limit", "1e-9", "--out", str(out)])

    assert code == EXIT_INCOMPLETE
    payload = json.loads(out.read_text())
    assert payload["incomplete"]
    assert payload["records"] == []


def test_sample_with_event_log(tmp_path):
    out = tmp_path / "samples.csv"
    log = tmp_path / "events.csv"
    code = main(
        [
            "sample",
            "--dim",
            "3",
            "--sigma",
            "0.8",
            "--samples",
            "300",
            "--event-log",
            str(log),
            "--out",
            str(out),
        ]
    )

    assert code == EXIT_OK

    with open(out, newline="") as fp:
        reader = csv.reader(fp)
        assert next(reader) == ["x1", "x2", "x3"]
        samples = np.array([[float(v) for v in row] for row in reader])

    assert samples.shape == (300, 3)
    assert np.all(np.abs(samples) <= 1.0 + 1e-9)

    with open(log, newline="") as fp:
        events = list(csv.DictReader(fp))

    kinds = {row["kind"] for row in events}
    assert kinds <= {kind.value for kind in EventKind}
    assert EventKind.output.value in kinds
    assert list(events[0]) == ["t", "kind", "x1", "x2", "x3"]


def test_sample_is_reproducible(tmp_path):
    outputs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        argv = ["sample", "--dim", "2", "--sigma", "1.0", "--samples", "100", "--seed", "4", "--out", str(out)]
        assert main(argv) == EXIT_OK
        outputs.append(out.read_text())

    assert outputs[0] == outputs[1]


def test_run_config_from_args():
    args = build_parser().parse_args(
        ["benchmark", "--model", "iso-simplex", "--dims", "5,10", "--lambda-refresh", "2.5", "--final-mode", "flat"]
    )
    config = RunConfig.from_args(args)

    assert config.dims == (5, 10)
    assert config.estimator.lambda_refresh == 2.5
    assert config.estimator.final_mode.value == "flat"
    assert config.dim is None
