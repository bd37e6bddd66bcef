import csv
import io
import math
import random

import numpy as np
import pytest

from dtwin.bench import (
    LatencyReport,
    TimingReport,
    bench_end_to_end,
    bench_model_timings,
    latency_table,
    mean_se,
    timings_for_dataset,
    timings_table,
    to_csv,
)


def test_mean_se_against_brute_force():
    rng = random.Random(0)
    for _ in range(200):
        vals = [rng.uniform(-5, 5) for _ in range(rng.randint(2, 12))]
        n = len(vals)
        mean = sum(vals) / n
        var = sum((v - mean) ** 2 for v in vals) / (n - 1)
        m, se = mean_se(vals)
        assert math.isclose(m, mean, rel_tol=1e-12, abs_tol=1e-12)
        assert math.isclose(se, math.sqrt(var / n), rel_tol=1e-9, abs_tol=1e-12)
    assert mean_se([3.0]) == (3.0, None)
    assert mean_se([]) == (None, None)


def test_single_run_reports_se_unavailable():
    r = TimingReport("d", "rf", 10, [1.0], [], [0.5], 1)
    assert r.row()["classify_ms_se"] is None and r.row()["fit_s"] is None
    assert "SE n/a" in timings_table([r])


def test_timings_report_fields(tmp_path):
    r = timings_for_dataset("anoml_iot", "mlp", n=600, runs=3, workdir=tmp_path)
    row = r.row()
    assert row["runs"] == 3 and row["size_bytes"] > 0
    for key in ("load_ms", "fit_s", "classify_ms", "load_ms_se", "fit_s_se", "classify_ms_se"):
        assert row[key] >= 0
    assert row["n_fit"] == 480 and row["n_eval"] == 120
    assert list(tmp_path.iterdir()) == []  # temp model cleaned up


def test_timings_repeatable_within_half(tmp_path, anoml_rf_job):
    path = tmp_path / "m.dtm"
    anoml_rf_job.write(path)
    X = np.random.default_rng(0).random((1000, 4))
    a = bench_model_timings(path, X, runs=5).row()
    b = bench_model_timings(path, X, runs=5).row()
    assert a["size_bytes"] == b["size_bytes"]
    assert abs(a["classify_ms"] - b["classify_ms"]) <= 0.5 * max(a["classify_ms"], b["classify_ms"])


def test_timings_rejects_bad_input(tmp_path, anoml_rf_job):
    path = tmp_path / "m.dtm"
    anoml_rf_job.write(path)
    with pytest.raises(ValueError):
        bench_model_timings(path, np.empty((0, 4)))
    with pytest.raises(ValueError):
        bench_model_timings(path, np.zeros((2, 4)), runs=0)


@pytest.mark.parametrize("mode", ["loaded", "unloaded"])
def test_end_to_end_report(mode):
    r = bench_end_to_end("anoml_iot", "svm", mode, runs=3, n=600)
    assert r.runs == 3 and all(v >= 0 for v in r.runs_ms)
    assert r.versions == [1, 1, 1]
    assert "wire receipt" in r.start_point
    assert r.mean_ms >= 0 and r.se_ms >= 0


def test_end_to_end_network_dataset():
    r = bench_end_to_end("iotid20", "mlp", runs=2, n=600)
    assert r.runs == 2 and r.classifier == "mlp"


def test_csv_and_tables():
    reps = [LatencyReport("anoml_iot", "rf", "loaded", [1.0, 2.0]), LatencyReport("ds2os", "svm", "unloaded", [4.0])]
    rows = list(csv.DictReader(io.StringIO(to_csv(reps))))
    assert [r["mode"] for r in rows] == ["loaded", "unloaded"]
    assert float(rows[0]["mean_ms"]) == 1.5 and rows[1]["se_ms"] == ""
    table = latency_table(reps)
    assert "1.500 ± 0.500" in table and "wire receipt" in table
    assert to_csv([]) == ""
    with pytest.raises(ValueError):
        bench_end_to_end("anoml_iot", "rf", "warm")
