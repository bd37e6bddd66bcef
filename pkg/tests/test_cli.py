import json
import os
import subprocess
import sys
import time

import pytest

from dtwin.cli import dispatch
from dtwin.ml.model import load_model


@pytest.fixture
def run(capsys, monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for k in list(os.environ):
        if k.startswith("DTW_") and k != "DTW_NUMBA":
            monkeypatch.delenv(k)

    def _run(*argv):
        code = dispatch([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return _run


def test_twin_lifecycle(run, tmp_path, sensor_config_text):
    cfg = tmp_path / "node.json"
    cfg.write_text(sensor_config_text)
    code, out, _ = run("twin", "create", "--config", cfg)
    assert code == 0 and out.strip() == "lab:arduino:1.0/1"
    assert run("twin", "create", "--config", cfg)[0] == 1  # duplicate
    assert run("twin", "update", "lab:arduino:1.0/1", "temperature=21.5", "light=3")[1].strip() == "2"
    got = json.loads(run("twin", "get", "lab:arduino:1.0/1")[1])
    assert got["features"]["temperature"] == 21.5 and got["revision"] == 2 and got["quarantine"] is None
    assert run("twin", "update", "lab:arduino:1.0/1", "pressure=1")[0] == 1
    assert run("twin", "update", "lab:arduino:1.0/1", "light=nan")[0] == 1
    assert run("twin", "get", "lab:arduino:1.0/9")[0] == 1
    assert run("twin", "release", "lab:arduino:1.0/1")[1].strip() == "not quarantined"
    assert run("twin", "create", "--sensor-node", "7")[1].strip() == "arduino:sensor-node/7"
    assert (tmp_path / "twins.json").exists()


def test_twin_config_errors(run, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"definition": "a:b"}')
    code, _, err = run("twin", "create", "--config", bad)
    assert code == 1 and "MissingSection" in err
    assert run("twin", "create")[0] == 1
    assert run("twin", "create", "--config", tmp_path / "none.json")[0] == 1


def test_usage_errors_exit_one(run):
    assert run("frobnicate")[0] == 1
    assert run()[0] == 1
    assert run("datagen", "--out", "x.csv", "--rate", "2")[0] == 1
    assert run("--version")[0] == 0


def test_datagen_train_and_reproducibility(run, tmp_path):
    code, out, _ = run("datagen", "--scenario", "anoml_iot", "--n", 1000, "--out", "d.csv", "--seed", 4)
    assert code == 0 and "100 anomalous" in out
    code, out, _ = run("train", "--schema", "anoml_iot", "--in", "d.csv", "--out", "a.dtm", "--model", "mlp",
                       "--format", "csv")
    assert code == 0
    head, vals = out.strip().splitlines()
    row = dict(zip(head.split(","), vals.split(",")))
    assert float(row["accuracy"]) >= 0.95 and row["model"] == "mlp"
    run("train", "--schema", "anoml_iot", "--in", "d.csv", "--out", "b.dtm", "--model", "mlp")
    assert (tmp_path / "a.dtm").read_bytes() == (tmp_path / "b.dtm").read_bytes()
    assert load_model(tmp_path / "a.dtm").kind == "mlp"
    assert run("train", "--schema", "ds2os", "--in", "d.csv", "--out", "c.dtm")[0] == 1  # wrong header
    assert run("train", "--schema", "anoml_iot", "--in", "missing.csv", "--out", "c.dtm")[0] == 1


def test_env_and_config_file_precedence(run, tmp_path, monkeypatch):
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 5}))
    run("--config-file", "cfg.json", "datagen", "--n", 50, "--out", "f.csv")
    monkeypatch.setenv("DTW_SEED", "6")
    run("--config-file", "cfg.json", "datagen", "--n", 50, "--out", "e.csv")
    run("datagen", "--n", 50, "--out", "x.csv", "--seed", 5)
    monkeypatch.delenv("DTW_SEED")
    run("datagen", "--n", 50, "--out", "s6.csv", "--seed", 6)
    read = lambda n: (tmp_path / n).read_bytes()  # noqa: E731
    assert read("f.csv") == read("x.csv")  # file value used
    assert read("e.csv") == read("s6.csv")  # env beats file
    monkeypatch.setenv("DTW_SEED", "6")
    run("datagen", "--n", 50, "--out", "y.csv", "--seed", 5)
    assert read("y.csv") == read("x.csv")  # flag beats env
    monkeypatch.setenv("DTW_SEED", "six")
    assert run("datagen", "--n", 5, "--out", "z.csv")[0] == 1


def test_label_into_store(run, tmp_path):
    run("datagen", "--n", 40, "--rate", "0.25", "--out", "fwd.log", "--format", "log")
    lines = [json.loads(x) for x in (tmp_path / "fwd.log").read_text().splitlines()]
    for x in lines:
        x["label"] = x["sublabel"] = None
    (tmp_path / "fwd.log").write_text("".join(json.dumps(x) + "\n" for x in lines))
    ids = [x["id"] for x in lines]
    (tmp_path / "labels.csv").write_text("record_id,label\n" + "".join(f"{i},1\n" for i in ids[:5]))
    code, out, _ = run("label", "--in", "fwd.log", "--labels", "labels.csv", "--out", "train.log")
    assert code == 0 and "labelled 5 of 40" in out
    code, out, _ = run("label", "--in", "fwd.log", "--labels", "labels.csv", "--default", 0, "--out", "train.log")
    assert "store now holds 45" in out


def test_bench_e2e_csv(run, tmp_path):
    code, out, _ = run("bench", "e2e", "--classifier", "mlp", "--runs", 2, "--n", 600, "--mode", "both",
                       "--format", "csv", "--out", "lat.csv")
    assert code == 0
    lines = (tmp_path / "lat.csv").read_text().splitlines()
    assert lines[0].startswith("dataset,classifier,mode") and len(lines) == 3


def test_bench_timings_table(run):
    code, out, _ = run("bench", "timings", "--classifier", "svm", "--runs", 2, "--n", 600, "--no-fit")
    assert code == 0 and "Classify (ms)" in out and "svm" in out


def test_cloud_without_fog_exits_nonzero(run, tmp_path):
    run("datagen", "--n", 300, "--rate", "0.3", "--out", "gt.log", "--format", "log")
    code, _, err = run("cloud", "--store", "anoml_iot=gt.log", "--push-port", 1, "--iterations", 1,
                       "--interval", 0, "--model", "svm", "--min-per-class", 10)
    assert code == 2 and "FogUnreachable" in err
    assert run("cloud", "--store", "nonsense")[0] == 1


def test_serve_simulate_release(run, tmp_path):
    run("datagen", "--n", 1500, "--out", "d.csv")
    run("train", "--schema", "anoml_iot", "--in", "d.csv", "--out", "m.dtm", "--model", "mlp")
    for i in range(2):
        run("twin", "create", "--sensor-node", f"node-{i}")
    env = {k: v for k, v in os.environ.items() if not k.startswith("DTW_") or k == "DTW_NUMBA"}
    proc = subprocess.Popen(
        [sys.executable, "-m", "dtwin.cli", "serve", "--twins", "twins.json", "--model", "m.dtm",
         "--mirror-port", "0", "--data-port", "0", "--network-port", "0", "--push-port", "0",
         "--store-dir", "gt", "--duration", "20"],
        cwd=tmp_path, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
    )
    try:
        banner = proc.stdout.readline()
        assert banner.startswith("fog listening"), proc.stderr.read()
        port = int(banner.split("mirror ")[1].split(",")[0])
        code, out, _ = run("simulate", "--node", "benign", "--node", "data_anomalous:2", "--duration", 6,
                           "--time-scale", 6, "--no-gateway", "--mirror-port", port, "--format", "csv")
        assert code == 0
        rows = [r.split(",") for r in out.strip().splitlines()[1:]]
        assert rows[0][-1] == "running" and rows[0][4] == "0"
        assert rows[1][-1] == "quarantine" and int(rows[1][4]) >= 1
        bad = "arduino:sensor-node/node-1"
        deadline = time.monotonic() + 5
        while json.loads(run("twin", "get", bad)[1])["quarantine"] is None:
            assert time.monotonic() < deadline, "quarantine never synced to the twin store"
            time.sleep(0.2)
        assert run("twin", "release", bad)[1].strip() == "released"
        time.sleep(2.5)  # two sync rounds: a fog still quarantining would write the mode back
        assert json.loads(run("twin", "get", bad)[1])["quarantine"] is None
        assert run("twin", "release", bad)[1].strip() == "not quarantined"
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    assert (tmp_path / "gt" / "anoml_iot.log").stat().st_size > 0
