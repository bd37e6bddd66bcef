import socket

import pytest

from dtwin.cloud import (
    GroundTruthStore,
    PeriodicTrainer,
    label_records,
    push_model,
    retrain,
    train_on_records,
)
from dtwin.data import Record, generate_synthetic
from dtwin.detection import DATA_ANOMALY, FogStack
from dtwin.errors import FogUnreachable, InsufficientData, SchemaMismatch, StorageFailure
from dtwin.ml.model import Hyperparams

MLP = Hyperparams(kind="mlp", mlp_epochs=30)


def free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def test_append_and_replay_in_order(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    recs = generate_synthetic("anoml_iot", 10, 0.2, 0)
    for i, r in enumerate(recs, 1):
        assert store.append(r) == i
    assert store.replay() == recs
    assert store.replay(3) == recs[:3]


def test_schema_mismatch_on_append(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    with pytest.raises(SchemaMismatch):
        store.append(generate_synthetic("iotid20", 1, 0.0, 0)[0])
    assert len(store) == 0


def test_reopen_sees_everything_and_ignores_torn_tail(tmp_path):
    path = tmp_path / "gt.jsonl"
    recs = generate_synthetic("ds2os", 20, 0.1, 0)
    GroundTruthStore(path, "ds2os").append_many(recs)
    with open(path, "ab") as fh:
        fh.write(b'{"schema":"ds2os","val')  # crash mid-write
    store = GroundTruthStore(path, "ds2os")
    assert store.replay() == recs
    store.append(recs[0])
    assert GroundTruthStore(path, "ds2os").replay() == recs + [recs[0]]
    with pytest.raises(SchemaMismatch):
        GroundTruthStore(path, "anoml_iot")


def test_storage_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    store = GroundTruthStore(blocker / "gt.jsonl", "anoml_iot")
    with pytest.raises(StorageFailure):
        store.append(generate_synthetic("anoml_iot", 1, 0.0, 0)[0])


def test_label_records():
    recs = [Record("ds2os", {"value": 1.0}, None, None, f"r{i}") for i in range(4)]
    out = label_records(recs, {"r0": 1, "r1": (1, "DoSattack"), "r2": 0})
    assert [(r.label, r.sublabel) for r in out] == [(1, None), (1, "DoSattack"), (0, None), (None, None)]
    assert label_records(recs, {}, default=0)[3].label == 0


def test_retrain_reaches_target_and_is_reproducible(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    store.append_many(generate_synthetic("anoml_iot", 2000, 0.1, 0))
    job = retrain(store, MLP, split_seed=3)
    assert job.metrics.f1 >= 0.9 and job.bound == 2000
    assert (job.n_train, job.n_test) == (1600, 400)
    again = retrain(store, MLP, split_seed=3)
    assert again.model_bytes == job.model_bytes
    store.append_many(generate_synthetic("anoml_iot", 10, 0.5, 9))
    bounded = retrain(store, MLP, split_seed=3, bound=2000)
    assert bounded.model_bytes == job.model_bytes


def test_retrain_needs_both_classes(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    store.append_many(generate_synthetic("anoml_iot", 300, 0.0, 0))
    with pytest.raises(InsufficientData):
        retrain(store, MLP)
    unlabelled = [Record("anoml_iot", r.values, None) for r in generate_synthetic("anoml_iot", 5, 0.0, 0)]
    with pytest.raises(InsufficientData):
        train_on_records(unlabelled, MLP)


def test_push_unreachable(anoml_mlp_job):
    with pytest.raises(FogUnreachable):
        push_model(anoml_mlp_job, port=free_port(), timeout=1)


def test_periodic_trainer_pushes_growing_store(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    data = generate_synthetic("anoml_iot", 900, 0.2, 0)
    with FogStack(push_port=0) as fog:
        trainer = PeriodicTrainer(
            {"anoml": store}, {"anoml": Hyperparams(kind="mlp", mlp_epochs=5)},
            port=fog.push.port, interval_s=0, min_per_class=20, output_dir=tmp_path / "models",
        )
        for k in range(3):
            store.append_many(data[k * 300:(k + 1) * 300])
            trainer.run_once()
        assert trainer.run_once() == []  # store unchanged, nothing to do
        assert [b for _, b, _ in trainer.pushes] == [300, 600, 900]
        assert [a["version"] for _, _, a in trainer.pushes] == [1, 2, 3]
        assert fog.service.served_version(DATA_ANOMALY) == 3
    assert len(list((tmp_path / "models").glob("*.dtm"))) == 3


def test_periodic_trainer_records_failures(tmp_path):
    store = GroundTruthStore(tmp_path / "gt.jsonl", "anoml_iot")
    store.append_many(generate_synthetic("anoml_iot", 200, 0.2, 0))
    trainer = PeriodicTrainer({"a": store}, {"a": Hyperparams(kind="linear_svm")}, port=free_port(), interval_s=0,
                              min_per_class=20)
    trainer.run(iterations=2)
    assert [f[2] for f in trainer.failures] == ["FogUnreachable", "FogUnreachable"]
    assert trainer.pushes == []
