"""Cloud side: ground-truth stores, retraining, and pushing models to the fog."""
from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.preprocess import fit_preprocessor, split
from .data.records import Record, decode_record_line, encode_record_line
from .data.schemas import Schema, get_schema
from .errors import (
    ConnectFailure,
    DTwinError,
    FogUnreachable,
    InsufficientData,
    MalformedMessage,
    SchemaMismatch,
    StorageFailure,
)
from .ml.metrics import Metrics
from .ml.model import Hyperparams, TrainedModel, evaluate, model_to_bytes, train
from .protocol import MODEL_PUSH_PORT, LineClient

log = logging.getLogger(__name__)

MIN_PER_CLASS = 50
SPLIT_RATIO = 0.8

# which fog classifier a schema feeds
SCHEMA_KIND = {"anoml_iot": "data_anomaly", "ds2os": "data_anomaly", "iotid20": "network_intrusion"}


def kind_for_schema(schema) -> str:
    name = schema.name if isinstance(schema, Schema) else get_schema(schema).name
    return SCHEMA_KIND[name]


class GroundTruthStore:
    """Append-only record log, one JSON line per record, fsync'd per append.

    A torn final line (crash mid-write) is ignored on open and overwritten
    by the next append.
    """

    def __init__(self, path, schema: Schema | str):
        self.path = Path(path)
        self.schema = get_schema(schema) if isinstance(schema, str) else schema
        self._lock = threading.Lock()
        self._count = 0
        self._good_size = 0
        if self.path.exists():
            self._scan()

    def _scan(self):
        size = 0
        n = 0
        with open(self.path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    break
                rec = decode_record_line(line)
                if rec.schema != self.schema.name:
                    raise SchemaMismatch(f"{self.path} holds {rec.schema} records, not {self.schema.name}")
                size += len(line)
                n += 1
        self._count = n
        self._good_size = size

    def __len__(self):
        return self._count

    @property
    def count(self):
        return self._count

    def append(self, record: Record) -> int:
        return self.append_many([record])

    def append_many(self, records) -> int:
        lines = []
        for r in records:
            if r.schema != self.schema.name:
                raise SchemaMismatch(f"record of schema {r.schema} appended to {self.schema.name} store")
            lines.append(encode_record_line(r))
        data = "".join(lines).encode()
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                fd = os.open(self.path, os.O_WRONLY | os.O_CREAT, 0o644)
                try:
                    os.ftruncate(fd, self._good_size)
                    os.lseek(fd, self._good_size, os.SEEK_SET)
                    os.write(fd, data)
                    os.fsync(fd)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise StorageFailure(f"cannot append to {self.path}: {exc}") from None
            self._good_size += len(data)
            self._count += len(lines)
            return self._count

    def replay(self, limit=None) -> list:
        """The first ``limit`` records (all when None), in append order."""
        with self._lock:
            size = self._good_size
        out = []
        if size == 0:
            return out
        with open(self.path, "rb") as fh:
            blob = fh.read(size)
        for line in blob.splitlines():
            if limit is not None and len(out) >= limit:
                break
            out.append(decode_record_line(line))
        return out


def append_ground_truth(store: GroundTruthStore, record: Record) -> int:
    return store.append(record)


def label_records(records, labels: dict, default=None):
    """Attach labels by record id. Records absent from ``labels`` get
    ``default`` (None keeps them unlabelled). ``labels`` values are 0/1 or
    ``(1, sublabel)``."""
    out = []
    for r in records:
        lab = labels.get(r.record_id, default)
        sub = None
        if isinstance(lab, tuple):
            lab, sub = lab
        if lab is None and r.label is not None:
            lab, sub = r.label, r.sublabel
        out.append(Record(r.schema, dict(r.values), lab, sub if lab == 1 else None, r.record_id))
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class TrainingJob:
    schema: str
    hyperparams: Hyperparams
    bound: int  # records of the store prefix used
    model: TrainedModel
    metrics: Metrics
    fit_time_s: float
    n_train: int
    n_test: int
    split_seed: int = 0
    split_ratio: float = SPLIT_RATIO
    model_bytes: bytes = field(default=b"", repr=False)

    @property
    def kind(self):
        return self.hyperparams.kind

    @property
    def model_kind(self):
        return kind_for_schema(self.schema)

    @property
    def digest(self):
        return hashlib.sha256(self.model_bytes).hexdigest()[:16]

    def write(self, path) -> int:
        Path(path).write_bytes(self.model_bytes)
        return len(self.model_bytes)


def train_on_records(records, hp: Hyperparams, *, split_seed=0, ratio=SPLIT_RATIO, bound=None, schema=None):
    """Split, fit the preprocessor on the training side, train, evaluate."""
    records = [r for r in records if r.label is not None]
    if not records:
        raise InsufficientData("no labelled records")
    schema = schema or records[0].schema
    if isinstance(schema, str):
        schema = get_schema(schema)
    train_recs, test_recs = split(records, ratio, split_seed)
    pp = fit_preprocessor(train_recs, schema)
    Xtr, ytr = pp.transform_many(train_recs)
    Xte, yte = pp.transform_many(test_recs)
    model = train(
        Xtr,
        ytr,
        hp,
        fingerprint=pp.fingerprint(),
        preprocessor=pp.to_dict(),
        metadata={"schema": schema.name, "split_seed": int(split_seed), "split_ratio": ratio},
    )
    metrics = evaluate(model, Xte, yte)
    return TrainingJob(
        schema=schema.name,
        hyperparams=hp,
        bound=len(records) if bound is None else bound,
        model=model,
        metrics=metrics,
        fit_time_s=model.metadata["fit_time_s"],
        n_train=len(train_recs),
        n_test=len(test_recs),
        split_seed=split_seed,
        split_ratio=ratio,
        model_bytes=model_to_bytes(model),
    )


def retrain(store: GroundTruthStore, hp: Hyperparams, split_seed=0, *, bound=None, min_per_class=MIN_PER_CLASS):
    """Train on the labelled records of the first ``bound`` store entries."""
    bound = store.count if bound is None else min(bound, store.count)
    records = [r for r in store.replay(bound) if r.label is not None]
    counts = np.bincount(np.asarray([r.label for r in records], dtype=np.int64), minlength=2)
    if counts.min() < min_per_class:
        raise InsufficientData(
            f"need {min_per_class} labelled records per class, have {counts[0]} normal / {counts[1]} anomalous"
        )
    return train_on_records(records, hp, split_seed=split_seed, bound=bound, schema=store.schema)


# --------------------------------------------------------------------------
# push


def push_model(job_or_bytes, host="127.0.0.1", port=MODEL_PUSH_PORT, model_kind=None, timeout=30.0) -> dict:
    """Send a model to the fog push listener; returns the ack payload
    (``version`` is the new served version)."""
    # imported here: detection pulls in the serving stack, the trainer does not need it otherwise
    from .detection import model_push_message

    if isinstance(job_or_bytes, TrainingJob):
        data = job_or_bytes.model_bytes
        model_kind = model_kind or job_or_bytes.model_kind
    else:
        data = bytes(job_or_bytes)
    if model_kind is None:
        raise ValueError("model_kind is required when pushing raw bytes")
    try:
        with LineClient(host, port, timeout=timeout) as client:
            reply = client.request(model_push_message(model_kind, data))
    except ConnectFailure as exc:
        raise FogUnreachable(f"fog push endpoint {host}:{port}: {exc}") from None
    if reply.kind == "error":
        err, msg = reply.payload.get("error"), reply.payload.get("message", "")
        if err == "SchemaMismatch":
            raise SchemaMismatch(msg)
        if err in ("CorruptModelFile", "MalformedMessage"):
            raise MalformedMessage(f"fog rejected the model: {msg}")
        raise DTwinError(f"fog push failed with {err}: {msg}")
    return dict(reply.payload)


class PeriodicTrainer:
    """Retrain each store when it has grown, then push. One job at a time.

    Appends go on concurrently: each round trains on the prefix present when
    the round began.
    """

    def __init__(self, stores: dict, hp_by_store: dict, *, host="127.0.0.1", port=MODEL_PUSH_PORT,
                 interval_s=60.0, split_seed=0, min_per_class=MIN_PER_CLASS, output_dir=None):
        self.stores = stores  # name -> GroundTruthStore
        self.hp_by_store = hp_by_store
        self.host = host
        self.port = port
        self.interval_s = interval_s
        self.split_seed = split_seed
        self.min_per_class = min_per_class
        self.output_dir = Path(output_dir) if output_dir else None
        self.pushes = []  # (store name, bound, ack payload)
        self.failures = []
        self._seen = {}
        self._stop = threading.Event()
        self._thread = None

    def run_once(self):
        pushed = []
        for name, store in self.stores.items():
            bound = store.count
            if bound == self._seen.get(name):
                continue
            try:
                job = retrain(store, self.hp_by_store[name], self.split_seed, bound=bound,
                              min_per_class=self.min_per_class)
                if self.output_dir is not None:
                    self.output_dir.mkdir(parents=True, exist_ok=True)
                    job.write(self.output_dir / f"{name}-{bound}.dtm")
                ack_payload = push_model(job, self.host, self.port)
            except (InsufficientData, FogUnreachable, SchemaMismatch) as exc:
                log.warning("store %s: %s", name, exc)
                self.failures.append((name, bound, type(exc).__name__, str(exc)))
                continue
            self._seen[name] = bound
            self.pushes.append((name, bound, ack_payload))
            pushed.append(ack_payload)
            log.info("store %s: pushed model trained on %d records, fog version %s",
                     name, bound, ack_payload.get("version"))
        return pushed

    def run(self, iterations=None):
        i = 0
        while not self._stop.is_set() and (iterations is None or i < iterations):
            t0 = time.monotonic()
            self.run_once()
            i += 1
            if iterations is not None and i >= iterations:
                break
            self._stop.wait(max(0.0, self.interval_s - (time.monotonic() - t0)))

    def start(self, iterations=None):
        self._thread = threading.Thread(target=self.run, args=(iterations,), name="trainer", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=60)
