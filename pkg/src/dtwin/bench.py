"""Timing and end-to-end latency benchmarks.

Model timings report on-disk size, cold load time, fit time, and
per-record classify time. End-to-end latency is measured at the fog from
wire receipt of the state change to receipt of the classification result,
over loopback, one measured run in flight at a time.
"""
from __future__ import annotations

import csv
import io
import math
import os
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import SPLIT_RATIO, kind_for_schema, push_model, train_on_records
from .data.preprocess import Preprocessor, split
from .data.schemas import CATEGORICAL, get_schema
from .data.synthetic import generate_synthetic
from .detection import DATA_ANOMALY, FogStack
from .errors import BindFailure, ConnectFailure, DTwinError, StackUnavailable
from .ml.model import Hyperparams, load_model, predict, train
from .protocol import LineClient, flow_summary, state_update
from .twin import TwinDefinition

MEASUREMENT_START = "fog wire receipt of the state change"
CLASSIFIERS = {"rf": "random_forest", "svm": "linear_svm", "mlp": "mlp"}
CLASSIFIER_NAMES = {v: k for k, v in CLASSIFIERS.items()}
DESK_RF_TREES = 25


def mean_se(values):
    """``(mean, standard error)``; SE is ``stdev / sqrt(n)`` and None below two runs."""
    vals = [float(v) for v in values]
    if not vals:
        return None, None
    mean = statistics.fmean(vals)
    if len(vals) < 2:
        return mean, None
    return mean, statistics.stdev(vals) / math.sqrt(len(vals))


def desk_hyperparams(classifier, seed=0) -> Hyperparams:
    kind = CLASSIFIERS.get(classifier, classifier)
    return Hyperparams(kind=kind, rf_estimators=DESK_RF_TREES, seed=seed)


# --------------------------------------------------------------------------
# model timings


@dataclass
class TimingReport:
    dataset: str
    classifier: str
    size_bytes: int
    load_ms: list
    fit_s: list
    classify_ms: list  # mean per-record classify time, one entry per run
    n_eval: int
    n_fit: int = 0  # desk-scale training rows used for the fit timing

    @property
    def runs(self):
        return len(self.classify_ms)

    def row(self):
        out = {"dataset": self.dataset, "classifier": self.classifier, "size_bytes": self.size_bytes, "runs": self.runs}
        for name, vals in (("load_ms", self.load_ms), ("fit_s", self.fit_s), ("classify_ms", self.classify_ms)):
            m, se = mean_se(vals)
            out[name] = m
            out[name + "_se"] = se
        out["n_eval"] = self.n_eval
        out["n_fit"] = self.n_fit
        return out


def bench_model_timings(model_path, X_eval, runs=5, *, fit_X=None, fit_y=None, dataset="",
                        max_records=1000) -> TimingReport:
    """Time one model file. Fit time is re-measured only when fit data is
    given, using the hyperparameters recorded in the file."""
    X_eval = np.asarray(X_eval, dtype=np.float64)
    if X_eval.ndim != 2 or X_eval.shape[0] == 0:
        raise ValueError("eval set must be a non-empty 2-D array")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    X_eval = X_eval[:max_records]
    size = os.path.getsize(model_path)
    model = load_model(model_path)
    rows = [np.ascontiguousarray(x) for x in X_eval]
    predict(model, rows[0])  # first call pays any JIT compilation
    load_ms, fit_s, classify_ms = [], [], []
    for _ in range(runs):
        t0 = time.perf_counter_ns()
        model = load_model(model_path)
        load_ms.append((time.perf_counter_ns() - t0) / 1e6)
        if fit_X is not None:
            t0 = time.perf_counter_ns()
            train(fit_X, fit_y, model.hyperparams)
            fit_s.append((time.perf_counter_ns() - t0) / 1e9)
        t0 = time.perf_counter_ns()
        for x in rows:
            predict(model, x)
        classify_ms.append((time.perf_counter_ns() - t0) / 1e6 / len(rows))
    return TimingReport(
        dataset=dataset,
        classifier=CLASSIFIER_NAMES.get(model.kind, model.kind),
        size_bytes=size,
        load_ms=load_ms,
        fit_s=fit_s,
        classify_ms=classify_ms,
        n_eval=len(rows),
        n_fit=0 if fit_X is None else len(fit_X),
    )


def timings_for_dataset(dataset, classifier, *, n=2000, rate=0.1, seed=0, runs=5, workdir=None,
                        with_fit=True) -> TimingReport:
    """Train on synthetic data, write the model, and time it."""
    records = generate_synthetic(dataset, n, rate, seed)
    job = train_on_records(records, desk_hyperparams(classifier, seed), split_seed=seed)
    pp = Preprocessor.from_dict(job.model.preprocessor)
    train_recs, test_recs = split(records, SPLIT_RATIO, seed)
    Xte, _ = pp.transform_many(test_recs)
    fit_X = fit_y = None
    if with_fit:
        fit_X, fit_y = pp.transform_many(train_recs)
    workdir = Path(workdir) if workdir else Path(os.environ.get("TMPDIR", "/tmp"))
    path = workdir / f"{dataset}-{classifier}-{seed}.dtm"
    job.write(path)
    try:
        return bench_model_timings(path, Xte, runs, fit_X=fit_X, fit_y=fit_y, dataset=dataset)
    finally:
        path.unlink(missing_ok=True)


# --------------------------------------------------------------------------
# end to end


@dataclass
class LatencyReport:
    dataset: str
    classifier: str
    mode: str  # loaded | unloaded
    runs_ms: list
    start_point: str = MEASUREMENT_START
    versions: list = field(default_factory=list)

    @property
    def runs(self):
        return len(self.runs_ms)

    @property
    def mean_ms(self):
        return mean_se(self.runs_ms)[0]

    @property
    def se_ms(self):
        return mean_se(self.runs_ms)[1]

    def row(self):
        return {
            "dataset": self.dataset,
            "classifier": self.classifier,
            "mode": self.mode,
            "runs": self.runs,
            "mean_ms": self.mean_ms,
            "se_ms": self.se_ms,
            "runs_ms": " ".join(f"{v:.4f}" for v in self.runs_ms),
            "start_point": self.start_point,
        }


def _device_values(schema, pp: Preprocessor, record):
    """What a device mirrors: numeric features as-is, categoricals as codes."""
    out = {}
    for col in schema.feature_columns:
        v = record.values[col.name]
        out[col.name] = float(pp.encode_category(col.name, v)) if col.type == CATEGORICAL else float(v)
    return out


def bench_end_to_end(dataset, classifier, mode="loaded", runs=5, *, seed=0, n=2000, rate=0.1,
                     timeout_s=10.0) -> LatencyReport:
    """Start a full local stack, inject ``runs`` state changes one at a time,
    and report the fog-measured time to each verdict."""
    if mode not in ("loaded", "unloaded"):
        raise ValueError("mode must be 'loaded' or 'unloaded'")
    schema = get_schema(dataset)
    model_kind = kind_for_schema(schema)
    records = generate_synthetic(dataset, n, rate, seed)
    job = train_on_records(records, desk_hyperparams(classifier, seed), split_seed=seed)
    pp = Preprocessor.from_dict(job.model.preprocessor)
    _, test_recs = split(records, SPLIT_RATIO, seed)

    kw = {"data_schema": dataset} if model_kind == DATA_ANOMALY else {"network_schema": dataset}
    try:
        # no mitigation policy: a positive verdict must not quarantine the bench twin mid-run
        stack = FogStack(remote=True, unloaded=(mode == "unloaded"), push_port=0, policy={}, **kw)
    except BindFailure as exc:
        raise StackUnavailable(f"cannot start the fog stack: {exc}") from None
    try:
        push_model(job, port=stack.push.port)
        if model_kind == DATA_ANOMALY:
            features = tuple(c.name for c in schema.feature_columns)
        else:
            features = ()
        twin_id = stack.registry.create_twin(TwinDefinition("bench:node", {"serialno": "0"}, features))
        got = threading.Event()
        seen = []

        def listener(verdict, status):
            seen.append(verdict)
            got.set()

        stack.service.add_listener(listener)
        out, versions = [], []
        with LineClient(port=stack.mirror.port) as client:
            # one unmeasured warm-up so connection setup and JIT are outside the runs
            for i in range(runs + 1):
                rec = test_recs[i % len(test_recs)]
                got.clear()
                if model_kind == DATA_ANOMALY:
                    msg = state_update(twin_id, _device_values(schema, pp, rec))
                else:
                    msg = flow_summary(twin_id, {c.name: float(rec.values[c.name]) for c in schema.feature_columns})
                reply = client.request(msg)
                if reply.kind != "ack":
                    raise StackUnavailable(f"fog refused the injected update: {reply.payload}")
                if not got.wait(timeout_s):
                    raise StackUnavailable("no verdict within the timeout")
                v = seen[-1]
                if i > 0:
                    out.append(v.latency_ms)
                    versions.append(v.model_version)
        return LatencyReport(dataset, classifier, mode, out, versions=versions)
    except (ConnectFailure, DTwinError) as exc:
        if isinstance(exc, StackUnavailable):
            raise
        raise StackUnavailable(f"stack failed during the benchmark: {exc}") from None
    finally:
        stack.close()


# --------------------------------------------------------------------------
# output


def _fmt(m, se, digits=4):
    if m is None:
        return "-"
    if se is None:
        return f"{m:.{digits}f} (SE n/a)"
    return f"{m:.{digits}f} ± {se:.{digits}f}"


def timings_table(reports) -> str:
    head = ("Dataset", "Classifier", "Size (bytes)", "Load (ms)", "Fit (s)", "Classify (ms)", "R")
    rows = []
    for r in reports:
        d = r.row()
        rows.append((
            d["dataset"],
            d["classifier"],
            str(d["size_bytes"]),
            _fmt(d["load_ms"], d["load_ms_se"]),
            _fmt(d["fit_s"], d["fit_s_se"]),
            _fmt(d["classify_ms"], d["classify_ms_se"]),
            str(d["runs"]),
        ))
    return _table(head, rows)


def latency_table(reports) -> str:
    head = ("Dataset", "Classifier", "Mode", "Mean (ms)", "R")
    rows = [(r.dataset, r.classifier, r.mode, _fmt(r.mean_ms, r.se_ms, 3), str(r.runs)) for r in reports]
    note = f"latency measured from {MEASUREMENT_START} to classification result receipt"
    return _table(head, rows) + "\n" + note


def _table(head, rows):
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    line = "  ".join(h.ljust(w) for h, w in zip(head, widths))
    sep = "  ".join("-" * w for w in widths)
    body = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join([line, sep, *body])


def to_csv(reports) -> str:
    rows = [r.row() for r in reports]
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()
