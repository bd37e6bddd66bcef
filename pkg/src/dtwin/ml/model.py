"""Trained-model container, training entry point, prediction, and the
portable ``DTM1`` model file format.

File layout (all integers little-endian)::

    b"DTM1"                 magic
    u8                      format version (1)
    u32                     metadata length M
    M bytes                 metadata, UTF-8 JSON with sorted keys
    u64                     payload length P (bytes, multiple of 8)
    P bytes                 float64 parameter payload
    u32                     CRC32 of the payload

Metadata names every array with its shape and dtype, in payload order.
Integer arrays (tree topology) travel as float64 and are cast back on load;
every value involved is far below 2**53 so the round trip is exact.
Wall-clock fit time is deliberately not written, so retraining on the same
data with the same seed reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorruptModelFile, DimensionMismatch, EmptyTestSet, SchemaMismatch
from . import _kernels, mlp, svm, tree
from .metrics import Metrics

KINDS = ("random_forest", "linear_svm", "mlp")
MAGIC = b"DTM1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    kind: str = "random_forest"
    rf_estimators: int = 100
    rf_max_depth: int = 16
    rf_min_samples_split: int = 2
    mlp_layers: tuple = (11, 11, 11)
    mlp_epochs: int = 50
    mlp_learning_rate: float = 0.01
    mlp_batch_size: int = 32
    svm_lambda: float = 1e-3
    svm_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "mlp_layers", tuple(int(w) for w in self.mlp_layers))
        if self.rf_estimators < 1:
            raise ValueError("rf_estimators must be >= 1")
        if self.rf_max_depth < 0:
            raise ValueError("rf_max_depth must be >= 0")
        if any(w < 1 for w in self.mlp_layers):
            raise ValueError("every MLP layer width must be >= 1")
        if not self.mlp_learning_rate > 0:
            raise ValueError("mlp_learning_rate must be > 0")
        if self.mlp_batch_size < 1:
            raise ValueError("mlp_batch_size must be >= 1")
        if not self.svm_lambda > 0:
            raise ValueError("svm_lambda must be > 0")
        if self.mlp_epochs < 0 or self.svm_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self):
        d = asdict(self)
        d["mlp_layers"] = list(self.mlp_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


_INT_ARRAYS = {"feature", "left", "right", "value", "n_node_samples", "roots"}


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    input_dimension: int
    params: dict
    hyperparams: Hyperparams
    fingerprint: str = ""
    preprocessor: dict | None = None
    metadata: dict = field(default_factory=dict)
    class_count: int = 2

    def __post_init__(self):
        frozen = {}
        for name, arr in self.params.items():
            a = np.array(arr, dtype=np.int64 if name in _INT_ARRAYS else np.float64)
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "params", frozen)
        object.__setattr__(self, "metadata", dict(self.metadata))
        packed = mlp.pack(frozen) if self.kind == "mlp" else None
        object.__setattr__(self, "_packed", packed)

    @property
    def n_parameters(self):
        return int(sum(a.size for a in self.params.values()))

    def same_parameters(self, other):
        if self.kind != other.kind or set(self.params) != set(other.params):
            return False
        return all(np.array_equal(self.params[k], other.params[k]) for k in self.params)


def train(X, y, hp: Hyperparams, *, fingerprint="", preprocessor=None, metadata=None):
    """Fit a model of kind ``hp.kind``. Pure in (X, y, hp)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    t0 = time.perf_counter()
    meta = dict(metadata or {})
    if hp.kind == "random_forest":
        params = tree.train_forest(
            X,
            y,
            n_estimators=hp.rf_estimators,
            max_depth=hp.rf_max_depth,
            min_samples_split=hp.rf_min_samples_split,
            seed=hp.seed,
        )
    elif hp.kind == "linear_svm":
        params = svm.train_svm(X, y, lam=hp.svm_lambda, epochs=hp.svm_epochs, seed=hp.seed)
        meta["epochs"] = hp.svm_epochs
    else:
        params, loss = mlp.train_mlp(
            X,
            y,
            hidden=hp.mlp_layers,
            epochs=hp.mlp_epochs,
            learning_rate=hp.mlp_learning_rate,
            batch_size=hp.mlp_batch_size,
            seed=hp.seed,
        )
        meta["epochs"] = hp.mlp_epochs
        meta["final_batch_loss"] = loss
    meta["seed"] = int(hp.seed)
    meta["n_train"] = int(X.shape[0])
    model = TrainedModel(
        kind=hp.kind,
        input_dimension=int(X.shape[1]),
        params=params,
        hyperparams=hp,
        fingerprint=fingerprint,
        preprocessor=preprocessor,
        metadata=meta,
    )
    # kept in memory only; see module docstring
    model.metadata["fit_time_s"] = time.perf_counter() - t0
    return model


def scores_and_labels(model: TrainedModel, X):
    """Batch prediction: returns ``(labels, scores)`` arrays.

    Label rules at the boundary differ by kind: the forest breaks a tied
    vote toward class 0, the SVM requires a strictly positive margin (so the
    all-zero initial model predicts 0), and the MLP uses ``score >= 0.5``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dimension:
        raise DimensionMismatch(
            f"model expects {model.input_dimension} features, got {X.shape[-1] if X.ndim else 0}"
        )
    p = model.params
    if model.kind == "random_forest":
        votes = tree.forest_votes(p, X)
        n_trees = p["roots"].shape[0]
        scores = votes / n_trees
        labels = (2 * votes > n_trees).astype(np.int64)
    elif model.kind == "linear_svm":
        margin = svm.svm_margin(p, X)
        scores = mlp.sigmoid(margin)
        labels = (margin > 0).astype(np.int64)
    else:
        flat, widths = model._packed
        scores = _kernels.mlp_scores(np.ascontiguousarray(X), flat, widths)
        labels = (scores >= 0.5).astype(np.int64)
    return labels, scores


def predict(model: TrainedModel, x):
    """Classify one feature vector; returns ``(label, score)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single 1-D feature vector")
    labels, scores = scores_and_labels(model, x)
    return int(labels[0]), float(scores[0])


def evaluate(model: TrainedModel, X, y) -> Metrics:
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise EmptyTestSet("test set is empty")
    labels, _ = scores_and_labels(model, X)
    return Metrics.from_predictions(labels, y)


# --------------------------------------------------------------------------
# model files


def _json_safe(obj):
    return json.loads(json.dumps(obj, allow_nan=False))


def model_to_bytes(model: TrainedModel) -> bytes:
    names = sorted(model.params)
    arrays = [model.params[n] for n in names]
    meta = {
        "kind": model.kind,
        "input_dimension": model.input_dimension,
        "class_count": model.class_count,
        "fingerprint": model.fingerprint,
        "hyperparams": model.hyperparams.to_dict(),
        "preprocessor": model.preprocessor,
        "metadata": {k: v for k, v in model.metadata.items() if k != "fit_time_s"},
        "arrays": [
            {"name": n, "shape": list(a.shape), "dtype": "int64" if n in _INT_ARRAYS else "float64"}
            for n, a in zip(names, arrays)
        ],
    }
    meta_bytes = json.dumps(_json_safe(meta), sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return b"".join(
        [
            MAGIC,
            struct.pack("<B", FORMAT_VERSION),
            struct.pack("<I", len(meta_bytes)),
            meta_bytes,
            struct.pack("<Q", len(payload)),
            payload,
            struct.pack("<I", zlib.crc32(payload)),
        ]
    )


def model_from_bytes(data: bytes, expect_fingerprint: str | None = None) -> TrainedModel:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptModelFile("model file is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return bytes(chunk)

    if take(4) != MAGIC:
        raise CorruptModelFile("bad magic; not a DTM1 model file")
    (version,) = struct.unpack("<B", take(1))
    if version != FORMAT_VERSION:
        raise CorruptModelFile(f"unsupported model format version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelFile(f"unreadable metadata: {exc}") from None
    (payload_len,) = struct.unpack("<Q", take(8))
    payload = take(payload_len)
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(view):
        raise CorruptModelFile("trailing bytes after checksum")
    if zlib.crc32(payload) != crc:
        raise CorruptModelFile("payload checksum mismatch")
    if payload_len % 8:
        raise CorruptModelFile("payload is not a whole number of float64 values")

    try:
        flat = np.frombuffer(payload, dtype="<f8")
        params = {}
        off = 0
        for spec in meta["arrays"]:
            shape = tuple(int(s) for s in spec["shape"])
            size = int(np.prod(shape)) if shape else 1
            chunk = flat[off : off + size]
            if chunk.size != size:
                raise CorruptModelFile("payload shorter than declared arrays")
            off += size
            params[spec["name"]] = chunk.reshape(shape).astype(spec["dtype"])
        if off != flat.size:
            raise CorruptModelFile("payload longer than declared arrays")
        hp = Hyperparams.from_dict(meta["hyperparams"])
        model = TrainedModel(
            kind=meta["kind"],
            input_dimension=int(meta["input_dimension"]),
            params=params,
            hyperparams=hp,
            fingerprint=meta.get("fingerprint", ""),
            preprocessor=meta.get("preprocessor"),
            metadata=meta.get("metadata", {}),
            class_count=int(meta.get("class_count", 2)),
        )
    except CorruptModelFile:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelFile(f"inconsistent metadata: {exc}") from None

    if expect_fingerprint is not None and model.fingerprint != expect_fingerprint:
        raise SchemaMismatch(
            f"model fingerprint {model.fingerprint!r} does not match serving schema {expect_fingerprint!r}"
        )
    return model


def save_model(model: TrainedModel, path) -> int:
    """Write ``model`` to ``path``; returns the on-disk size in bytes."""
    data = model_to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path, expect_fingerprint: str | None = None) -> TrainedModel:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CorruptModelFile(f"no model file at {path}") from None
    return model_from_bytes(data, expect_fingerprint)
