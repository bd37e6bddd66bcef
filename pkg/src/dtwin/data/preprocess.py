"""Min-max scaling, categorical coding, and stratified splitting."""
from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from ..errors import DegenerateSplit, SchemaMismatch, UnfittedPreprocessor
from .records import Record
from .schemas import CATEGORICAL, Schema, get_schema


class Preprocessor:
    """Maps raw record values to a dense vector in ``[0, 1]^d``.

    Numeric columns are min-max scaled with training statistics (a constant
    column maps to 0.0). Categorical values get codes ``1..k`` in sorted
    order of the training vocabulary, code 0 is reserved for values never
    seen in training, and codes are scaled by ``1/k``. A categorical value
    that is already numeric is taken as a pre-encoded code, which is how
    twins mirror categorical device features.
    """

    def __init__(self, schema: Schema | str):
        self.schema = get_schema(schema) if isinstance(schema, str) else schema
        self.numeric = {}
        self.vocab = {}
        self._codes = {}
        self.fitted = False

    @property
    def dimension(self):
        return len(self.schema.feature_columns)

    @property
    def feature_names(self):
        return self.schema.feature_names

    def fit(self, records):
        numeric = {}
        vocab = {}
        for col in self.schema.feature_columns:
            vals = [r.values[col.name] for r in records]
            if col.type == CATEGORICAL:
                vocab[col.name] = sorted({str(v) for v in vals})
            else:
                arr = np.asarray(vals, dtype=np.float64)
                if arr.size == 0:
                    numeric[col.name] = (0.0, 0.0)
                else:
                    numeric[col.name] = (float(arr.min()), float(arr.max()))
        self.numeric = numeric
        self.vocab = vocab
        self._codes = {k: {v: i + 1 for i, v in enumerate(vs)} for k, vs in vocab.items()}
        self.fitted = True
        return self

    def encode_category(self, column, value) -> int:
        """Integer code of a categorical value (0 when unseen)."""
        self._check()
        return self._codes[column].get(str(value), 0)

    def _scale(self, col, value):
        if col.type == CATEGORICAL:
            k = len(self.vocab[col.name])
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                code = float(value)
            else:
                code = float(self._codes[col.name].get(str(value), 0))
            x = code / k if k else 0.0
        else:
            lo, hi = self.numeric[col.name]
            v = float(value)
            x = 0.0 if hi <= lo else (v - lo) / (hi - lo)
        if math.isnan(x):
            raise ValueError(f"{col.name}: NaN feature value")
        return min(1.0, max(0.0, x))

    def transform_values(self, values: dict) -> np.ndarray:
        """Vectorise a ``{column: raw value}`` mapping (a record or a twin snapshot)."""
        self._check()
        out = np.empty(self.dimension)
        for i, col in enumerate(self.schema.feature_columns):
            try:
                raw = values[col.name]
            except KeyError:
                raise SchemaMismatch(f"missing feature {col.name!r} for schema {self.schema.name}") from None
            out[i] = self._scale(col, raw)
        return out

    def transform(self, record: Record) -> "FeatureVector":
        return FeatureVector(self.transform_values(record.values), record.label, record.record_id)

    def transform_many(self, records):
        """Stack records into ``(X, y)``; unlabelled records get label -1."""
        self._check()
        X = np.empty((len(records), self.dimension))
        y = np.empty(len(records), dtype=np.int64)
        for i, r in enumerate(records):
            X[i] = self.transform_values(r.values)
            y[i] = -1 if r.label is None else r.label
        return X, y

    def _check(self):
        if not self.fitted:
            raise UnfittedPreprocessor("preprocessor used before fit()")

    def to_dict(self):
        self._check()
        return {
            "schema": self.schema.name,
            "schema_key": self.schema.key(),
            "features": list(self.feature_names),
            "numeric": {k: list(v) for k, v in self.numeric.items()},
            "vocab": self.vocab,
        }

    @classmethod
    def from_dict(cls, d):
        pp = cls(d["schema"])
        if d.get("schema_key") != pp.schema.key():
            raise SchemaMismatch(f"stored preprocessor layout does not match schema {pp.schema.name}")
        pp.numeric = {k: (float(v[0]), float(v[1])) for k, v in d["numeric"].items()}
        pp.vocab = {k: list(v) for k, v in d["vocab"].items()}
        pp._codes = {k: {v: i + 1 for i, v in enumerate(vs)} for k, vs in pp.vocab.items()}
        pp.fitted = True
        return pp

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class FeatureVector:
    __slots__ = ("vector", "label", "record_id")

    def __init__(self, vector, label, record_id=""):
        self.vector = vector
        self.label = label
        self.record_id = record_id

    def __repr__(self):
        return f"FeatureVector({self.record_id!r}, label={self.label}, dim={len(self.vector)})"


def fit_preprocessor(records, schema: Schema | str | None = None) -> Preprocessor:
    if schema is None:
        if not records:
            raise UnfittedPreprocessor("cannot infer schema from an empty record set")
        schema = records[0].schema
    return Preprocessor(schema).fit(records)


def transform(pp: Preprocessor, record: Record) -> FeatureVector:
    return pp.transform(record)


def split(records, ratio: float, seed: int):
    """Stratified, seeded train/test partition preserving input order."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be strictly between 0 and 1")
    labels = np.asarray([r.label for r in records], dtype=np.int64)
    rng = np.random.default_rng(seed)
    train_idx = []
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        n_train = int(math.floor(ratio * idx.size + 0.5))
        if n_train == 0 or n_train == idx.size:
            raise DegenerateSplit(
                f"class {cls}: {idx.size} samples cannot be split {ratio:.2f}/{1 - ratio:.2f} "
                "with both sides non-empty"
            )
        train_idx.append(rng.permutation(idx)[:n_train])
    mask = np.zeros(len(records), dtype=bool)
    if train_idx:
        mask[np.concatenate(train_idx)] = True
    train = [r for r, m in zip(records, mask) if m]
    test = [r for r, m in zip(records, mask) if not m]
    return train, test
