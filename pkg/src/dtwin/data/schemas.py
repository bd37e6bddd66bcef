"""Column layouts of the three supported datasets.

Header matching is by normalised name (lower case, alphanumerics only) with
a per-dataset alias table, so ``Flow_Duration``, ``Flow Duration`` and
``flow-duration`` all resolve to the same canonical column.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

NUMERIC = "numeric"
CATEGORICAL = "categorical"
TIMESTAMP = "timestamp"
LABEL = "label"
COLUMN_TYPES = (NUMERIC, CATEGORICAL, TIMESTAMP, LABEL)


def normalize_name(name: str) -> str:
    return re.sub(r"[^0-9a-z]", "", name.strip().lower())


@dataclass(frozen=True)
class Column:
    name: str
    type: str
    aliases: tuple = ()
    # identifier-like columns are carried on the record but not vectorised
    vectorized: bool = True
    required: bool = True


@dataclass(frozen=True)
class Schema:
    name: str
    columns: tuple
    positive_labels: frozenset
    sublabel_column: str | None = None
    # lenient numeric columns map these tokens instead of rejecting the row
    numeric_tokens: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = [c for c in self.columns if c.type == LABEL]
        if len(labels) != 1:
            raise ValueError(f"schema {self.name} must have exactly one label column")
        if len(self.columns) < 2:
            raise ValueError(f"schema {self.name} needs at least one non-label column")
        for c in self.columns:
            if c.type not in COLUMN_TYPES:
                raise ValueError(f"column {c.name} has unknown type {c.type}")

    @property
    def label_column(self) -> str:
        return next(c.name for c in self.columns if c.type == LABEL)

    @property
    def timestamp_column(self) -> str | None:
        return next((c.name for c in self.columns if c.type == TIMESTAMP), None)

    @property
    def feature_columns(self) -> tuple:
        """Columns that make up the feature vector, in vector order."""
        return tuple(c for c in self.columns if c.vectorized and c.type in (NUMERIC, CATEGORICAL))

    @property
    def feature_names(self) -> tuple:
        return tuple(c.name for c in self.feature_columns)

    def column(self, name) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def alias_map(self) -> dict:
        out = {}
        for c in self.columns:
            for alias in (c.name, *c.aliases):
                out[normalize_name(alias)] = c.name
        if self.sublabel_column:
            out.setdefault(normalize_name(self.sublabel_column), self.sublabel_column)
        return out

    def is_positive(self, raw_label: str) -> bool:
        return raw_label.strip().lower() in self.positive_labels

    def key(self) -> str:
        """Stable identifier of the vector layout (schema name + feature columns)."""
        blob = json.dumps([self.name, [[c.name, c.type] for c in self.feature_columns]])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


ANOML_IOT = Schema(
    name="anoml_iot",
    columns=(
        Column("timestamp", TIMESTAMP, ("time", "datetime", "date"), vectorized=False, required=False),
        Column("temperature", NUMERIC, ("temp", "temperature_c", "temperaturec")),
        Column("humidity", NUMERIC, ("hum", "humidity_pct", "relative_humidity")),
        Column("light", NUMERIC, ("light_level", "lux", "luminosity")),
        Column("loudness", NUMERIC, ("sound", "noise", "loudness_db")),
        Column("label", LABEL, ("class", "anomaly", "is_anomaly", "target")),
    ),
    positive_labels=frozenset({"1", "1.0", "true", "anomaly", "anomalous", "abnormal"}),
)

DS2OS_ATTACKS = (
    "dosattack",
    "scan",
    "malitiouscontrol",
    "malitiousoperation",
    "spying",
    "dataprobing",
    "wrongsetup",
)

DS2OS = Schema(
    name="ds2os",
    columns=(
        Column("sourceID", CATEGORICAL, vectorized=False),
        Column("sourceAddress", CATEGORICAL, vectorized=False),
        Column("sourceType", CATEGORICAL),
        Column("sourceLocation", CATEGORICAL, vectorized=False),
        Column("destinationServiceAddress", CATEGORICAL, vectorized=False),
        Column("destinationServiceType", CATEGORICAL),
        Column("destinationLocation", CATEGORICAL, vectorized=False),
        Column("accessedNodeAddress", CATEGORICAL, vectorized=False),
        Column("accessedNodeType", CATEGORICAL, vectorized=False),
        Column("operation", CATEGORICAL),
        Column("value", NUMERIC),
        Column("timestamp", TIMESTAMP, vectorized=False),
        Column("normality", LABEL, ("label",)),
    ),
    positive_labels=frozenset(
        DS2OS_ATTACKS
        + ("dos", "maliciouscontrol", "maliciousoperation", "anomalous", "anomaly", "1")
    ),
    numeric_tokens={"true": 1.0, "false": 0.0, "none": 0.0, "": 0.0, "null": 0.0},
)

IOTID20_FEATURES = (
    ("Flow_Duration", ("flow duration",)),
    ("Tot_Fwd_Pkts", ("total fwd packets", "tot fwd pkts")),
    ("Tot_Bwd_Pkts", ("total backward packets", "tot bwd pkts")),
    ("TotLen_Fwd_Pkts", ("total length of fwd packets",)),
    ("TotLen_Bwd_Pkts", ("total length of bwd packets",)),
    ("Fwd_Pkt_Len_Max", ("fwd packet length max",)),
    ("Fwd_Pkt_Len_Min", ("fwd packet length min",)),
    ("Fwd_Pkt_Len_Mean", ("fwd packet length mean",)),
    ("Bwd_Pkt_Len_Max", ("bwd packet length max",)),
    ("Bwd_Pkt_Len_Min", ("bwd packet length min",)),
    ("Bwd_Pkt_Len_Mean", ("bwd packet length mean",)),
    ("Flow_Byts/s", ("flow bytes/s",)),
    ("Flow_Pkts/s", ("flow packets/s",)),
    ("Flow_IAT_Mean", ()),
    ("Flow_IAT_Std", ()),
    ("Flow_IAT_Max", ()),
    ("Flow_IAT_Min", ()),
    ("SYN_Flag_Cnt", ("syn flag count",)),
    ("RST_Flag_Cnt", ("rst flag count",)),
    ("ACK_Flag_Cnt", ("ack flag count",)),
)

IOTID20 = Schema(
    name="iotid20",
    columns=(
        Column("Timestamp", TIMESTAMP, vectorized=False, required=False),
        *(Column(name, NUMERIC, aliases) for name, aliases in IOTID20_FEATURES),
        Column("Label", LABEL, ("class",)),
    ),
    positive_labels=frozenset({"anomaly", "anomalous", "malicious", "attack", "1"}),
    sublabel_column="Cat",
)

SCHEMAS = {s.name: s for s in (ANOML_IOT, DS2OS, IOTID20)}


def get_schema(name: str) -> Schema:
    try:
        return SCHEMAS[name]
    except KeyError:
        raise ValueError(f"unknown schema {name!r}; expected one of {sorted(SCHEMAS)}") from None
