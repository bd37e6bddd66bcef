"""Labelled records: CSV ingest/export and the one-record-per-line log codec."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import AllRowsMalformed, HeaderMismatch, MalformedMessage, MissingFile
from .schemas import CATEGORICAL, LABEL, NUMERIC, TIMESTAMP, Schema, get_schema, normalize_name

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Record:
    """One dataset row. ``label`` is None for behaviour not yet labelled."""

    schema: str
    values: dict
    label: int | None
    sublabel: str | None = None
    record_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1, None):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")
        if self.sublabel and self.label != 1:
            raise ValueError("a sublabel implies label 1")


@dataclass
class IngestResult:
    records: list
    skipped: int = 0
    skipped_lines: list = field(default_factory=list)
    ignored_columns: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def parse_numeric(schema: Schema, raw: str) -> float:
    text = raw.strip()
    try:
        v = float(text)
    except ValueError:
        token = text.lower()
        if token in schema.numeric_tokens:
            return schema.numeric_tokens[token]
        raise
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {raw!r}")
    return v


def _resolve_header(schema: Schema, header):
    aliases = schema.alias_map()
    positions = {}
    ignored = []
    for pos, name in enumerate(header):
        canon = aliases.get(normalize_name(name))
        if canon is None:
            ignored.append(name)
            continue
        if canon in positions:
            raise HeaderMismatch(f"column {canon!r} appears twice in header")
        positions[canon] = pos
    missing = [c.name for c in schema.columns if c.required and c.name not in positions]
    if missing:
        raise HeaderMismatch(f"{schema.name}: header lacks columns {missing}")
    present = [c.name for c in schema.columns if c.name in positions]
    if [positions[n] for n in present] != sorted(positions[n] for n in present):
        raise HeaderMismatch(f"{schema.name}: columns out of order; expected order {present}")
    return positions, ignored


def _row_to_record(schema: Schema, positions, row, record_id):
    values = {}
    for col in schema.columns:
        if col.name not in positions or col.type == LABEL:
            continue
        raw = row[positions[col.name]]
        if col.type == NUMERIC:
            values[col.name] = parse_numeric(schema, raw)
        else:
            values[col.name] = raw.strip()
    raw_label = row[positions[schema.label_column]].strip()
    if not raw_label:
        raise ValueError("empty label")
    label = 1 if schema.is_positive(raw_label) else 0
    sublabel = None
    if label == 1:
        if schema.sublabel_column and schema.sublabel_column in positions:
            sublabel = row[positions[schema.sublabel_column]].strip() or None
        elif schema.name == "ds2os":
            sublabel = raw_label
    return Record(schema.name, values, label, sublabel, record_id)


def ingest_csv(schema: Schema | str, path) -> IngestResult:
    """Read a dataset CSV row by row; malformed rows are skipped and counted."""
    if isinstance(schema, str):
        schema = get_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    result = IngestResult(records=[])
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{path} is empty") from None
        positions, ignored = _resolve_header(schema, header)
        result.ignored_columns = ignored
        if ignored:
            log.warning("%s: ignoring %d unrecognised columns: %s", path.name, len(ignored), ignored[:8])
        width = len(header)
        rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            rows += 1
            try:
                if len(row) != width:
                    raise ValueError(f"expected {width} fields, got {len(row)}")
                result.records.append(_row_to_record(schema, positions, row, f"{path.name}:{lineno}"))
            except ValueError as exc:
                result.skipped += 1
                if len(result.skipped_lines) < 100:
                    result.skipped_lines.append((lineno, str(exc)))
    if rows and not result.records:
        raise AllRowsMalformed(f"{path}: all {rows} data rows are malformed")
    if result.skipped:
        log.warning("%s: skipped %d malformed rows", path.name, result.skipped)
    return result


def _format_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def label_text(schema: Schema, record: Record) -> str:
    if schema.name == "ds2os":
        return record.sublabel or ("anomalous" if record.label else "normal")
    if schema.name == "iotid20":
        return "Anomaly" if record.label else "Normal"
    return str(record.label)


def write_csv(schema: Schema | str, records, path) -> int:
    """Export records with RFC 4180 quoting. Returns the row count."""
    if isinstance(schema, str):
        schema = get_schema(schema)
    cols = [c.name for c in schema.columns]
    header = list(cols)
    if schema.sublabel_column:
        header.append(schema.sublabel_column)
    n = 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in records:
            row = []
            for c in schema.columns:
                if c.type == LABEL:
                    row.append(label_text(schema, r))
                else:
                    row.append(_format_value(r.values.get(c.name, "")))
            if schema.sublabel_column:
                row.append(r.sublabel or "Normal")
            w.writerow(row)
            n += 1
    return n


# --------------------------------------------------------------------------
# ground-truth log lines


def encode_record_line(record: Record) -> str:
    obj = {
        "schema": record.schema,
        "id": record.record_id,
        "values": record.values,
        "label": record.label,
        "sublabel": record.sublabel,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def decode_record_line(line: str | bytes) -> Record:
    try:
        obj = json.loads(line)
        schema = get_schema(obj["schema"])
        values = dict(obj["values"])
        for c in schema.columns:
            if c.name in values and c.type == NUMERIC and not isinstance(values[c.name], (int, float)):
                raise ValueError(f"{c.name} must be numeric")
        return Record(
            schema=schema.name,
            values=values,
            label=obj.get("label"),
            sublabel=obj.get("sublabel"),
            record_id=str(obj.get("id", "")),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedMessage(f"bad record line: {exc}") from None


__all__ = [
    "CATEGORICAL",
    "NUMERIC",
    "TIMESTAMP",
    "IngestResult",
    "Record",
    "decode_record_line",
    "encode_record_line",
    "ingest_csv",
    "write_csv",
]
