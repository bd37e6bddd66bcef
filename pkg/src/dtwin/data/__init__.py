from .preprocess import FeatureVector, Preprocessor, fit_preprocessor, split, transform
from .records import IngestResult, Record, decode_record_line, encode_record_line, ingest_csv, write_csv
from .schemas import ANOML_IOT, DS2OS, IOTID20, SCHEMAS, Column, Schema, get_schema
from .synthetic import SCENARIOS, generate_synthetic

__all__ = [
    "ANOML_IOT",
    "DS2OS",
    "IOTID20",
    "SCENARIOS",
    "SCHEMAS",
    "Column",
    "FeatureVector",
    "IngestResult",
    "Preprocessor",
    "Record",
    "Schema",
    "decode_record_line",
    "encode_record_line",
    "fit_preprocessor",
    "generate_synthetic",
    "get_schema",
    "ingest_csv",
    "split",
    "transform",
    "write_csv",
]
