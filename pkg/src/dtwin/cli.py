"""``dtwin`` command line.

Exit codes: 0 success, 1 user error (bad flags, bad input files), 2 runtime
failure (network, storage, a service that could not start).

Settings resolve as flags > ``DTW_*`` environment variables > JSON config
file (``--config-file`` or ``DTW_CONFIG``) > built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import threading
import time
from pathlib import Path

from . import __version__
from .errors import DTwinError, MalformedConfig, UnknownTwin, UserError

log = logging.getLogger("dtwin")

DEFAULTS = {
    "mirror_host": "127.0.0.1",
    "mirror_port": 7700,
    "data_port": 7701,
    "network_port": 7702,
    "push_host": "127.0.0.1",
    "push_port": 7703,
    "twin_store": "twins.json",
    "seed": 0,
}


class CLIError(UserError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems are user errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class Settings:
    def __init__(self, args):
        self.args = args
        path = getattr(args, "config_file", None) or os.environ.get("DTW_CONFIG")
        self.file = {}
        if path:
            try:
                self.file = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise CLIError(f"config file {path} not found") from None
            except json.JSONDecodeError as exc:
                raise MalformedConfig(f"config file {path}: {exc}") from None
            if not isinstance(self.file, dict):
                raise MalformedConfig(f"config file {path} must hold a JSON object")

    def get(self, key, cast=str):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        env = os.environ.get("DTW_" + key.upper())
        if env is not None:
            try:
                return cast(env)
            except ValueError:
                raise CLIError(f"DTW_{key.upper()}={env!r} is not a valid {cast.__name__}") from None
        if key in self.file:
            return cast(self.file[key])
        return DEFAULTS.get(key)


def _emit(text, out=None):
    (out or sys.stdout).write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------------------
# twin store file


class TwinStoreFile:
    """JSON file of twin configurations and their last known state.

    ``serve --twins`` loads it and keeps quarantine status in sync, so
    ``twin release`` against the same file reaches a running fog.
    """

    def __init__(self, path):
        self.path = Path(path)

    def load(self):
        if not self.path.exists():
            return {"twins": {}}
        try:
            doc = json.loads(self.path.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedConfig(f"twin store {self.path}: {exc}") from None
        doc.setdefault("twins", {})
        return doc

    def save(self, doc):
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
        os.replace(tmp, self.path)

    def entry(self, doc, twin_id):
        try:
            return doc["twins"][twin_id]
        except KeyError:
            raise UnknownTwin(f"no twin {twin_id!r} in {self.path}") from None


def _registry_from_store(store: TwinStoreFile):
    from .twin import TwinRegistry, parse_twin_config

    reg = TwinRegistry()
    doc = store.load()
    for twin_id, entry in sorted(doc["twins"].items()):
        defn = parse_twin_config(json.dumps(entry["config"]))
        created = reg.create_twin(defn)
        if created != twin_id:
            raise MalformedConfig(f"twin store entry {twin_id!r} does not match its configuration ({created!r})")
        values = entry.get("values") or {}
        if values:
            reg.update_features(twin_id, values)
        if entry.get("quarantine"):
            reg.quarantine(twin_id, entry["quarantine"])
    return reg, doc


def cmd_twin(args, cfg):
    from .sim import sensor_twin_definition
    from .twin import TwinRegistry, parse_twin_config, serialize_twin_config

    store = TwinStoreFile(cfg.get("twin_store"))
    doc = store.load()
    if args.twin_cmd == "create":
        if args.config:
            try:
                text = Path(args.config).read_bytes()
            except FileNotFoundError:
                raise CLIError(f"config {args.config} not found") from None
            defn = parse_twin_config(text)
        elif args.sensor_node:
            defn = sensor_twin_definition(args.sensor_node)
        else:
            raise CLIError("twin create needs --config FILE or --sensor-node SERIAL")
        reg = TwinRegistry()
        for tid in doc["twins"]:
            # reserve existing ids so numbering and duplicate checks carry over
            reg._twins[tid] = None
        twin_id = reg.create_twin(defn)
        doc["twins"][twin_id] = {
            "config": json.loads(serialize_twin_config(defn)),
            "values": dict(defn.initial_values),
            "revision": 0,
            "quarantine": None,
            "releases": 0,
        }
        store.save(doc)
        _emit(twin_id)
    elif args.twin_cmd == "get":
        entry = store.entry(doc, args.twin_id)
        out = {
            "twin_id": args.twin_id,
            "definition": entry["config"]["definition"],
            "attributes": entry["config"].get("attributes", {}),
            "features": entry["values"],
            "revision": entry.get("revision", 0),
            "quarantine": entry.get("quarantine"),
        }
        _emit(json.dumps(out, indent=1, sort_keys=True))
    elif args.twin_cmd == "update":
        from .errors import QuarantinedTwin, UnknownFeature

        entry = store.entry(doc, args.twin_id)
        if entry.get("quarantine"):
            raise QuarantinedTwin(f"twin {args.twin_id!r} is in {entry['quarantine']} mode")
        updates = {}
        for item in args.assign:
            name, sep, raw = item.partition("=")
            if not sep:
                raise CLIError(f"expected feature=value, got {item!r}")
            if name not in entry["values"]:
                raise UnknownFeature(f"twin {args.twin_id!r} has no feature {name!r}")
            try:
                updates[name] = float(raw)
                if not math.isfinite(updates[name]):
                    raise ValueError
            except ValueError:
                raise CLIError(f"value for {name} is not a finite number: {raw!r}") from None
        entry["values"].update(updates)
        entry["revision"] = entry.get("revision", 0) + len(updates)
        store.save(doc)
        _emit(str(entry["revision"]))
    elif args.twin_cmd == "release":
        entry = store.entry(doc, args.twin_id)
        was = entry.get("quarantine")
        entry["quarantine"] = None
        if was:
            entry["releases"] = entry.get("releases", 0) + 1
        store.save(doc)
        _emit("released" if was else "not quarantined")
    return 0


# --------------------------------------------------------------------------
# data and training


def _hyperparams(args):
    from .bench import CLASSIFIERS
    from .ml.model import Hyperparams

    kw = {"kind": CLASSIFIERS[args.model], "seed": args.seed}
    if args.rf_trees is not None:
        kw["rf_estimators"] = args.rf_trees
    if args.rf_depth is not None:
        kw["rf_max_depth"] = args.rf_depth
    if args.epochs is not None:
        kw["mlp_epochs" if args.model == "mlp" else "svm_epochs"] = args.epochs
    try:
        return Hyperparams(**kw)
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def cmd_datagen(args, cfg):
    from .data.records import encode_record_line, write_csv
    from .data.synthetic import generate_synthetic

    seed = cfg.get("seed", int)
    recs = generate_synthetic(args.scenario, args.n, args.rate, seed)
    if args.format == "log":
        with open(args.out, "w") as fh:
            fh.writelines(encode_record_line(r) for r in recs)
    else:
        write_csv(args.scenario, recs, args.out)
    n_pos = sum(r.label for r in recs)
    _emit(f"wrote {len(recs)} records ({n_pos} anomalous) to {args.out}")
    return 0


def _metrics_report(job, fmt):
    m = job.metrics
    row = {
        "schema": job.schema,
        "model": job.kind,
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "n_train": job.n_train,
        "n_test": job.n_test,
        "fit_s": job.fit_time_s,
        "size_bytes": len(job.model_bytes),
    }
    if fmt == "csv":
        return ",".join(row) + "\n" + ",".join(str(v) for v in row.values())
    width = max(map(len, row))
    return "\n".join(f"{k.ljust(width)}  {v:.4f}" if isinstance(v, float) else f"{k.ljust(width)}  {v}"
                     for k, v in row.items())


def _read_records(schema, path):
    from .data.records import decode_record_line, ingest_csv

    p = Path(path)
    if p.suffix in (".log", ".jsonl"):
        from .errors import MissingFile

        if not p.exists():
            raise MissingFile(f"{p} does not exist")
        return [decode_record_line(line) for line in p.read_text().splitlines() if line.strip()]
    return list(ingest_csv(schema, p))


def cmd_train(args, cfg):
    from .cloud import train_on_records

    seed = cfg.get("seed", int)
    args.seed = seed
    records = _read_records(args.schema, args.inp)
    job = train_on_records(records, _hyperparams(args), split_seed=seed, ratio=args.split, schema=args.schema)
    job.write(args.out)
    _emit(_metrics_report(job, args.format))
    return 0


def cmd_label(args, cfg):
    from .cloud import GroundTruthStore, label_records
    from .data.records import decode_record_line

    src = Path(args.inp)
    if not src.exists():
        raise CLIError(f"{src} does not exist")
    records = [decode_record_line(line) for line in src.read_text().splitlines() if line.strip()]
    labels = {}
    if args.labels:
        with open(args.labels, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0] in ("record_id", "id"):
                    continue
                try:
                    lab = int(row[1])
                except (IndexError, ValueError):
                    raise CLIError(f"bad label row {row!r}; expected record_id,label[,sublabel]") from None
                labels[row[0]] = (lab, row[2]) if len(row) > 2 and row[2] and lab == 1 else lab
    try:
        labelled = label_records(records, labels, args.default)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    if not labelled:
        _emit("nothing to label")
        return 0
    store = GroundTruthStore(args.out, labelled[0].schema)
    kept = [r for r in labelled if r.label is not None]
    if kept:
        store.append_many(kept)
    _emit(f"labelled {len(kept)} of {len(labelled)} records; store now holds {store.count}")
    return 0


# --------------------------------------------------------------------------
# services


def _sync_twins(store: TwinStoreFile, registry, service, stop, interval=1.0):
    seen = {}
    while not stop.wait(interval):
        try:
            doc = store.load()
        except (DTwinError, OSError):
            continue
        changed = False
        for tid, entry in doc["twins"].items():
            n = entry.get("releases", 0)
            if tid not in seen:
                seen[tid] = n
            elif n > seen[tid]:
                seen[tid] = n
                service.release(tid)
            try:
                snap = registry.get_twin(tid)
            except UnknownTwin:
                continue
            if entry.get("quarantine") != snap.quarantine:
                entry["quarantine"] = snap.quarantine
                changed = True
        if changed:
            store.save(doc)


def cmd_serve(args, cfg):
    from .cloud import GroundTruthStore, kind_for_schema
    from .detection import DATA_ANOMALY, NETWORK_INTRUSION, BufferedForwarder, FogStack
    from .ml.model import load_model
    from .twin import TwinRegistry

    store = None
    registry = TwinRegistry()
    if args.twins:
        store = TwinStoreFile(args.twins)
        registry, _ = _registry_from_store(store)
    forwarders = {}
    if args.store_dir:
        d = Path(args.store_dir)
        forwarders[DATA_ANOMALY] = BufferedForwarder(GroundTruthStore(d / f"{args.data_schema}.log", args.data_schema))
        forwarders[NETWORK_INTRUSION] = BufferedForwarder(
            GroundTruthStore(d / f"{args.network_schema}.log", args.network_schema)
        )
    stack = FogStack(
        host=cfg.get("mirror_host"),
        mirror_port=cfg.get("mirror_port", int),
        data_port=cfg.get("data_port", int),
        network_port=cfg.get("network_port", int),
        push_port=cfg.get("push_port", int),
        remote=not args.in_process,
        unloaded=args.mode == "unloaded",
        registry=registry,
        data_schema=args.data_schema,
        network_schema=args.network_schema,
        forwarders=forwarders,
        policy={"compromised": args.action},
        freshness_s=args.freshness,
    )
    stop = threading.Event()
    sync = None
    try:
        for path in args.model or []:
            model = load_model(path)
            schema = (model.preprocessor or {}).get("schema")
            if schema is None:
                raise CLIError(f"{path} carries no preprocessor; cannot tell which endpoint serves it")
            kind = kind_for_schema(schema)
            stack.service.swap_model(kind, model)
            log.info("serving %s from %s", kind, path)
        if store is not None:
            sync = threading.Thread(target=_sync_twins, args=(store, registry, stack.service, stop), daemon=True)
            sync.start()
        _emit(f"fog listening: mirror {stack.mirror.port}, push {stack.push.port}"
              + "".join(f", {k} {ep.port}" for k, ep in stack.endpoints.items()))
        sys.stdout.flush()
        deadline = None if args.duration is None else time.monotonic() + args.duration
        try:
            while deadline is None or time.monotonic() < deadline:
                time.sleep(0.2 if deadline is None else min(0.2, max(0.0, deadline - time.monotonic())))
        except KeyboardInterrupt:
            pass
    finally:
        stop.set()
        if sync is not None:
            sync.join(timeout=5)
        stack.close()
    svc = stack.service
    _emit(f"verdicts {len(svc.verdicts)}, actions {len(svc.actions)}, undelivered {len(svc.delivery_errors)}")
    return 0


def cmd_cloud(args, cfg):
    from .cloud import GroundTruthStore, PeriodicTrainer

    args.seed = cfg.get("seed", int)
    stores = {}
    for spec in args.store:
        schema, sep, path = spec.partition("=")
        if not sep:
            raise CLIError(f"--store expects SCHEMA=PATH, got {spec!r}")
        stores[schema] = GroundTruthStore(path, schema)
    hps = {k: _hyperparams(args) for k in stores}
    trainer = PeriodicTrainer(
        stores,
        hps,
        host=cfg.get("push_host"),
        port=cfg.get("push_port", int),
        interval_s=args.interval,
        split_seed=args.seed,
        min_per_class=args.min_per_class,
        output_dir=args.out_dir,
    )
    try:
        trainer.run(args.iterations)
    except KeyboardInterrupt:
        pass
    for name, bound, payload in trainer.pushes:
        _emit(f"pushed {name} model ({bound} records) -> fog version {payload.get('version')}")
    for name, bound, err, msg in trainer.failures:
        _emit(f"skipped {name} at {bound} records: {err}: {msg}", sys.stderr)
    return 0 if trainer.pushes or not trainer.failures else 2


def cmd_simulate(args, cfg):
    from .sim import NodeProfile, run_scenario, sensor_twin_definition

    seed = cfg.get("seed", int)
    profiles = []
    for i, spec in enumerate(args.node or ["benign"]):
        parts = spec.split(":")
        try:
            behavior = parts[0]
            onset = float(parts[1]) if len(parts) > 1 else 0.0
            dur = float(parts[2]) if len(parts) > 2 else None
            profiles.append(NodeProfile(
                sensor_twin_definition(f"{args.serial_prefix}{i}"),
                period_s=args.period,
                behavior=behavior,
                onset_s=onset,
                duration_s=dur,
                seed=seed + i,
            ))
        except ValueError as exc:
            raise CLIError(f"--node {spec!r}: {exc}") from None
    nodes, gw = run_scenario(
        profiles,
        cfg.get("mirror_host"),
        cfg.get("mirror_port", int),
        duration_s=args.duration,
        time_scale=args.time_scale,
        gateway=not args.no_gateway,
        seed=seed,
    )
    rows = []
    for p, s in zip(profiles, nodes):
        flows = gw.sent.get(p.twin_id, 0) if gw else 0
        rows.append((p.twin_id, p.behavior, s.sent, s.applied, s.refused, flows, s.mode))
    head = ("twin_id", "behavior", "sent", "applied", "refused", "flows", "mode")
    if args.format == "csv":
        _emit("\n".join(",".join(map(str, r)) for r in [head, *rows]))
    else:
        from .bench import _table

        _emit(_table(head, [tuple(map(str, r)) for r in rows]))
    return 0


def cmd_bench(args, cfg):
    from . import bench

    seed = cfg.get("seed", int)
    datasets = args.dataset or ["anoml_iot"]
    classifiers = args.classifier or ["rf", "svm", "mlp"]
    reports = []
    if args.bench_cmd == "timings":
        for ds in datasets:
            for c in classifiers:
                reports.append(bench.timings_for_dataset(ds, c, n=args.n, seed=seed, runs=args.runs,
                                                         with_fit=not args.no_fit))
        text = bench.to_csv(reports) if args.format == "csv" else bench.timings_table(reports)
    else:
        modes = ["loaded", "unloaded"] if args.mode == "both" else [args.mode]
        for ds in datasets:
            for c in classifiers:
                for m in modes:
                    reports.append(bench.bench_end_to_end(ds, c, m, args.runs, seed=seed, n=args.n))
        text = bench.to_csv(reports) if args.format == "csv" else bench.latency_table(reports)
    if args.out:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n")
    _emit(text)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    from .bench import CLASSIFIERS
    from .data.synthetic import SCENARIOS

    p = _Parser(prog="dtwin", description="Fog-layer digital twins with compromised-node detection.")
    p.add_argument("--version", action="version", version=f"dtwin {__version__}")
    p.add_argument("--config-file", help="JSON file of default settings (also DTW_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, help="seed for every stochastic step (env DTW_SEED, default 0)")

    def format_flag(sp, choices=("table", "csv")):
        sp.add_argument("--format", choices=choices, default=choices[0], help="output format")

    def model_flags(sp):
        sp.add_argument("--model", choices=sorted(CLASSIFIERS), default="rf", help="classifier (default rf)")
        sp.add_argument("--rf-trees", type=int, help="forest size (default 100)")
        sp.add_argument("--rf-depth", type=int, help="maximum tree depth (default 16)")
        sp.add_argument("--epochs", type=int, help="MLP or SVM epochs (defaults 50 / 20)")

    # twin
    tw = sub.add_parser("twin", help="manage twins in a twin store file")
    tw.add_argument("--store", dest="twin_store", help="twin store file (env DTW_TWIN_STORE, default twins.json)")
    tsub = tw.add_subparsers(dest="twin_cmd", metavar="CMD", parser_class=_Parser)
    tsub.required = True
    c = tsub.add_parser("create", help="register a twin; prints its id")
    c.add_argument("--config", help="twin configuration JSON")
    c.add_argument("--sensor-node", metavar="SERIAL", help="register a standard four-sensor node instead")
    g = tsub.add_parser("get", help="print a twin's state")
    g.add_argument("twin_id")
    u = tsub.add_parser("update", help="set feature values")
    u.add_argument("twin_id")
    u.add_argument("assign", nargs="+", metavar="FEATURE=VALUE")
    r = tsub.add_parser("release", help="lift a quarantine (idempotent)")
    r.add_argument("twin_id")

    # datagen
    d = sub.add_parser("datagen", help="write a seeded synthetic dataset")
    d.add_argument("--scenario", choices=SCENARIOS, default="anoml_iot")
    d.add_argument("--n", type=int, default=2000, help="number of records")
    d.add_argument("--rate", type=float, default=0.1, help="anomaly rate in [0, 1]")
    d.add_argument("--out", required=True, help="output path")
    d.add_argument("--format", choices=("csv", "log"), default="csv", help="CSV or ground-truth log lines")
    seed_flag(d)

    # train
    t = sub.add_parser("train", help="train a classifier on a CSV or record log")
    t.add_argument("--schema", choices=SCENARIOS, required=True)
    t.add_argument("--in", dest="inp", required=True, help="input CSV (or .log/.jsonl record lines)")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--split", type=float, default=0.8, help="training fraction of the stratified split")
    model_flags(t)
    seed_flag(t)
    format_flag(t)

    # serve
    s = sub.add_parser("serve", help="run the fog stack")
    s.add_argument("--mirror-host", help="bind address (env DTW_MIRROR_HOST)")
    s.add_argument("--mirror-port", type=int, help="mirror endpoint port (env DTW_MIRROR_PORT, default 7700)")
    s.add_argument("--data-port", type=int, help="data-anomaly classifier port (default 7701)")
    s.add_argument("--network-port", type=int, help="network-intrusion classifier port (default 7702)")
    s.add_argument("--push-port", type=int, help="model push port (env DTW_PUSH_PORT, default 7703)")
    s.add_argument("--twins", help="twin store file to load and keep in sync")
    s.add_argument("--model", action="append", help="model file to serve at start (repeatable)")
    s.add_argument("--data-schema", choices=("anoml_iot", "ds2os"), default="anoml_iot")
    s.add_argument("--network-schema", choices=("iotid20",), default="iotid20")
    s.add_argument("--store-dir", help="directory for ground-truth logs of forwarded behaviour")
    s.add_argument("--mode", choices=("loaded", "unloaded"), default="loaded", help="keep models resident or not")
    s.add_argument("--in-process", action="store_true", help="classify in-process instead of via endpoints")
    s.add_argument("--action", choices=("quarantine", "shutdown"), default="quarantine")
    s.add_argument("--freshness", type=float, default=60.0, help="fusion freshness window in seconds")
    s.add_argument("--duration", type=float, help="stop after this many seconds")

    # cloud
    cl = sub.add_parser("cloud", help="periodically retrain from ground-truth stores and push")
    cl.add_argument("--store", action="append", required=True, metavar="SCHEMA=PATH")
    cl.add_argument("--push-host", help="fog host (env DTW_PUSH_HOST)")
    cl.add_argument("--push-port", type=int, help="fog push port (env DTW_PUSH_PORT, default 7703)")
    cl.add_argument("--interval", type=float, default=60.0, help="seconds between rounds")
    cl.add_argument("--iterations", type=int, help="stop after this many rounds")
    cl.add_argument("--min-per-class", type=int, default=50)
    cl.add_argument("--out-dir", help="also keep each trained model file here")
    model_flags(cl)
    seed_flag(cl)

    # simulate
    sm = sub.add_parser("simulate", help="run simulated sensor nodes and gateway")
    sm.add_argument("--node", action="append",
                    help="BEHAVIOR[:ONSET[:DURATION]] per node; behaviors benign, data_anomalous, intrusive, mixed")
    sm.add_argument("--serial-prefix", default="node-", help="twin serial numbers are PREFIX0, PREFIX1, ...")
    sm.add_argument("--period", type=float, default=1.0, help="sensor emission period (s)")
    sm.add_argument("--duration", type=float, default=60.0, help="simulated run length (s)")
    sm.add_argument("--time-scale", type=float, default=1.0, help="simulated seconds per wall second")
    sm.add_argument("--no-gateway", action="store_true", help="do not send flow summaries")
    sm.add_argument("--mirror-host", help="fog host (env DTW_MIRROR_HOST)")
    sm.add_argument("--mirror-port", type=int, help="fog mirror port (env DTW_MIRROR_PORT)")
    seed_flag(sm)
    format_flag(sm)

    # label
    lb = sub.add_parser("label", help="label forwarded behaviour into a training store")
    lb.add_argument("--in", dest="inp", required=True, help="ground-truth log of forwarded records")
    lb.add_argument("--labels", help="CSV of record_id,label[,sublabel]")
    lb.add_argument("--default", type=int, choices=(0, 1), help="label for records not in --labels")
    lb.add_argument("--out", required=True, help="training store to append to")

    # bench
    b = sub.add_parser("bench", help="timing and latency benchmarks")
    bsub = b.add_subparsers(dest="bench_cmd", metavar="CMD", parser_class=_Parser)
    bsub.required = True
    for name, helptext in (("timings", "model size, load, fit, classify times"),
                           ("e2e", "state change to verdict latency")):
        bp = bsub.add_parser(name, help=helptext)
        bp.add_argument("--dataset", action="append", choices=SCENARIOS, help="repeatable; default anoml_iot")
        bp.add_argument("--classifier", action="append", choices=sorted(CLASSIFIERS), help="repeatable; default all")
        bp.add_argument("--runs", type=int, default=5, help="repetitions R")
        bp.add_argument("--n", type=int, default=2000, help="synthetic records to train on")
        bp.add_argument("--out", help="also write the report here")
        seed_flag(bp)
        format_flag(bp)
        if name == "timings":
            bp.add_argument("--no-fit", action="store_true", help="skip fit-time measurement")
        else:
            bp.add_argument("--mode", choices=("loaded", "unloaded", "both"), default="loaded")
    return p


COMMANDS = {
    "twin": cmd_twin,
    "datagen": cmd_datagen,
    "train": cmd_train,
    "serve": cmd_serve,
    "cloud": cmd_cloud,
    "simulate": cmd_simulate,
    "label": cmd_label,
    "bench": cmd_bench,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Settings(args)
        return COMMANDS[args.verb](args, cfg)
    except DTwinError as exc:
        print(f"dtwin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dtwin: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
