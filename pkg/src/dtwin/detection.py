"""Fog-side detection: classify twin state changes, fuse, and act.

Data flow per update::

    mirror endpoint -> DetectionService.submit_* -> per-twin worker queue
        -> build vector from the twin snapshot (model's own preprocessor)
        -> classifier (in-process, or the TCP endpoint on 7701/7702)
        -> Verdict -> fuse with the other kind's latest fresh verdict
        -> NodeStatus -> at most one ActionCommand while quarantined
    and, in parallel, every update is forwarded as an unlabelled record to
    the ground-truth store for later labelling and retraining.
"""
from __future__ import annotations

import base64
import collections
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data.preprocess import Preprocessor
from .data.records import Record
from .data.schemas import Schema, get_schema
from .errors import (
    DeviceUnreachable,
    DTwinError,
    MalformedMessage,
    NoServedModel,
    NoVerdicts,
    SchemaMismatch,
    StorageFailure,
    StoreUnavailable,
)
from .ml.model import TrainedModel, load_model, model_from_bytes, predict, save_model
from .protocol import (
    DATA_ANOMALY_PORT,
    MIRROR_PORT,
    MAX_PUSH_LINE,
    MODEL_PUSH_PORT,
    NETWORK_INTRUSION_PORT,
    ActionCommand,
    LineClient,
    LineServer,
    MirrorMessage,
    MirrorServer,
    ack,
)
from .twin import StateChangeEvent, TwinRegistry, now_ms

log = logging.getLogger(__name__)

DATA_ANOMALY = "data_anomaly"
NETWORK_INTRUSION = "network_intrusion"
MODEL_KINDS = (DATA_ANOMALY, NETWORK_INTRUSION)

NORMAL = "normal"
SUSPECTED_DATA_ANOMALY = "suspected_data_anomaly"
SUSPECTED_INTRUSION = "suspected_intrusion"
COMPROMISED = "compromised"

DEFAULT_POLICY = {COMPROMISED: "quarantine"}
FRESHNESS_S = 60.0
BUFFER_LIMIT = 10_000


@dataclass(frozen=True)
class Verdict:
    twin_id: str
    model_kind: str
    label: int
    score: float
    latency_ms: float
    model_version: int
    classify_us: float = 0.0
    timestamp: int = 0


@dataclass(frozen=True)
class NodeStatus:
    twin_id: str
    state: str
    verdicts: tuple
    # which sides fired: subset of {suspected_data_anomaly, suspected_intrusion}
    reasons: tuple = ()
    updated: int = 0


_SIDE_REASON = {DATA_ANOMALY: SUSPECTED_DATA_ANOMALY, NETWORK_INTRUSION: SUSPECTED_INTRUSION}


def fuse(data_v: Verdict | None, net_v: Verdict | None) -> NodeStatus:
    """OR-fusion. An absent verdict is missing evidence, not a benign vote."""
    present = [v for v in (data_v, net_v) if v is not None]
    if not present:
        raise NoVerdicts("fusion needs at least one verdict")
    reasons = tuple(_SIDE_REASON[v.model_kind] for v in present if v.label == 1)
    state = COMPROMISED if reasons else NORMAL
    return NodeStatus(present[0].twin_id, state, tuple(present), reasons, now_ms())


# --------------------------------------------------------------------------
# served models


@dataclass(frozen=True)
class Served:
    version: int
    model: TrainedModel
    preprocessor: Preprocessor
    path: str | None = None


class ModelSlot:
    """Holds the served model for one kind; swaps are single-reference writes.

    Readers grab ``slot.current`` once and use that :class:`Served` for the
    whole classification, so a concurrent swap can never produce a verdict
    mixing two models.
    """

    def __init__(self, kind: str, schema: Schema | str, model_dir=None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.schema = get_schema(schema) if isinstance(schema, str) else schema
        self.current: Served | None = None
        self._lock = threading.Lock()
        self._version = 0
        self.model_dir = Path(model_dir) if model_dir else None

    def check(self, model: TrainedModel) -> Preprocessor:
        dim = len(self.schema.feature_columns)
        if model.input_dimension != dim:
            raise SchemaMismatch(
                f"{self.kind}: model takes {model.input_dimension} features, schema {self.schema.name} has {dim}"
            )
        if not model.preprocessor:
            raise SchemaMismatch(f"{self.kind}: model carries no preprocessor")
        pp = Preprocessor.from_dict(model.preprocessor)
        if pp.schema.key() != self.schema.key():
            raise SchemaMismatch(f"{self.kind}: model built for schema {pp.schema.name}, serving {self.schema.name}")
        if model.fingerprint and model.fingerprint != pp.fingerprint():
            raise SchemaMismatch(f"{self.kind}: model fingerprint does not match its preprocessor")
        return pp

    def swap(self, model: TrainedModel):
        """Install ``model``; returns the previous version id (None on cold start)."""
        pp = self.check(model)
        with self._lock:
            previous = self.current.version if self.current else None
            self._version += 1
            path = None
            if self.model_dir is not None:
                self.model_dir.mkdir(parents=True, exist_ok=True)
                path = str(self.model_dir / f"{self.kind}-v{self._version}.dtm")
                save_model(model, path)
            self.current = Served(self._version, model, pp, path)
        log.info("%s: serving version %d (previous %s)", self.kind, self._version, previous)
        return previous

    def get(self) -> Served:
        served = self.current
        if served is None:
            raise NoServedModel(f"no {self.kind} model has been pushed")
        return served


def classify_served(served: Served, vector, unloaded=False):
    """Classify with one served model. Returns ``(label, score, classify_us)``.

    ``unloaded`` re-reads the model file from disk inside the timed region,
    modelling a classifier that is not memory-resident.
    """
    t0 = time.perf_counter_ns()
    model = served.model
    if unloaded:
        if served.path is None:
            raise NoServedModel("unloaded mode needs a model directory")
        model = load_model(served.path)
    label, score = predict(model, vector)
    return label, score, (time.perf_counter_ns() - t0) / 1e3


class ClassifierEndpoint(LineServer):
    """TCP classifier for one model kind (ports 7701 / 7702)."""

    def __init__(self, slot: ModelSlot, host="127.0.0.1", port=0, unloaded=False):
        super().__init__(host, port)
        self.slot = slot
        self.unloaded = unloaded

    def handle_message(self, conn, msg, received_ns):
        if msg.kind != "classify_request":
            raise MalformedMessage(f"classifier endpoint does not accept {msg.kind!r}")
        if msg.payload.get("model") not in (None, self.slot.kind):
            raise MalformedMessage(f"this endpoint serves {self.slot.kind}, not {msg.payload.get('model')}")
        vec = msg.payload.get("vector")
        if not isinstance(vec, list):
            raise MalformedMessage("classify_request needs a 'vector' list")
        served = self.slot.get()
        label, score, us = classify_served(served, vec, self.unloaded)
        return MirrorMessage(
            "classify_response",
            msg.twin_id,
            {"label": label, "score": score, "version": served.version, "classify_us": us},
            now_ms(),
        )


class RemoteClassifier:
    """Client side of a classifier endpoint; one connection per calling thread."""

    def __init__(self, host, port):
        self.host = host
        self.port = port
        self._local = threading.local()

    def classify(self, kind, twin_id, vector):
        client = getattr(self._local, "client", None)
        if client is None or client.closed:
            client = self._local.client = LineClient(self.host, self.port)
        reply = client.request(
            MirrorMessage("classify_request", twin_id, {"model": kind, "vector": list(map(float, vector))}, now_ms())
        )
        if reply.kind == "error":
            err = reply.payload.get("error")
            if err == "NoServedModel":
                raise NoServedModel(reply.payload.get("message", ""))
            raise DTwinError(f"classifier error {err}: {reply.payload.get('message')}")
        p = reply.payload
        return int(p["label"]), float(p["score"]), int(p["version"]), float(p.get("classify_us", 0.0))


# --------------------------------------------------------------------------
# ground-truth forwarding


class BufferedForwarder:
    """Appends behaviour records to a store, buffering while it is down.

    ``store`` is anything with ``append(record)`` that raises
    :class:`StoreUnavailable` when unreachable. Up to ``limit`` records are
    held in order; beyond that the oldest are dropped and counted.
    """

    def __init__(self, store, limit=BUFFER_LIMIT):
        self.store = store
        self.limit = limit
        self.buffer = collections.deque()
        self.dropped = 0
        self.appended = 0
        self._lock = threading.Lock()

    def forward(self, record: Record) -> bool:
        """Returns True when the record (and any backlog) reached the store."""
        with self._lock:
            self.buffer.append(record)
            if len(self.buffer) > self.limit:
                self.buffer.popleft()
                self.dropped += 1
            return self._flush_locked()

    def flush(self) -> bool:
        with self._lock:
            return self._flush_locked()

    def _flush_locked(self):
        if self.store is None:
            return False
        while self.buffer:
            try:
                self.store.append(self.buffer[0])
            except (StoreUnavailable, StorageFailure):
                return False
            self.buffer.popleft()
            self.appended += 1
        return True


# --------------------------------------------------------------------------
# the service


@dataclass
class _TwinDetection:
    last: dict = field(default_factory=dict)  # kind -> (Verdict, monotonic s)
    status: NodeStatus | None = None


class DetectionService:
    """Classification, fusion, action dispatch, and forwarding for all twins.

    ``classifiers`` maps model kind to a :class:`RemoteClassifier`; kinds
    without an entry are classified in-process from the slot (the "loaded"
    benchmark path). ``action_sender`` is called with an
    :class:`ActionCommand`; normally ``MirrorServer.send_action``.
    """

    def __init__(
        self,
        registry: TwinRegistry,
        *,
        data_schema="anoml_iot",
        network_schema="iotid20",
        classifiers=None,
        action_sender=None,
        forwarders=None,
        policy=None,
        freshness_s=FRESHNESS_S,
        workers=4,
        model_dir=None,
        unloaded=False,
    ):
        self.registry = registry
        self.slots = {
            DATA_ANOMALY: ModelSlot(DATA_ANOMALY, data_schema, model_dir),
            NETWORK_INTRUSION: ModelSlot(NETWORK_INTRUSION, network_schema, model_dir),
        }
        self.classifiers = dict(classifiers or {})
        self.action_sender = action_sender
        self.forwarders = dict(forwarders or {})
        self.policy = dict(DEFAULT_POLICY if policy is None else policy)
        self.freshness_s = freshness_s
        self.unloaded = unloaded
        self._twins = collections.defaultdict(_TwinDetection)
        self._twins_lock = threading.Lock()
        self._listeners = []
        self.verdicts = collections.deque(maxlen=100_000)
        self.actions = []
        self.delivery_errors = []
        self.errors = collections.deque(maxlen=10_000)
        self._n_workers = max(1, workers)
        self._queues = []
        self._threads = []
        self._pending = 0
        self._idle = threading.Condition()

    # -- models ------------------------------------------------------------
    def swap_model(self, kind, model: TrainedModel):
        return self.slots[kind].swap(model)

    def served_version(self, kind):
        cur = self.slots[kind].current
        return cur.version if cur else None

    # -- listeners -----------------------------------------------------------
    def add_listener(self, fn):
        """``fn(verdict, status)`` runs on the worker after every verdict."""
        self._listeners.append(fn)

    # -- async entry points (mirror endpoint sink) ---------------------------
    def start(self):
        import queue

        if self._threads:
            return self
        for i in range(self._n_workers):
            q = queue.Queue()
            t = threading.Thread(target=self._worker, args=(q,), name=f"detect-{i}", daemon=True)
            self._queues.append(q)
            self._threads.append(t)
            t.start()
        return self

    def stop(self):
        for q in self._queues:
            q.put(None)
        for t in self._threads:
            t.join(timeout=5)
        self._queues, self._threads = [], []

    def _enqueue(self, twin_id, item):
        if not self._threads:
            self._run(item)
            return
        with self._idle:
            self._pending += 1
        # stable twin -> worker mapping keeps per-twin processing in order
        self._queues[sum(twin_id.encode()) % len(self._queues)].put(item)

    def submit_state(self, twin_id, events, received_ns=None):
        if events:
            self._enqueue(twin_id, ("state", events[-1], received_ns))

    def submit_flow(self, twin_id, features, received_ns=None):
        self._enqueue(twin_id, ("flow", (twin_id, dict(features)), received_ns))

    def wait_idle(self, timeout=10.0) -> bool:
        deadline = time.monotonic() + timeout
        with self._idle:
            while self._pending:
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._idle.wait(left)
        return True

    def _worker(self, q):
        while True:
            item = q.get()
            if item is None:
                return
            try:
                self._run(item)
            finally:
                with self._idle:
                    self._pending -= 1
                    self._idle.notify_all()

    def _run(self, item):
        what, data, received_ns = item
        try:
            if what == "state":
                self.on_state_change(data, received_ns)
            else:
                self.on_flow_summary(data[0], data[1], received_ns)
        except DTwinError as exc:
            self.errors.append((what, type(exc).__name__, str(exc)))
            log.debug("detection %s: %s", what, exc)

    # -- synchronous core ------------------------------------------------------
    def on_state_change(self, event: StateChangeEvent, received_ns=None) -> Verdict:
        """Classify a twin's sensor state after ``event`` with the data-anomaly model."""
        t0 = time.perf_counter_ns() if received_ns is None else received_ns
        snap = self.registry.get_twin(event.twin_id)
        values = snap.values()
        self._forward(DATA_ANOMALY, event.twin_id, values, event.timestamp)
        return self._classify(DATA_ANOMALY, event.twin_id, values, t0)

    def on_flow_summary(self, twin_id, features: dict, received_ns=None) -> Verdict:
        t0 = time.perf_counter_ns() if received_ns is None else received_ns
        self._forward(NETWORK_INTRUSION, twin_id, features, now_ms())
        return self._classify(NETWORK_INTRUSION, twin_id, features, t0)

    def _classify(self, kind, twin_id, values, t0) -> Verdict:
        slot = self.slots[kind]
        remote = self.classifiers.get(kind)
        for _ in range(3):
            served = slot.get()
            vector = served.preprocessor.transform_values(values)
            if remote is None:
                label, score, us = classify_served(served, vector, self.unloaded)
                version = served.version
            else:
                label, score, version, us = remote.classify(kind, twin_id, vector)
            if version == served.version:
                break
            # swapped between vectorising and classifying: redo with one model
        else:
            raise SchemaMismatch(f"{kind}: model kept changing during classification")
        latency_ms = max(0.0, (time.perf_counter_ns() - t0) / 1e6)
        verdict = Verdict(twin_id, kind, label, score, latency_ms, version, us, now_ms())
        self.verdicts.append(verdict)
        status = self._update_status(verdict)
        self.dispatch_action(status)
        for fn in self._listeners:
            fn(verdict, status)
        return verdict

    def _update_status(self, verdict: Verdict) -> NodeStatus:
        now = time.monotonic()
        with self._twins_lock:
            st = self._twins[verdict.twin_id]
            st.last[verdict.model_kind] = (verdict, now)
            other_kind = NETWORK_INTRUSION if verdict.model_kind == DATA_ANOMALY else DATA_ANOMALY
            other = st.last.get(other_kind)
            other_v = other[0] if other and now - other[1] <= self.freshness_s else None
            if verdict.model_kind == DATA_ANOMALY:
                status = fuse(verdict, other_v)
            else:
                status = fuse(other_v, verdict)
            st.status = status
        return status

    def status(self, twin_id) -> NodeStatus | None:
        with self._twins_lock:
            st = self._twins.get(twin_id)
            return st.status if st else None

    def dispatch_action(self, status: NodeStatus) -> ActionCommand | None:
        """Send one mitigation command when a twin first becomes compromised.

        Normal status never produces a message. Marking the twin quarantined
        in the registry is the idempotence gate: only the call that flips it
        sends a command.
        """
        action = self.policy.get(status.state)
        if action is None:
            return None
        try:
            first = self.registry.quarantine(status.twin_id, action)
        except DTwinError:
            first = False
        if not first:
            return None
        reason = ",".join(status.reasons) or status.state
        cmd = ActionCommand(status.twin_id, action, reason)
        self.actions.append(cmd)
        if self.action_sender is not None:
            try:
                self.action_sender(cmd)
            except DeviceUnreachable as exc:
                self.delivery_errors.append((cmd, str(exc)))
                log.warning("action %s for %s not delivered: %s", action, status.twin_id, exc)
        return cmd

    def release(self, twin_id) -> bool:
        with self._twins_lock:
            st = self._twins.get(twin_id)
            if st is not None:
                st.last.clear()
                st.status = None
        return self.registry.release(twin_id)

    # -- behaviour forwarding -------------------------------------------------
    def _forward(self, kind, twin_id, values, ts):
        fwd = self.forwarders.get(kind)
        if fwd is None:
            return
        schema = self.slots[kind].schema
        rec_values = {k: v for k, v in values.items() if k in {c.name for c in schema.columns}}
        if schema.timestamp_column:
            rec_values[schema.timestamp_column] = str(ts)
        fwd.forward(Record(schema.name, rec_values, None, None, f"{twin_id}@{ts}"))

    def forward_behavior(self, kind, record: Record) -> bool:
        fwd = self.forwarders.get(kind)
        if fwd is None:
            raise StoreUnavailable(f"no ground-truth store configured for {kind}")
        return fwd.forward(record)


# --------------------------------------------------------------------------
# model push listener


class ModelPushServer(LineServer):
    """Port 7703: accepts ``model_push`` and swaps the model into serving."""

    max_line = MAX_PUSH_LINE

    def __init__(self, service: DetectionService, host="127.0.0.1", port=MODEL_PUSH_PORT):
        super().__init__(host, port)
        self.service = service

    def handle_message(self, conn, msg, received_ns):
        if msg.kind != "model_push":
            raise MalformedMessage(f"push endpoint does not accept {msg.kind!r}")
        kind = msg.payload.get("model_kind")
        if kind not in MODEL_KINDS:
            raise MalformedMessage(f"model_kind must be one of {MODEL_KINDS}")
        try:
            blob = base64.b64decode(msg.payload.get("data", ""), validate=True)
        except (ValueError, TypeError):
            raise MalformedMessage("model data is not valid base64") from None
        model = model_from_bytes(blob)
        previous = self.service.swap_model(kind, model)
        return ack("model_push", "", model_kind=kind, version=self.service.served_version(kind), previous=previous)


def model_push_message(kind, model_bytes: bytes) -> MirrorMessage:
    return MirrorMessage(
        "model_push", "", {"model_kind": kind, "data": base64.b64encode(model_bytes).decode("ascii")}, now_ms()
    )


# --------------------------------------------------------------------------
# whole fog process


class FogStack:
    """Registry + detection + mirror endpoint + classifier endpoints + push.

    ``remote=True`` puts each classifier behind its own TCP endpoint as in a
    per-model container deployment; ``remote=False`` classifies in-process.
    Ports default to 0 (ephemeral) so tests can run stacks side by side.
    """

    def __init__(
        self,
        *,
        host="127.0.0.1",
        mirror_port=0,
        data_port=0,
        network_port=0,
        push_port=0,
        remote=True,
        unloaded=False,
        model_dir=None,
        registry=None,
        **service_kw,
    ):
        self.registry = registry or TwinRegistry()
        self._tmp = None
        if unloaded and model_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="dtwin-models-")
            model_dir = self._tmp.name
        self.service = DetectionService(self.registry, model_dir=model_dir, unloaded=unloaded and not remote, **service_kw)
        self.endpoints = {}
        if remote:
            for kind, port in ((DATA_ANOMALY, data_port), (NETWORK_INTRUSION, network_port)):
                ep = ClassifierEndpoint(self.service.slots[kind], host, port, unloaded=unloaded).start()
                self.endpoints[kind] = ep
                self.service.classifiers[kind] = RemoteClassifier(host, ep.port)
        self.mirror = MirrorServer(self.registry, self.service, host, mirror_port).start()
        self.service.action_sender = self.mirror.send_action
        self.push = ModelPushServer(self.service, host, push_port).start() if push_port is not None else None
        self.service.start()

    @classmethod
    def default_ports(cls, **kw):
        return cls(
            mirror_port=int(os.environ.get("DTW_MIRROR_PORT", MIRROR_PORT)),
            data_port=DATA_ANOMALY_PORT,
            network_port=NETWORK_INTRUSION_PORT,
            push_port=int(os.environ.get("DTW_PUSH_PORT", MODEL_PUSH_PORT)),
            **kw,
        )

    def close(self):
        self.service.stop()
        self.mirror.close()
        if self.push is not None:
            self.push.close()
        for ep in self.endpoints.values():
            ep.close()
        if self._tmp is not None:
            self._tmp.cleanup()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
