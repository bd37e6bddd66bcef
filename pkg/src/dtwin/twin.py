"""Digital-twin registry: configuration parsing, mirrored state, change events.

A twin holds static ``attributes`` and a set of dynamic features, each a
64-bit float with the timestamp of its last update. Every applied update
bumps the twin's revision by one and emits a :class:`StateChangeEvent` to
subscribers. Updates are never deduplicated: a repeated value is still a
fresh mirror of the device and still produces an event.
"""
from __future__ import annotations

import json
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from types import MappingProxyType

from .errors import (
    DuplicateFeature,
    DuplicateTwin,
    MalformedConfig,
    MissingSection,
    QuarantinedTwin,
    UnknownFeature,
    UnknownTwin,
)


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class TwinDefinition:
    definition_id: str
    attributes: dict = field(default_factory=dict)
    feature_names: tuple = ()
    initial_values: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.definition_id, str) or ":" not in self.definition_id:
            raise MalformedConfig(f"definition id {self.definition_id!r} must contain a ':' separator")
        names = tuple(self.feature_names)
        if any(not isinstance(n, str) or not n for n in names):
            raise MalformedConfig("feature names must be non-empty strings")
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise DuplicateFeature(f"feature {dup!r} declared twice")
        extra = set(self.initial_values) - set(names)
        if extra:
            raise MalformedConfig(f"initial values for undeclared features {sorted(extra)}")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "attributes", dict(self.attributes))
        object.__setattr__(self, "initial_values", {k: float(v) for k, v in self.initial_values.items()})

    @property
    def serialno(self):
        return self.attributes.get("serialno")


@dataclass(frozen=True)
class TwinSnapshot:
    twin_id: str
    definition: TwinDefinition
    feature_values: MappingProxyType  # feature -> (value, timestamp_ms)
    revision: int
    quarantine: str | None = None

    def value(self, feature):
        return self.feature_values[feature][0]

    def values(self) -> dict:
        return {k: v for k, (v, _) in self.feature_values.items()}


@dataclass(frozen=True)
class StateChangeEvent:
    twin_id: str
    feature: str
    old_value: float
    new_value: float
    timestamp: int
    revision: int


# --------------------------------------------------------------------------
# configuration documents


class _Pairs(list):
    """Key/value pairs of a JSON object, kept so duplicates stay visible."""


def _pairs_hook(pairs):
    return _Pairs(pairs)


def _as_dict(pairs, where):
    if not isinstance(pairs, _Pairs):
        raise MalformedConfig(f"{where} must be an object")
    out = {}
    for k, v in pairs:
        if k in out:
            raise MalformedConfig(f"key {k!r} repeated in {where}")
        out[k] = v
    return out


def parse_twin_config(text: str | bytes) -> TwinDefinition:
    """Parse a twin configuration document (``definition`` / ``attributes`` /
    ``features`` JSON object)."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedConfig(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(text, object_pairs_hook=_pairs_hook)
    except json.JSONDecodeError as exc:
        raise MalformedConfig(f"invalid JSON: {exc}") from None
    if not isinstance(doc, _Pairs):
        raise MalformedConfig("configuration must be a JSON object")

    feature_pairs = None
    top = {}
    for k, v in doc:
        if k in top:
            raise MalformedConfig(f"top-level key {k!r} repeated")
        top[k] = v
        if k == "features":
            feature_pairs = v
    for section in ("definition", "features"):
        if section not in top:
            raise MissingSection(f"configuration lacks the {section!r} section")

    definition = top["definition"]
    if not isinstance(definition, str) or not definition:
        raise MalformedConfig("'definition' must be a non-empty string")

    attributes = _as_dict(top.get("attributes", _Pairs()), "attributes")
    for k, v in attributes.items():
        if not isinstance(v, str):
            raise MalformedConfig(f"attribute {k!r} must be a string")

    if not isinstance(feature_pairs, _Pairs):
        raise MalformedConfig("'features' must be an object")
    names = []
    initial = {}
    for name, body in feature_pairs:
        if name in initial:
            raise DuplicateFeature(f"feature {name!r} declared twice")
        body = _as_dict(body, f"feature {name!r}")
        props = _as_dict(body.get("properties"), f"feature {name!r} properties")
        if "value" not in props:
            raise MalformedConfig(f"feature {name!r} lacks properties.value")
        value = props["value"]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise MalformedConfig(f"feature {name!r} value must be a finite number")
        names.append(name)
        initial[name] = float(value)
    return TwinDefinition(definition, attributes, tuple(names), initial)


def serialize_twin_config(defn: TwinDefinition) -> str:
    doc = {
        "definition": defn.definition_id,
        "attributes": dict(defn.attributes),
        "features": {n: {"properties": {"value": defn.initial_values.get(n, 0.0)}} for n in defn.feature_names},
    }
    return json.dumps(doc, indent=1)


# --------------------------------------------------------------------------
# registry


class Subscription:
    """Ordered stream of events for the twins a filter selects.

    Iterating blocks until :meth:`close` is called; ``get`` and ``drain``
    are the non-blocking alternatives.
    """

    _CLOSED = object()

    def __init__(self, registry, twin_filter):
        self._registry = registry
        self._queue = queue.Queue()
        self._closed = False
        if twin_filter is None:
            self._match = lambda tid: True
        elif isinstance(twin_filter, str):
            self._match = lambda tid: tid == twin_filter
        elif callable(twin_filter):
            self._match = twin_filter
        else:
            ids = frozenset(twin_filter)
            self._match = ids.__contains__

    def matches(self, twin_id) -> bool:
        return not self._closed and self._match(twin_id)

    def _push(self, event):
        self._queue.put(event)

    def get(self, timeout=None):
        """Next event, or None on timeout or once the stream is closed."""
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is self._CLOSED:
            self._queue.put(item)
            return None
        return item

    def drain(self):
        out = []
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                return out
            if item is self._CLOSED:
                self._queue.put(item)
                return out
            out.append(item)

    def close(self):
        if not self._closed:
            self._closed = True
            self._registry._unsubscribe(self)
            self._queue.put(self._CLOSED)

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is self._CLOSED:
                self._queue.put(item)
                return
            yield item

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _TwinState:
    __slots__ = ("twin_id", "definition", "values", "stamps", "revision", "lock", "quarantine")

    def __init__(self, twin_id, definition: TwinDefinition, ts):
        self.twin_id = twin_id
        self.definition = definition
        self.values = {n: definition.initial_values.get(n, 0.0) for n in definition.feature_names}
        self.stamps = {n: ts for n in definition.feature_names}
        self.revision = 0
        self.lock = threading.Lock()
        self.quarantine = None


class TwinRegistry:
    """Thread-safe twin store.

    Updates to one twin are serialised by a per-twin lock, so events for a
    twin reach every subscriber in revision order; distinct twins update
    concurrently. Snapshots are taken under the same lock and are never torn.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._twins: dict[str, _TwinState] = {}
        self._subs: list[Subscription] = []
        self._counter = 0

    # -- lifecycle ---------------------------------------------------------
    def create_twin(self, defn: TwinDefinition, timestamp=None) -> str:
        ts = now_ms() if timestamp is None else int(timestamp)
        with self._lock:
            if defn.serialno is not None:
                twin_id = f"{defn.definition_id}/{defn.serialno}"
                if twin_id in self._twins:
                    raise DuplicateTwin(f"twin {twin_id!r} already registered")
            else:
                while True:
                    self._counter += 1
                    twin_id = f"{defn.definition_id}/#{self._counter}"
                    if twin_id not in self._twins:
                        break
            self._twins[twin_id] = _TwinState(twin_id, defn, ts)
        return twin_id

    def twin_ids(self):
        with self._lock:
            return sorted(self._twins)

    def _state(self, twin_id) -> _TwinState:
        try:
            return self._twins[twin_id]
        except KeyError:
            raise UnknownTwin(f"no twin {twin_id!r}") from None

    # -- state -------------------------------------------------------------
    def update_feature(self, twin_id, feature, value, timestamp=None) -> StateChangeEvent:
        return self.update_features(twin_id, {feature: value}, timestamp)[0]

    def update_features(self, twin_id, values: dict, timestamp=None) -> list:
        """Apply several feature updates as one atomic step.

        Each feature still gets its own event and revision; a concurrent
        snapshot sees either none or all of them.
        """
        st = self._state(twin_id)
        ts = now_ms() if timestamp is None else int(timestamp)
        clean = {}
        for feature, value in values.items():
            if feature not in st.values:
                raise UnknownFeature(f"twin {twin_id!r} has no feature {feature!r}")
            v = float(value)
            if not math.isfinite(v):
                raise ValueError(f"feature {feature!r}: non-finite value {value!r}")
            clean[feature] = v
        events = []
        with st.lock:
            if st.quarantine is not None:
                raise QuarantinedTwin(f"twin {twin_id!r} is in {st.quarantine} mode")
            for feature, v in clean.items():
                old = st.values[feature]
                st.values[feature] = v
                st.stamps[feature] = ts
                st.revision += 1
                events.append(StateChangeEvent(twin_id, feature, old, v, ts, st.revision))
            subs = [s for s in self._subs if s.matches(twin_id)]
            for ev in events:
                for s in subs:
                    s._push(ev)
        return events

    def get_twin(self, twin_id) -> TwinSnapshot:
        st = self._state(twin_id)
        with st.lock:
            fv = {n: (st.values[n], st.stamps[n]) for n in st.definition.feature_names}
            return TwinSnapshot(twin_id, st.definition, MappingProxyType(fv), st.revision, st.quarantine)

    # -- quarantine ----------------------------------------------------------
    def quarantine(self, twin_id, mode="quarantine") -> bool:
        """Refuse further updates; returns False if the twin already was."""
        st = self._state(twin_id)
        with st.lock:
            if st.quarantine is not None:
                return False
            st.quarantine = mode
            return True

    def release(self, twin_id) -> bool:
        """Lift a quarantine. Idempotent; returns whether anything changed."""
        st = self._state(twin_id)
        with st.lock:
            was = st.quarantine is not None
            st.quarantine = None
            return was

    def is_quarantined(self, twin_id) -> bool:
        return self._state(twin_id).quarantine is not None

    # -- events --------------------------------------------------------------
    def subscribe(self, twin_filter=None) -> Subscription:
        sub = Subscription(self, twin_filter)
        with self._lock:
            self._subs = [*self._subs, sub]
        return sub

    def _unsubscribe(self, sub):
        with self._lock:
            self._subs = [s for s in self._subs if s is not sub]


# functional aliases matching the operation names used across the package
def create_twin(registry: TwinRegistry, defn: TwinDefinition) -> str:
    return registry.create_twin(defn)


def update_feature(registry: TwinRegistry, twin_id, feature, value, timestamp=None) -> StateChangeEvent:
    return registry.update_feature(twin_id, feature, value, timestamp)


def get_twin(registry: TwinRegistry, twin_id) -> TwinSnapshot:
    return registry.get_twin(twin_id)


def subscribe_changes(registry: TwinRegistry, twin_filter=None) -> Subscription:
    return registry.subscribe(twin_filter)
