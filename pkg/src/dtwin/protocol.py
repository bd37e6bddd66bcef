"""Newline-delimited JSON messages between devices, gateways, and the fog.

Every message is one UTF-8 JSON object on one line::

    {"version":1,"kind":"state_update","twin_id":"...","payload":{...},"timestamp":1700000000000}

JSON string escaping guarantees no raw newline inside a line. The same
framing carries classifier requests and model pushes on their own ports.
"""
from __future__ import annotations

import json
import logging
import math
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    BindFailure,
    ConnectFailure,
    DeviceUnreachable,
    DTwinError,
    MalformedMessage,
    ProtocolError,
    QuarantinedTwin,
    UnknownFeature,
    UnknownKind,
    UnknownTwin,
    UnserializableValue,
    UnsupportedVersion,
)
from .twin import TwinRegistry, now_ms

log = logging.getLogger(__name__)

VERSION = 1
KINDS = (
    "state_update",
    "flow_summary",
    "action",
    "classify_request",
    "classify_response",
    "model_push",
    "ack",
    "error",
)
ACTIONS = ("quarantine", "shutdown")

MIRROR_PORT = 7700
DATA_ANOMALY_PORT = 7701
NETWORK_INTRUSION_PORT = 7702
MODEL_PUSH_PORT = 7703

MAX_LINE = 1 << 20
MAX_PUSH_LINE = 1 << 28


@dataclass
class MirrorMessage:
    kind: str
    twin_id: str = ""
    payload: dict = field(default_factory=dict)
    timestamp: int = 0
    version: int = VERSION


@dataclass(frozen=True)
class ActionCommand:
    twin_id: str
    action: str
    reason: str = ""

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {self.action!r}")

    def to_message(self) -> MirrorMessage:
        return MirrorMessage("action", self.twin_id, {"action": self.action, "reason": self.reason}, now_ms())


# --------------------------------------------------------------------------
# codec


def _reject_constant(token):
    raise ValueError(f"non-finite number {token} not allowed")


def encode_message(msg: MirrorMessage) -> bytes:
    if msg.version != VERSION:
        raise UnsupportedVersion(f"cannot encode version {msg.version}")
    if msg.kind not in KINDS:
        raise UnknownKind(f"unknown kind {msg.kind!r}")
    if not isinstance(msg.payload, dict):
        raise UnserializableValue("payload must be a mapping")
    obj = {
        "version": msg.version,
        "kind": msg.kind,
        "twin_id": msg.twin_id,
        "payload": msg.payload,
        "timestamp": int(msg.timestamp),
    }
    try:
        text = json.dumps(obj, allow_nan=False, ensure_ascii=False, separators=(",", ":"))
        return text.encode("utf-8") + b"\n"
    except (ValueError, TypeError) as exc:
        # UnicodeEncodeError (lone surrogates) is a ValueError too
        raise UnserializableValue(str(exc)) from None


def decode_message(line: bytes | str) -> MirrorMessage:
    """Parse one line. Any defect raises a :class:`MalformedMessage` subclass."""
    try:
        if isinstance(line, (bytes, bytearray, memoryview)):
            text = bytes(line).decode("utf-8")
        else:
            text = line
        if text.endswith("\n"):
            text = text[:-1]
        if text.endswith("\r"):
            text = text[:-1]
        if "\n" in text:
            raise ValueError("embedded newline")
        obj = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, RecursionError, TypeError) as exc:
        raise MalformedMessage(f"unparseable line: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("message must be a JSON object")
    version = obj.get("version")
    if isinstance(version, bool) or not isinstance(version, int):
        raise MalformedMessage("missing or non-integer version")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported protocol version {version}")
    kind = obj.get("kind")
    if not isinstance(kind, str):
        raise MalformedMessage("missing kind")
    if kind not in KINDS:
        raise UnknownKind(f"unknown kind {kind!r}")
    twin_id = obj.get("twin_id", "")
    payload = obj.get("payload", {})
    ts = obj.get("timestamp", 0)
    if not isinstance(twin_id, str):
        raise MalformedMessage("twin_id must be a string")
    if not isinstance(payload, dict):
        raise MalformedMessage("payload must be an object")
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise MalformedMessage("timestamp must be an integer")
    return MirrorMessage(kind, twin_id, payload, ts, version)


def feature_map(msg: MirrorMessage) -> dict:
    feats = msg.payload.get("features")
    if not isinstance(feats, dict) or not feats:
        raise MalformedMessage(f"{msg.kind} needs a non-empty 'features' object")
    for k, v in feats.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise MalformedMessage(f"feature {k!r} must be a finite number")
    return feats


# message constructors


def state_update(twin_id, features: dict, timestamp=None) -> MirrorMessage:
    return MirrorMessage("state_update", twin_id, {"features": dict(features)}, now_ms() if timestamp is None else timestamp)


def flow_summary(twin_id, features: dict, timestamp=None) -> MirrorMessage:
    return MirrorMessage("flow_summary", twin_id, {"features": dict(features)}, now_ms() if timestamp is None else timestamp)


def ack(ref: str, twin_id="", **extra) -> MirrorMessage:
    return MirrorMessage("ack", twin_id, {"ref": ref, **extra}, now_ms())


def error_message(exc: BaseException, twin_id="") -> MirrorMessage:
    return MirrorMessage("error", twin_id, {"error": type(exc).__name__, "message": str(exc)}, now_ms())


# --------------------------------------------------------------------------
# server plumbing


class Connection:
    """One accepted stream; writes are serialised so replies never interleave."""

    def __init__(self, sock, addr):
        self.sock = sock
        self.addr = addr
        self._wlock = threading.Lock()
        self.closed = False
        self.twins = set()
        self._action_acks = queue.Queue()

    def send(self, msg: MirrorMessage):
        data = encode_message(msg)
        with self._wlock:
            if self.closed:
                raise DeviceUnreachable(f"connection {self.addr} is closed")
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self.closed = True
                raise DeviceUnreachable(f"write to {self.addr} failed: {exc}") from None


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        conn = Connection(self.connection, self.client_address)
        server.line_server._connections.add(conn)
        try:
            while True:
                try:
                    line = self.rfile.readline(server.line_server.max_line + 1)
                except OSError:
                    break
                if not line:
                    break
                received_ns = time.perf_counter_ns()
                if len(line) > server.line_server.max_line:
                    self._reply(conn, error_message(MalformedMessage("line too long")))
                    self._skip_rest_of_line()
                    continue
                try:
                    msg = decode_message(line)
                except ProtocolError as exc:
                    self._reply(conn, error_message(exc))
                    continue
                try:
                    reply = server.line_server.handle_message(conn, msg, received_ns)
                except DTwinError as exc:
                    reply = error_message(exc, msg.twin_id)
                except Exception as exc:  # isolate one bad request from the listener
                    log.exception("handler failure on %s", msg.kind)
                    reply = error_message(exc, msg.twin_id)
                if reply is not None:
                    self._reply(conn, reply)
        finally:
            conn.closed = True
            server.line_server._connection_closed(conn)

    def _skip_rest_of_line(self):
        while True:
            chunk = self.rfile.readline(1 << 16)
            if not chunk or chunk.endswith(b"\n"):
                return

    def _reply(self, conn, msg):
        try:
            conn.send(msg)
        except DeviceUnreachable:
            pass


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class LineServer:
    """Threaded newline-JSON listener. Subclasses implement ``handle_message``."""

    max_line = MAX_LINE

    def __init__(self, host="127.0.0.1", port=0):
        try:
            self._server = _TCPServer((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from None
        self._server.line_server = self
        self._connections = set()
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    @property
    def port(self):
        return self._server.server_address[1]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, name=type(self).__name__, daemon=True)
        self._thread.start()
        return self

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        for conn in list(self._connections):
            conn.closed = True
            try:
                conn.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _connection_closed(self, conn):
        self._connections.discard(conn)

    def handle_message(self, conn, msg, received_ns):  # pragma: no cover - abstract
        raise NotImplementedError


class MirrorServer(LineServer):
    """Mirror endpoint: applies device/gateway updates and carries actions back.

    ``detection_sink`` (optional) receives ``submit_state(twin_id, events,
    received_ns)`` and ``submit_flow(twin_id, features, received_ns)``.
    A connection becomes the device channel of a twin on its first
    ``state_update`` for that twin; actions for the twin go out on it.
    """

    def __init__(self, registry: TwinRegistry, detection_sink=None, host="127.0.0.1", port=MIRROR_PORT):
        super().__init__(host, port)
        self.registry = registry
        self.detection_sink = detection_sink
        self._devices = {}
        self._dev_lock = threading.Lock()
        self.action_log = []

    def handle_message(self, conn, msg, received_ns):
        if msg.kind == "state_update":
            feats = feature_map(msg)
            with self._dev_lock:
                self._devices[msg.twin_id] = conn
                conn.twins.add(msg.twin_id)
            events = self.registry.update_features(msg.twin_id, feats, msg.timestamp or None)
            if self.detection_sink is not None:
                self.detection_sink.submit_state(msg.twin_id, events, received_ns)
            return ack("state_update", msg.twin_id, revision=events[-1].revision)
        if msg.kind == "flow_summary":
            feats = feature_map(msg)
            snap = self.registry.get_twin(msg.twin_id)
            if snap.quarantine is not None:
                raise QuarantinedTwin(f"twin {msg.twin_id!r} is in {snap.quarantine} mode")
            declared = {k: v for k, v in feats.items() if k in snap.feature_values}
            revision = snap.revision
            if declared:
                revision = self.registry.update_features(msg.twin_id, declared, msg.timestamp or None)[-1].revision
            if self.detection_sink is not None:
                self.detection_sink.submit_flow(msg.twin_id, feats, received_ns)
            return ack("flow_summary", msg.twin_id, revision=revision)
        if msg.kind == "ack" and msg.payload.get("ref") == "action":
            conn._action_acks.put(msg)
            return None
        raise MalformedMessage(f"mirror endpoint does not accept {msg.kind!r} messages")

    def _connection_closed(self, conn):
        super()._connection_closed(conn)
        with self._dev_lock:
            for tid in conn.twins:
                if self._devices.get(tid) is conn:
                    del self._devices[tid]

    def connection_for(self, twin_id) -> Connection:
        with self._dev_lock:
            conn = self._devices.get(twin_id)
        if conn is None or conn.closed:
            raise DeviceUnreachable(f"no live device connection for twin {twin_id!r}")
        return conn

    def send_action(self, cmd: ActionCommand, timeout=2.0):
        conn = self.connection_for(cmd.twin_id)
        reply = send_action(conn, cmd, timeout)
        self.action_log.append((cmd, reply))
        return reply


def send_action(conn: Connection, cmd: ActionCommand, timeout=2.0):
    """Write one action to the device and wait for its ack.

    The command is written exactly once; no retransmission. Returns the ack
    message, or None if the device did not acknowledge within ``timeout``.
    """
    if conn.closed:
        raise DeviceUnreachable(f"connection for {cmd.twin_id!r} is closed")
    conn.send(cmd.to_message())
    try:
        return conn._action_acks.get(timeout=timeout)
    except queue.Empty:
        log.warning("no ack for %s on %s", cmd.action, cmd.twin_id)
        return None


def serve_mirror_endpoint(port, registry, detection_sink=None, host="127.0.0.1") -> MirrorServer:
    return MirrorServer(registry, detection_sink, host, port).start()


# --------------------------------------------------------------------------
# client


class LineClient:
    """Blocking request/reply client with a background reader.

    Every message this client sends gets exactly one reply (``ack`` or
    ``error``), so replies are matched to requests in FIFO order. Unsolicited
    ``action`` messages go to ``on_action`` and are acknowledged
    automatically after the callback returns.
    """

    def __init__(self, host="127.0.0.1", port=MIRROR_PORT, on_action=None, timeout=5.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectFailure(f"cannot connect to {host}:{port}: {exc}") from None
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._sock.makefile("rb")
        self._wlock = threading.Lock()
        self._pending = queue.Queue()
        self._replies = queue.Queue()
        self.on_action = on_action
        self.actions = []
        self.timeout = timeout
        self.closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            for line in self._rfile:
                try:
                    msg = decode_message(line)
                except ProtocolError:
                    log.warning("client dropped malformed line from server")
                    continue
                if msg.kind == "action":
                    self.actions.append(msg)
                    if self.on_action is not None:
                        self.on_action(msg)
                    try:
                        self._write(ack("action", msg.twin_id, action=msg.payload.get("action")))
                    except OSError:
                        pass
                else:
                    self._replies.put(msg)
        except (OSError, ValueError):
            pass
        finally:
            self.closed = True
            self._replies.put(None)

    def _write(self, msg):
        data = encode_message(msg)
        with self._wlock:
            self._sock.sendall(data)

    def send_raw(self, data: bytes):
        with self._wlock:
            self._sock.sendall(data)

    def request(self, msg: MirrorMessage, timeout=None) -> MirrorMessage:
        try:
            self._write(msg)
        except OSError as exc:
            raise ConnectFailure(f"send failed: {exc}") from None
        return self.read_reply(timeout)

    def read_reply(self, timeout=None) -> MirrorMessage:
        try:
            reply = self._replies.get(timeout=self.timeout if timeout is None else timeout)
        except queue.Empty:
            raise ConnectFailure("timed out waiting for reply") from None
        if reply is None:
            self._replies.put(None)
            raise ConnectFailure("connection closed by server")
        return reply

    def close(self):
        self.closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


MirrorClient = LineClient

# error names carried in ``error`` payloads that clients may want to match on
REFUSAL_ERRORS = {e.__name__ for e in (QuarantinedTwin, UnknownTwin, UnknownFeature)}
