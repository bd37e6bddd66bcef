import json
import random
import socket
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtwin.errors import (
    BindFailure,
    ConnectFailure,
    DeviceUnreachable,
    MalformedMessage,
    UnknownKind,
    UnserializableValue,
    UnsupportedVersion,
)
from dtwin.protocol import (
    KINDS,
    ActionCommand,
    LineClient,
    MirrorMessage,
    MirrorServer,
    decode_message,
    encode_message,
    flow_summary,
    state_update,
)
from dtwin.twin import TwinDefinition, TwinRegistry

# ---------------------------------------------------------------- codec

json_scalars = st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.floats(allow_nan=False, allow_infinity=False) | st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20
)
json_values = st.recursive(
    json_scalars,
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=12,
)
messages = st.builds(
    MirrorMessage,
    kind=st.sampled_from(KINDS),
    twin_id=st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30),
    payload=st.dictionaries(st.text(max_size=10), json_values, max_size=5),
    timestamp=st.integers(0, 2**62),
)


@settings(max_examples=500, deadline=None)
@given(messages)
def test_round_trip_property(msg):
    line = encode_message(msg)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert decode_message(line) == msg


def _random_value(rng, depth=0):
    r = rng.random()
    if depth > 2 or r < 0.5:
        return rng.choice([
            None,
            True,
            rng.randint(-(10**12), 10**12),
            rng.uniform(-1e6, 1e6),
            "".join(rng.choice("ab\n\"\\\t é∂ø") for _ in range(rng.randint(0, 8))),
        ])
    if r < 0.75:
        return [_random_value(rng, depth + 1) for _ in range(rng.randint(0, 3))]
    return {f"k{rng.randint(0, 9)}": _random_value(rng, depth + 1) for _ in range(rng.randint(0, 3))}


def test_round_trip_10000_generated_messages():
    rng = random.Random(0)
    for i in range(10_000):
        msg = MirrorMessage(
            rng.choice(KINDS),
            f"def:{rng.randint(0, 99)}/{i}",
            {f"f{j}": _random_value(rng) for j in range(rng.randint(0, 6))},
            rng.randint(0, 2**50),
        )
        assert decode_message(encode_message(msg)) == msg


def test_fuzz_decode_never_crashes():
    rng = random.Random(1)
    seeds = [encode_message(state_update("a:b/1", {"t": 1.5, "h": 2})), b'{"version":1,"kind":"ack"}\n']
    for i in range(100_000):
        if i % 2:
            data = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 40)))
        else:
            data = bytearray(rng.choice(seeds))
            for _ in range(rng.randint(1, 4)):
                pos = rng.randrange(len(data))
                op = rng.random()
                if op < 0.4:
                    data[pos] = rng.getrandbits(8)
                elif op < 0.7:
                    del data[pos]
                else:
                    data.insert(pos, rng.choice(b'{}[]":,0123456789enulltrueNaN\n\\'))
            data = bytes(data)
        try:
            msg = decode_message(data)
        except MalformedMessage:
            continue
        assert msg.kind in KINDS


@pytest.mark.parametrize(
    "line, exc",
    [
        (b'{"version":2,"kind":"ack"}', UnsupportedVersion),
        (b'{"version":2,"kind":"bogus"}', UnsupportedVersion),
        (b'{"version":1,"kind":"bogus"}', UnknownKind),
        (b'{"version":1,"kind":"ack","payload":{"x":NaN}}', MalformedMessage),
        (b'{"version":1,"kind":"ack","payload":[]}', MalformedMessage),
        (b'{"version":true,"kind":"ack"}', MalformedMessage),
        (b"\xff\xfe", MalformedMessage),
        (b"[1]", MalformedMessage),
    ],
)
def test_decode_rejections(line, exc):
    with pytest.raises(exc):
        decode_message(line)


def test_encode_rejects_nan_and_surrogates():
    with pytest.raises(UnserializableValue):
        encode_message(state_update("a", {"t": float("nan")}))
    with pytest.raises(UnserializableValue):
        encode_message(MirrorMessage("ack", "\ud800"))


def test_action_command_validates():
    with pytest.raises(ValueError):
        ActionCommand("a", "reboot")
    m = ActionCommand("a", "shutdown", "r").to_message()
    assert m.kind == "action" and m.payload["action"] == "shutdown"


# ---------------------------------------------------------------- server


@pytest.fixture
def mirror():
    reg = TwinRegistry()
    tid = reg.create_twin(TwinDefinition("t:n", {"serialno": "1"}, ("temperature", "humidity")))
    srv = MirrorServer(reg, None, port=0).start()
    yield reg, tid, srv
    srv.close()


def test_state_update_applied_and_acked(mirror):
    reg, tid, srv = mirror
    with LineClient(port=srv.port) as c:
        r = c.request(state_update(tid, {"temperature": 21.5}))
        assert r.kind == "ack" and r.payload["revision"] == 1
        r = c.request(state_update("t:n/zzz", {"temperature": 1}))
        assert r.kind == "error" and r.payload["error"] == "UnknownTwin"
    assert reg.get_twin(tid).value("temperature") == 21.5


def test_flow_summary_mirrors_only_declared(mirror):
    reg, tid, srv = mirror
    with LineClient(port=srv.port) as c:
        r = c.request(flow_summary(tid, {"humidity": 3.0, "Flow_Duration": 9.0}))
        assert r.kind == "ack"
    assert reg.get_twin(tid).values() == {"temperature": 0.0, "humidity": 3.0}


def test_malformed_lines_get_errors_and_connection_survives(mirror):
    reg, tid, srv = mirror
    with LineClient(port=srv.port) as c:
        c.send_raw(b"garbage\n")
        assert c.read_reply().payload["error"] == "MalformedMessage"
        c.send_raw(b'{"version":9,"kind":"ack"}\n')
        assert c.read_reply().payload["error"] == "UnsupportedVersion"
        c.send_raw(b"x" * (srv.max_line + 10) + b"\n")
        assert c.read_reply().payload["error"] == "MalformedMessage"
        r = c.request(state_update(tid, {"temperature": 1}))
        assert r.kind == "ack"


def test_quarantined_twin_refused(mirror):
    reg, tid, srv = mirror
    reg.quarantine(tid)
    with LineClient(port=srv.port) as c:
        assert c.request(state_update(tid, {"temperature": 1})).payload["error"] == "QuarantinedTwin"
        assert c.request(flow_summary(tid, {"temperature": 1})).payload["error"] == "QuarantinedTwin"


def test_action_round_trip_and_unreachable(mirror):
    reg, tid, srv = mirror
    with pytest.raises(DeviceUnreachable):
        srv.send_action(ActionCommand(tid, "quarantine"))
    got = []
    with LineClient(port=srv.port, on_action=got.append) as c:
        c.request(state_update(tid, {"temperature": 1}))
        reply = srv.send_action(ActionCommand(tid, "quarantine", "test"))
        assert reply is not None and reply.payload["ref"] == "action"
        assert [m.payload["action"] for m in got] == ["quarantine"]
    deadline = time.monotonic() + 2
    while time.monotonic() < deadline:
        try:
            srv.connection_for(tid)
        except DeviceUnreachable:
            break
        time.sleep(0.01)
    with pytest.raises(DeviceUnreachable):
        srv.connection_for(tid)


def test_bind_and_connect_failures(mirror):
    reg, tid, srv = mirror
    with pytest.raises(BindFailure):
        MirrorServer(reg, None, port=srv.port)
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(ConnectFailure):
        LineClient(port=port, timeout=1)


def test_encoded_lines_are_plain_json():
    line = encode_message(state_update("a:b/1", {"t": 1.0}, timestamp=5))
    assert json.loads(line) == {
        "version": 1,
        "kind": "state_update",
        "twin_id": "a:b/1",
        "payload": {"features": {"t": 1.0}},
        "timestamp": 5,
    }
