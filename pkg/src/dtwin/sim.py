"""Software stand-ins for the sensor node and the IoT gateway.

A node polls its four sensors every ``period_s`` and mirrors them to its
twin with ``state_update``. The gateway closes a flow window every
``window_s`` and sends one ``flow_summary`` per node. Both run on simulated
time: ``time_scale`` > 1 compresses wall-clock waits (a 60 s scenario with
``time_scale=20`` takes 3 s) without changing what is emitted. Emitted
values depend only on the profile seed.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data.synthetic import FLOW_ATTACKS, SENSOR_BANDS, sample_flow, sample_sensor
from .errors import ConnectFailure
from .protocol import MIRROR_PORT, LineClient, flow_summary, state_update
from .twin import TwinDefinition

log = logging.getLogger(__name__)

BEHAVIORS = ("benign", "data_anomalous", "intrusive", "mixed")
SENSOR_FEATURES = tuple(SENSOR_BANDS)
GATEWAY_WINDOW_S = 10.0


def sensor_twin_definition(serialno: str, definition_id="arduino:sensor-node") -> TwinDefinition:
    return TwinDefinition(
        definition_id,
        {"serialno": serialno},
        SENSOR_FEATURES,
        {k: mu for k, (mu, _) in SENSOR_BANDS.items()},
    )


@dataclass(frozen=True)
class NodeProfile:
    twin: TwinDefinition
    period_s: float = 1.0
    behavior: str = "benign"
    onset_s: float = 0.0
    duration_s: float | None = None  # None: anomalous until the run ends
    seed: int = 0

    def __post_init__(self):
        if not self.period_s > 0:
            raise ValueError("period_s must be > 0")
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {BEHAVIORS}")

    @property
    def twin_id(self):
        serial = self.twin.serialno
        if serial is None:
            raise ValueError("simulated nodes need a serialno attribute to address their twin")
        return f"{self.twin.definition_id}/{serial}"

    def active(self, t) -> bool:
        """Whether the profile's misbehaviour is on at simulated time ``t``."""
        if self.behavior == "benign" or t < self.onset_s:
            return False
        return self.duration_s is None or t < self.onset_s + self.duration_s

    def data_anomalous(self, t):
        return self.behavior in ("data_anomalous", "mixed") and self.active(t)

    def intrusive(self, t):
        return self.behavior in ("intrusive", "mixed") and self.active(t)


@dataclass
class NodeRunSummary:
    twin_id: str
    sent: int = 0
    applied: int = 0
    refused: int = 0
    mode: str = "running"  # running | quarantine | shutdown
    emitted: list = field(default_factory=list)  # (sim time, values)
    actions: list = field(default_factory=list)  # (sim time, action)
    errors: dict = field(default_factory=dict)


class _SimClock:
    def __init__(self, time_scale):
        if not time_scale > 0:
            raise ValueError("time_scale must be > 0")
        self.scale = time_scale
        self.t0 = time.monotonic()

    def now(self):
        return (time.monotonic() - self.t0) * self.scale

    def sleep_until(self, t_sim, stop=None):
        delay = t_sim / self.scale - (time.monotonic() - self.t0)
        if delay > 0:
            if stop is not None:
                stop.wait(delay)
            else:
                time.sleep(delay)


def node_values(profile: NodeProfile, n):
    """The first ``n`` emissions of a profile: deterministic under its seed."""
    rng = np.random.default_rng(profile.seed)
    return [(k * profile.period_s, sample_sensor(rng, profile.data_anomalous(k * profile.period_s))) for k in range(n)]


def run_node_sim(profile: NodeProfile, host="127.0.0.1", port=MIRROR_PORT, *, duration_s=10.0,
                 time_scale=1.0, stop=None) -> NodeRunSummary:
    """Emit ``floor(duration_s / period_s)`` updates, one per period from t=0.

    A received ``quarantine`` keeps the node sending (each send is refused
    by the fog and counted); ``shutdown`` stops it.
    """
    summary = NodeRunSummary(profile.twin_id)
    clock = _SimClock(time_scale)

    def on_action(msg):
        action = msg.payload.get("action")
        summary.actions.append((clock.now(), action))
        summary.mode = action

    client = LineClient(host, port, on_action=on_action)
    n = int(math.floor(duration_s / profile.period_s + 1e-9))
    rng = np.random.default_rng(profile.seed)
    try:
        for k in range(n):
            t = k * profile.period_s
            clock.sleep_until(t, stop)
            if (stop is not None and stop.is_set()) or summary.mode == "shutdown":
                break
            values = sample_sensor(rng, profile.data_anomalous(t))
            summary.emitted.append((t, values))
            reply = client.request(state_update(profile.twin_id, values))
            summary.sent += 1
            if reply.kind == "ack":
                summary.applied += 1
            else:
                err = reply.payload.get("error", "error")
                summary.errors[err] = summary.errors.get(err, 0) + 1
                if err == "QuarantinedTwin":
                    summary.refused += 1
    finally:
        client.close()
    return summary


@dataclass
class GatewayRunSummary:
    windows: int = 0
    sent: dict = field(default_factory=dict)  # twin_id -> count
    refused: dict = field(default_factory=dict)
    emitted: list = field(default_factory=list)  # (sim time, twin_id, attack or None, features)


def run_gateway_sim(profiles, host="127.0.0.1", port=MIRROR_PORT, *, duration_s=35.0,
                    window_s=GATEWAY_WINDOW_S, time_scale=1.0, seed=0, stop=None) -> GatewayRunSummary:
    """One flow summary per node at the end of every complete window."""
    profiles = list(profiles)
    summary = GatewayRunSummary()
    n_windows = int(math.floor(duration_s / window_s + 1e-9))
    if not profiles or n_windows == 0:
        return summary
    clock = _SimClock(time_scale)
    rngs = [np.random.default_rng([seed, p.seed]) for p in profiles]
    client = LineClient(host, port)
    try:
        for w in range(1, n_windows + 1):
            t = w * window_s
            clock.sleep_until(t, stop)
            if stop is not None and stop.is_set():
                break
            for p, rng in zip(profiles, rngs):
                # the window [t - window_s, t) counts as intrusive if it was at its start
                attack = FLOW_ATTACKS[int(rng.integers(len(FLOW_ATTACKS)))] if p.intrusive(t - window_s) else None
                feats = sample_flow(rng, attack)
                summary.emitted.append((t, p.twin_id, attack, feats))
                reply = client.request(flow_summary(p.twin_id, feats))
                summary.sent[p.twin_id] = summary.sent.get(p.twin_id, 0) + 1
                if reply.kind == "error" and reply.payload.get("error") == "QuarantinedTwin":
                    summary.refused[p.twin_id] = summary.refused.get(p.twin_id, 0) + 1
            summary.windows += 1
    finally:
        client.close()
    return summary


def run_scenario(profiles, host="127.0.0.1", port=MIRROR_PORT, *, duration_s=60.0, time_scale=1.0,
                 gateway=True, window_s=GATEWAY_WINDOW_S, seed=0):
    """Run every node and (optionally) the gateway concurrently.

    Returns ``(node summaries in profile order, gateway summary or None)``.
    """
    profiles = list(profiles)
    results = [None] * len(profiles)
    failures = []
    gw = [None]
    stop = threading.Event()

    def node(i, p):
        try:
            results[i] = run_node_sim(p, host, port, duration_s=duration_s, time_scale=time_scale, stop=stop)
        except Exception as exc:
            failures.append(exc)
            stop.set()

    def gateway_run():
        try:
            gw[0] = run_gateway_sim(profiles, host, port, duration_s=duration_s, window_s=window_s,
                                    time_scale=time_scale, seed=seed, stop=stop)
        except Exception as exc:
            failures.append(exc)
            stop.set()

    threads = [threading.Thread(target=node, args=(i, p), daemon=True) for i, p in enumerate(profiles)]
    if gateway:
        threads.append(threading.Thread(target=gateway_run, daemon=True))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        exc = failures[0]
        if isinstance(exc, ConnectFailure):
            raise exc
        raise ConnectFailure(f"simulation failed: {exc}") from exc
    return results, gw[0]
