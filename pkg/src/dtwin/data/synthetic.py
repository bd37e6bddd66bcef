"""Seeded synthetic traces for desk-scale training and simulation.

The per-row samplers are shared with the node and gateway simulators so the
values a simulated device emits come from the same distributions the models
were trained on.

anoml_iot  stationary indoor sensor bands; anomalies are air-dryer style
           excursions (temperature up, humidity down, a little extra noise).
ds2os      service-to-service calls; attacks use unusual operations and
           out-of-range written values.
iotid20    per-flow statistics; attacks have scan-like (tiny, SYN/RST, no
           ACK) or flood-like (high rate, no backward traffic) signatures.

In every scenario a fraction ``HARD_FRACTION`` of the anomalous rows is
drawn from (nearly) the benign distribution: the tail of an air-dryer
window after the readings have recovered, spying/probing reads, and ARP
spoofing flows. Those rows are labelled anomalous but carry no usable
signal, which bounds recall below 1 the way labelled real traces do.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidRate
from .records import Record
from .schemas import IOTID20_FEATURES, get_schema

SCENARIOS = ("anoml_iot", "ds2os", "iotid20")
HARD_FRACTION = 0.1
BASE_TIMESTAMP_MS = 1_600_000_000_000

SENSOR_BANDS = {
    # mean, std
    "temperature": (22.0, 0.8),
    "humidity": (45.0, 2.5),
    "light": (400.0, 40.0),
    "loudness": (45.0, 6.0),
}


def sample_sensor(rng, anomalous=False, intensity=None):
    v = {k: rng.normal(mu, sd) for k, (mu, sd) in SENSOR_BANDS.items()}
    if anomalous:
        if intensity is None:
            intensity = rng.uniform(0.25, 1.0)
        v["temperature"] += 18.0 * intensity
        v["humidity"] -= 28.0 * intensity
        v["loudness"] += 12.0 * intensity
    v["humidity"] = min(100.0, max(0.0, v["humidity"]))
    v["light"] = max(0.0, v["light"])
    return {k: round(float(x), 2) for k, x in v.items()}


DS2OS_TYPES = (
    "/thermostat",
    "/lightControler",
    "/doorLock",
    "/movementSensor",
    "/washingService",
    "/batteryService",
    "/smartPhone",
    "/sensorService",
)
DS2OS_LOCATIONS = ("BedroomParents", "BedroomChildren", "Kitchen", "Garage", "Dinningroom", "Bathroom")
BENIGN_OPS = ("read", "write", "subscribe")
ATTACK_OPS = ("lockSubtree", "unlockSubtree", "registerService", "write")
DS2OS_ATTACK_NAMES = (
    "DoSattack",
    "scan",
    "malitiousControl",
    "malitiousOperation",
    "spying",
    "dataProbing",
    "wrongSetUp",
)


def sample_service_call(rng, attack=None):
    src = int(rng.integers(len(DS2OS_TYPES)))
    dst = int(rng.integers(len(DS2OS_TYPES)))
    agent = int(rng.integers(1, 5))
    src_type = DS2OS_TYPES[src]
    dst_type = DS2OS_TYPES[dst]
    if attack is None:
        op = BENIGN_OPS[int(rng.choice(3, p=(0.7, 0.2, 0.1)))]
        value = rng.uniform(0.0, 30.0)
    else:
        op = ATTACK_OPS[int(rng.integers(len(ATTACK_OPS)))]
        value = rng.uniform(45.0, 100.0)
    name = src_type.strip("/").lower()
    return {
        "sourceID": f"{name}{agent}",
        "sourceAddress": f"/agent{agent}/{name}{agent}",
        "sourceType": src_type,
        "sourceLocation": DS2OS_LOCATIONS[int(rng.integers(len(DS2OS_LOCATIONS)))],
        "destinationServiceAddress": f"/agent{agent}/{dst_type.strip('/').lower()}",
        "destinationServiceType": dst_type,
        "destinationLocation": DS2OS_LOCATIONS[int(rng.integers(len(DS2OS_LOCATIONS)))],
        "accessedNodeAddress": f"/agent{agent}/{dst_type.strip('/').lower()}/value",
        "accessedNodeType": "/derivedValue" if op == "read" else "/basic/number",
        "operation": op,
        "value": round(float(value), 3),
    }


FLOW_FEATURES = tuple(name for name, _ in IOTID20_FEATURES)
FLOW_ATTACKS = ("Scan", "DoS", "Mirai")


def sample_flow(rng, attack=None):
    """One flow-summary row with the 20 pinned IoTID20 features."""
    if attack is None:
        dur = rng.uniform(2e4, 5e6)
        fwd = int(rng.integers(4, 40))
        bwd = int(rng.integers(3, 40))
        fmin, fmax = rng.uniform(40, 80), rng.uniform(300, 1400)
        bmin, bmax = rng.uniform(40, 80), rng.uniform(300, 1400)
        syn, rst, ack = int(rng.integers(0, 2)), 0, int(rng.integers(1, 4))
    elif attack == "Scan":
        dur = rng.uniform(20, 800)
        fwd = int(rng.integers(1, 3))
        bwd = int(rng.integers(0, 2))
        fmin, fmax = 0.0, rng.uniform(0, 60)
        bmin, bmax = 0.0, rng.uniform(0, 20)
        syn, rst, ack = 1, 1, 0
    else:
        # DoS / Mirai floods
        dur = rng.uniform(500, 2e4)
        fwd = int(rng.integers(60, 400))
        bwd = 0
        fmin, fmax = rng.uniform(0, 60), rng.uniform(60, 600)
        bmin, bmax = 0.0, 0.0
        syn, rst, ack = int(rng.integers(5, 60)), int(rng.integers(0, 2)), 0
    fmean = (fmin + fmax) / 2
    bmean = (bmin + bmax) / 2 if bwd else 0.0
    fbytes = fwd * fmean
    bbytes = bwd * bmean
    secs = dur / 1e6
    npk = fwd + bwd
    iat_mean = dur / max(1, npk - 1)
    iat_std = iat_mean * rng.uniform(0.1, 1.0)
    row = {
        "Flow_Duration": dur,
        "Tot_Fwd_Pkts": fwd,
        "Tot_Bwd_Pkts": bwd,
        "TotLen_Fwd_Pkts": fbytes,
        "TotLen_Bwd_Pkts": bbytes,
        "Fwd_Pkt_Len_Max": fmax,
        "Fwd_Pkt_Len_Min": fmin,
        "Fwd_Pkt_Len_Mean": fmean,
        "Bwd_Pkt_Len_Max": bmax if bwd else 0.0,
        "Bwd_Pkt_Len_Min": bmin if bwd else 0.0,
        "Bwd_Pkt_Len_Mean": bmean,
        "Flow_Byts/s": (fbytes + bbytes) / secs,
        "Flow_Pkts/s": npk / secs,
        "Flow_IAT_Mean": iat_mean,
        "Flow_IAT_Std": iat_std,
        "Flow_IAT_Max": iat_mean + iat_std,
        "Flow_IAT_Min": max(0.0, iat_mean - iat_std),
        "SYN_Flag_Cnt": syn,
        "RST_Flag_Cnt": rst,
        "ACK_Flag_Cnt": ack,
    }
    return {k: round(float(v), 3) for k, v in row.items()}


def anomaly_positions(n, anomaly_rate, rng):
    if not 0.0 <= anomaly_rate <= 1.0 or math.isnan(anomaly_rate):
        raise InvalidRate(f"anomaly_rate must lie in [0, 1], got {anomaly_rate}")
    k = int(math.floor(n * anomaly_rate + 0.5))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def generate_synthetic(scenario: str, n: int, anomaly_rate: float, seed: int):
    """``n`` records of which exactly ``round(n * anomaly_rate)`` are anomalous."""
    if n < 1:
        raise ValueError("n must be >= 1")
    schema = get_schema(scenario)
    rng = np.random.default_rng(seed)
    mask = anomaly_positions(n, anomaly_rate, rng)
    out = []
    for i in range(n):
        ts = BASE_TIMESTAMP_MS + 1000 * i
        bad = bool(mask[i])
        hard = bad and rng.random() < HARD_FRACTION
        sublabel = None
        if scenario == "anoml_iot":
            intensity = rng.uniform(0.0, 0.05) if hard else None
            values = {"timestamp": str(ts), **sample_sensor(rng, bad, intensity)}
            sublabel = "air_dryer" if bad else None
        elif scenario == "ds2os":
            if hard:
                attack = ("spying", "dataProbing")[int(rng.integers(2))]
                values = {**sample_service_call(rng, None), "timestamp": str(ts)}
            else:
                attack = DS2OS_ATTACK_NAMES[int(rng.integers(len(DS2OS_ATTACK_NAMES)))] if bad else None
                values = {**sample_service_call(rng, attack), "timestamp": str(ts)}
            sublabel = attack
        else:
            if hard:
                attack = "MITM ARP Spoofing"
                values = {"Timestamp": str(ts), **sample_flow(rng, None)}
            else:
                attack = FLOW_ATTACKS[int(rng.integers(len(FLOW_ATTACKS)))] if bad else None
                values = {"Timestamp": str(ts), **sample_flow(rng, attack)}
            sublabel = attack
        out.append(Record(schema.name, values, int(bad), sublabel, f"{scenario}-{seed}-{i}"))
    return out
