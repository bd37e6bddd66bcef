import numpy as np
import pytest

from dtwin.detection import DATA_ANOMALY, NETWORK_INTRUSION, FogStack
from dtwin.protocol import MirrorServer
from dtwin.sim import (
    NodeProfile,
    node_values,
    run_gateway_sim,
    run_node_sim,
    run_scenario,
    sensor_twin_definition,
)
from dtwin.twin import TwinRegistry


def profile(i, **kw):
    return NodeProfile(sensor_twin_definition(str(i)), seed=i, **kw)


@pytest.fixture
def mirror():
    reg = TwinRegistry()
    srv = MirrorServer(reg, None, port=0).start()
    yield reg, srv
    srv.close()


def test_benign_node_emits_each_period(mirror):
    reg, srv = mirror
    p = profile(1)
    reg.create_twin(p.twin)
    s = run_node_sim(p, port=srv.port, duration_s=10, time_scale=50)
    assert s.sent >= 9 and s.applied == s.sent and s.refused == 0
    assert [t for t, _ in s.emitted] == [float(k) for k in range(s.sent)]
    assert reg.get_twin(p.twin_id).revision == 4 * s.sent


def test_node_values_deterministic():
    p = profile(3, behavior="data_anomalous", onset_s=5)
    assert node_values(p, 10) == node_values(p, 10)
    assert node_values(p, 10) != node_values(profile(4, behavior="data_anomalous", onset_s=5), 10)
    assert [p.data_anomalous(t) for t, _ in node_values(p, 10)] == [False] * 5 + [True] * 5


def test_emitted_values_match_profile(mirror):
    reg, srv = mirror
    p = profile(2, behavior="data_anomalous", onset_s=3, duration_s=2)
    reg.create_twin(p.twin)
    s = run_node_sim(p, port=srv.port, duration_s=8, time_scale=50)
    assert s.emitted == node_values(p, 8)


def test_profile_validation():
    with pytest.raises(ValueError):
        profile(1, period_s=0)
    with pytest.raises(ValueError):
        profile(1, behavior="sneaky")


def test_gateway_window_counts(mirror):
    reg, srv = mirror
    ps = [profile(i) for i in range(3)]
    for p in ps:
        reg.create_twin(p.twin)
    g = run_gateway_sim(ps, port=srv.port, duration_s=35, time_scale=100)
    assert g.windows == 3 and g.sent == {p.twin_id: 3 for p in ps}
    assert run_gateway_sim([], port=srv.port, duration_s=35, time_scale=100).windows == 0


def test_intrusive_node_alone_gets_positive_flows(iotid20_rf_job):
    ps = [profile(0), profile(1, behavior="intrusive"), profile(2)]
    with FogStack(push_port=0, policy={}) as fog:
        fog.service.swap_model(NETWORK_INTRUSION, iotid20_rf_job.model)
        for p in ps:
            fog.registry.create_twin(p.twin)
        g = run_gateway_sim(ps, port=fog.mirror.port, duration_s=30, time_scale=100, seed=1)
        assert fog.service.wait_idle()
        flows = [v for v in fog.service.verdicts if v.model_kind == NETWORK_INTRUSION]
    assert len(flows) == 9
    by_twin = {}
    for v in flows:
        by_twin.setdefault(v.twin_id, []).append(v.label)
    assert by_twin == {ps[0].twin_id: [0] * 3, ps[1].twin_id: [1] * 3, ps[2].twin_id: [0] * 3}
    assert all(a is not None for _, tid, a, _ in g.emitted if tid == ps[1].twin_id)


def test_scenario_quarantine_keeps_node_sending(anoml_mlp_job):
    ps = [profile(0), profile(1, behavior="data_anomalous", onset_s=3)]
    with FogStack(push_port=0) as fog:
        fog.service.swap_model(DATA_ANOMALY, anoml_mlp_job.model)
        for p in ps:
            fog.registry.create_twin(p.twin)
        nodes, gw = run_scenario(ps, port=fog.mirror.port, duration_s=10, time_scale=20, gateway=False)
    assert gw is None
    good, bad = nodes
    assert good.actions == [] and good.refused == 0
    assert [a for _, a in bad.actions] == ["quarantine"]
    assert bad.sent == 10 and bad.refused >= 1 and bad.applied + bad.refused == bad.sent


def test_shutdown_stops_node(anoml_mlp_job):
    p = profile(5, behavior="data_anomalous")
    with FogStack(push_port=0, policy={"compromised": "shutdown"}) as fog:
        fog.service.swap_model(DATA_ANOMALY, anoml_mlp_job.model)
        fog.registry.create_twin(p.twin)
        s = run_node_sim(p, port=fog.mirror.port, duration_s=10, time_scale=20)
    assert s.mode == "shutdown" and s.sent < 10
    assert np.isfinite([v for _, vals in s.emitted for v in vals.values()]).all()
