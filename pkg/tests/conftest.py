import json

import pytest

from dtwin.bench import desk_hyperparams
from dtwin.cloud import train_on_records
from dtwin.data.synthetic import generate_synthetic

SENSOR_CONFIG = {
    "definition": "lab:arduino:1.0",
    "attributes": {"manufacturer": "Arduino", "location": "bench 3", "serialno": "1", "model": "Uno"},
    "features": {
        "temperature": {"properties": {"value": 0.0}},
        "humidity": {"properties": {"value": 0.0}},
        "light": {"properties": {"value": 0.0}},
        "loudness": {"properties": {"value": 0.0}},
    },
}


@pytest.fixture
def sensor_config_text():
    return json.dumps(SENSOR_CONFIG)


_JOBS = {}


def trained_job(dataset, classifier, seed=0, n=2000):
    """Session-cached training job on synthetic data."""
    key = (dataset, classifier, seed, n)
    if key not in _JOBS:
        recs = generate_synthetic(dataset, n, 0.1, seed)
        _JOBS[key] = train_on_records(recs, desk_hyperparams(classifier, seed), split_seed=seed)
    return _JOBS[key]


@pytest.fixture(scope="session")
def anoml_mlp_job():
    return trained_job("anoml_iot", "mlp")


@pytest.fixture(scope="session")
def anoml_rf_job():
    return trained_job("anoml_iot", "rf")


@pytest.fixture(scope="session")
def iotid20_rf_job():
    return trained_job("iotid20", "rf")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # lets fixtures see the call outcome during teardown
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)
