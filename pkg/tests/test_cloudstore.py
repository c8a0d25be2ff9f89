import json
import os
import stat
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from conftest import FAST_SCRYPT
from ecgscan.analysis import analyze
from ecgscan.cloudstore import (CredentialStore, ServerConfig, TraceClient, TraceRecord, TraceServer,
                                TraceService, compute_analysis, deserialize_trace, serialize_trace,
                                with_analysis)
from ecgscan.cloudstore.auth import SessionManager, parse_bearer
from ecgscan.cloudstore.client import load_token, save_token
from ecgscan.cloudstore.records import canonical_json, record_from_dict
from ecgscan.errors import (InputError, InvalidCredentials, NotFound, SchemaError, Unauthorized,
                            ValidationError)
from ecgscan.evaluation import WaveformParams, synthesize_ecg
from ecgscan.extraction import CalibratedSignal


class Clock:
    def __init__(self):
        self.now = datetime(2026, 1, 1, tzinfo=timezone.utc)

    def __call__(self):
        self.now += timedelta(milliseconds=1)
        return self.now


def make_record(seed=0, duration=10.0, patient="p1"):
    sig, _ = synthesize_ecg(WaveformParams(duration_s=duration), 250.0, seed)
    return TraceRecord(patient_ref=patient, lead_label="II", signal=sig)


@pytest.fixture
def service(tmp_path):
    cfg = ServerConfig(port=0, data_dir=str(tmp_path / "data"))
    svc = TraceService(cfg, clock=Clock(), scrypt_params=FAST_SCRYPT)
    svc.credentials.add_user("alice", "pw-alice")
    return svc


@pytest.fixture
def server(service):
    srv = TraceServer(service, "127.0.0.1", 0)
    srv.start_background()
    yield srv
    srv.stop()


# -- records -----------------------------------------------------------------

def test_serialize_round_trip_and_canonical():
    rec = with_analysis(make_record())
    data = serialize_trace(rec)
    assert b"\n" not in data and b" " not in data
    back = deserialize_trace(data)
    assert serialize_trace(back) == data
    obj = json.loads(data)
    shuffled = json.dumps(dict(reversed(list(obj.items()))), indent=3).encode()
    assert serialize_trace(deserialize_trace(shuffled)) == data


def test_deserialize_schema_errors():
    obj = json.loads(serialize_trace(make_record()))
    broken = json.loads(json.dumps(obj))
    del broken["signal"]["samples_mV"]
    with pytest.raises(SchemaError):
        deserialize_trace(json.dumps(broken))
    with pytest.raises(SchemaError):
        deserialize_trace(json.dumps(dict(obj, schema_version=99)))
    with pytest.raises(SchemaError):
        deserialize_trace(b"\xff")
    bad_period = json.loads(json.dumps(obj))
    bad_period["signal"]["sample_period_s"] = 0
    with pytest.raises(ValidationError):
        record_from_dict(bad_period)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=50),
       st.floats(0.001, 0.02), st.text(max_size=10), st.text(max_size=5))
def test_canonical_bijection(samples, period, patient, lead):
    rec = TraceRecord(patient, lead, CalibratedSignal(samples, period))
    data = serialize_trace(rec)
    assert serialize_trace(deserialize_trace(data)) == data
    assert deserialize_trace(data).signal == rec.signal


def test_record_size_30s_250hz():
    rec = with_analysis(make_record(duration=30.0))
    assert len(rec.signal.samples) == 7500
    assert len(serialize_trace(rec)) < 64 * 1024


def test_compute_analysis_never_raises():
    flat = CalibratedSignal(np.zeros(2500), 0.004)
    assert compute_analysis(flat).heart_rate_bpm is None
    short = CalibratedSignal(np.zeros(100), 0.004)
    assert len(compute_analysis(short).r_peaks) == 0


# -- auth --------------------------------------------------------------------

def test_credentials_hashed_and_private(tmp_path):
    store = CredentialStore(str(tmp_path / "creds.json"), FAST_SCRYPT)
    store.add_user("bob", "hunter2")
    text = (tmp_path / "creds.json").read_text()
    assert "hunter2" not in text
    assert stat.S_IMODE(os.stat(tmp_path / "creds.json").st_mode) == 0o600
    store.verify("bob", "hunter2")
    stored_hash = json.loads(text)["users"]["bob"]["hash"]
    for user, pw in (("bob", "wrong"), ("nobody", "hunter2"), ("bob", stored_hash)):
        with pytest.raises(InvalidCredentials):
            store.verify(user, pw)
    with pytest.raises(InputError):
        store.add_user("", "x")


def test_sessions_issue_check_expire(tmp_path):
    clock = Clock()
    mgr = SessionManager(str(tmp_path), timedelta(hours=1), clock)
    tok = mgr.issue("alice")
    assert len(tok.token) == 22
    assert tok.expires_at - clock.now <= timedelta(hours=1)
    assert mgr.check(tok.token) == "alice"
    # persisted as hashes only
    assert tok.token not in (tmp_path / "sessions.json").read_text()
    assert SessionManager(str(tmp_path), timedelta(hours=1), clock).check(tok.token) == "alice"
    clock.now += timedelta(hours=2)
    with pytest.raises(Unauthorized):
        mgr.check(tok.token)
    for bad in (None, "", "nope"):
        with pytest.raises(Unauthorized):
            mgr.check(bad)


def test_tokens_unique(service):
    tokens = {service.authenticate("alice", "pw-alice").token for _ in range(100)}
    assert len(tokens) == 100


def test_parse_bearer():
    assert parse_bearer("Bearer abc") == "abc"
    assert parse_bearer("bearer  abc ") == "abc"
    assert parse_bearer("Basic abc") is None
    assert parse_bearer(None) is None


# -- service (in process) ----------------------------------------------------

def test_service_store_list_fetch(service):
    tok = service.authenticate("alice", "pw-alice").token
    assert service.list_traces(tok) == []
    ids = [service.store_trace(tok, json.loads(serialize_trace(make_record(s, patient=f"p{s}"))))
           for s in range(3)]
    assert ids == ["00000001", "00000002", "00000003"]
    assert [r["id"] for r in service.list_traces(tok, "p1")] == ["00000002"]
    assert [r["id"] for r in service.list_traces(tok)] == ids[::-1]
    with pytest.raises(NotFound):
        service.fetch_trace(tok, "00000099")
    with pytest.raises(ValidationError):
        service.store_trace(tok, dict(json.loads(serialize_trace(make_record())), id="00000005"))


def test_server_side_analysis_matches_client(service):
    tok = service.authenticate("alice", "pw-alice").token
    rec = make_record(4)
    rid = service.store_trace(tok, json.loads(serialize_trace(rec)))
    stored = deserialize_trace(service.fetch_trace(tok, rid))
    assert canonical_json(stored.analysis.to_dict()) == canonical_json(analyze(rec.signal).to_dict())


def test_hundred_records_in_order(service):
    tok = service.authenticate("alice", "pw-alice").token
    body = json.loads(serialize_trace(TraceRecord("p", "II", CalibratedSignal(np.zeros(10), 0.004))))
    ids = [service.store_trace(tok, body) for _ in range(100)]
    listed = service.list_traces(tok)
    assert [r["id"] for r in listed] == ids[::-1]
    stamps = [r["created_at"] for r in listed]
    assert stamps == sorted(stamps, reverse=True)


def test_ids_not_reused_after_file_loss(tmp_path, service):
    tok = service.authenticate("alice", "pw-alice").token
    body = json.loads(serialize_trace(make_record()))
    first = service.store_trace(tok, body)
    os.remove(os.path.join(service.config.data_dir, "records", f"{first}.json"))
    again = TraceService(service.config, scrypt_params=FAST_SCRYPT)
    tok2 = again.authenticate("alice", "pw-alice").token
    assert again.store_trace(tok2, body) == "00000002"


# -- over HTTP ---------------------------------------------------------------

def test_http_round_trip(server):
    client = TraceClient(server.url)
    assert client.health() == {"status": "ok"}
    with pytest.raises(InvalidCredentials):
        client.login("alice", "nope")
    body = client.login("alice", "pw-alice")
    assert set(body) == {"token", "expires_at"}
    rec = make_record()
    rid = client.upload(rec)
    fetched = client.fetch_bytes(rid)
    local = with_analysis(rec)
    assert json.loads(fetched)["signal"] == json.loads(serialize_trace(local))["signal"]
    assert client.fetch(rid).id == rid
    assert client.list("p1")[0]["id"] == rid
    assert client.list("other") == []
    with pytest.raises(NotFound):
        client.fetch_bytes("00000042")


def test_http_requires_token(server):
    url = server.url
    payload = serialize_trace(make_record())
    calls = [("GET", "/api/traces"), ("GET", "/api/traces/00000001"), ("POST", "/api/traces")]
    for method, path in calls:
        for headers in ({}, {"Authorization": "Bearer not-a-token"}, {"Authorization": "Basic eA=="}):
            r = requests.request(method, url + path, data=payload if method == "POST" else None,
                                 headers=headers, timeout=5)
            assert r.status_code == 401, (method, path, headers)
    assert not os.listdir(os.path.join(server.service.config.data_dir, "records"))


def test_http_bad_bodies(server):
    r = requests.post(server.url + "/api/login", data=b"{}", timeout=5)
    assert r.status_code == 400
    r = requests.post(server.url + "/api/login", data=b"nope", timeout=5)
    assert r.status_code == 422
    tok = TraceClient(server.url).login("alice", "pw-alice")["token"]
    h = {"Authorization": f"Bearer {tok}"}
    assert requests.post(server.url + "/api/traces", data=b"[1]", headers=h, timeout=5).status_code == 422
    assert requests.get(server.url + "/api/nothing", timeout=5).status_code == 404


def test_client_network_error():
    from ecgscan.errors import NetworkError
    with pytest.raises(NetworkError):
        TraceClient("http://127.0.0.1:9", timeout=1).health()


def test_token_cache_permissions(tmp_path):
    path = tmp_path / "sub" / "token.json"
    save_token(str(path), "http://x", "alice", "tok", "2026-01-01T00:00:00.000000Z")
    assert stat.S_IMODE(os.stat(path).st_mode) == 0o600
    assert load_token(str(path))["token"] == "tok"
    assert load_token(str(tmp_path / "missing.json")) is None


def test_server_config_from_env():
    env = {"EHEALTH_PORT": "9999", "EHEALTH_DATA_DIR": "/tmp/x", "EHEALTH_TOKEN_TTL_HOURS": "2",
           "EHEALTH_CREDENTIALS": "/tmp/c.json"}
    cfg = ServerConfig.from_env(env)
    assert (cfg.port, cfg.data_dir, cfg.token_ttl_hours, cfg.credentials) == (9999, "/tmp/x", 2.0, "/tmp/c.json")
    assert ServerConfig.from_env(env, port=1).port == 1
    assert ServerConfig.from_env({}).credentials == os.path.join("ehealth-data", "credentials.json")
    with pytest.raises(InputError):
        ServerConfig.from_env({"EHEALTH_PORT": "x"})
