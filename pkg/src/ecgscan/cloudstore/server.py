"""HTTP/JSON trace service.

Endpoints::

    POST /api/login            {username, password} -> {token, expires_at}
    POST /api/traces           record without id    -> 201 {id}
    GET  /api/traces[?patient_ref=X]                -> {summaries: [...]}
    GET  /api/traces/<id>                           -> canonical record bytes
    GET  /api/health                                -> {status: "ok"}
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import timedelta
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from ..errors import AuthError, InputError, NotFound, SchemaError, ValidationError
from .auth import CredentialStore, SessionManager, parse_bearer
from .records import canonical_json, record_from_dict, utc_now
from .store import TraceStore

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 16 * 1024 * 1024


@dataclass
class ServerConfig:
    port: int = 8080
    host: str = "127.0.0.1"
    data_dir: str = "ehealth-data"
    token_ttl_hours: float = 24.0
    credentials_path: str | None = None

    @property
    def credentials(self):
        return self.credentials_path or os.path.join(self.data_dir, "credentials.json")

    @classmethod
    def from_env(cls, environ=None, **overrides):
        env = os.environ if environ is None else environ
        cfg = cls()
        try:
            if "EHEALTH_PORT" in env:
                cfg.port = int(env["EHEALTH_PORT"])
            if "EHEALTH_TOKEN_TTL_HOURS" in env:
                cfg.token_ttl_hours = float(env["EHEALTH_TOKEN_TTL_HOURS"])
        except ValueError as exc:
            raise InputError(f"bad service environment variable: {exc}") from exc
        cfg.data_dir = env.get("EHEALTH_DATA_DIR", cfg.data_dir)
        cfg.credentials_path = env.get("EHEALTH_CREDENTIALS", cfg.credentials_path)
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg


class TraceService:
    """Authentication, storage and retrieval, independent of transport."""

    def __init__(self, config, clock=utc_now, scrypt_params=None):
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        self.credentials = CredentialStore(config.credentials, scrypt_params)
        self.sessions = SessionManager(config.data_dir, timedelta(hours=config.token_ttl_hours), clock)
        self.store = TraceStore(config.data_dir, clock)

    def authenticate(self, username, password):
        self.credentials.verify(username, password)
        return self.sessions.issue(username)

    def store_trace(self, token, record_obj):
        self.sessions.check(token)
        if isinstance(record_obj, dict) and record_obj.get("id") is not None:
            raise ValidationError("uploaded records must not carry an id")
        record = record_from_dict(record_obj)
        stored, _ = self.store.store(record)
        return stored.id

    def list_traces(self, token, patient_ref=None):
        self.sessions.check(token)
        return self.store.list(patient_ref)

    def fetch_trace(self, token, record_id):
        self.sessions.check(token)
        return self.store.fetch_bytes(record_id)


class _Handler(BaseHTTPRequestHandler):
    server_version = "ecgscan-traces/1"
    protocol_version = "HTTP/1.1"

    @property
    def service(self):
        return self.server.service

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status, body, content_type="application/json"):
        if not isinstance(body, bytes):
            body = canonical_json(body)
        self.send_response(status)
        self.send_header("Content-Type", f"{content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        # a rejected request may leave its body unread, so never reuse the connection
        self.send_header("Connection", "close")
        self.close_connection = True
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status, message):
        self._send(status, {"error": message})

    def _read_json(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise ValidationError("request body too large")
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"request body is not valid JSON: {exc}") from exc

    def _token(self):
        return parse_bearer(self.headers.get("Authorization"))

    def _dispatch(self, method):
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if method == "GET" and parts == ["api", "health"]:
                return self._send(HTTPStatus.OK, {"status": "ok"})
            if method == "POST" and parts == ["api", "login"]:
                body = self._read_json()
                if not isinstance(body, dict) or not isinstance(body.get("username"), str) \
                        or not isinstance(body.get("password"), str):
                    return self._error(HTTPStatus.BAD_REQUEST, "username and password required")
                session = self.service.authenticate(body["username"], body["password"])
                return self._send(HTTPStatus.OK, session.to_dict())
            if parts[:2] == ["api", "traces"] and len(parts) <= 3:
                # check the token before reading the body or touching storage
                token = self._token()
                self.service.sessions.check(token)
                if method == "POST" and len(parts) == 2:
                    record_id = self.service.store_trace(token, self._read_json())
                    return self._send(HTTPStatus.CREATED, {"id": record_id})
                if method == "GET" and len(parts) == 2:
                    patient = parse_qs(url.query).get("patient_ref", [None])[0]
                    return self._send(HTTPStatus.OK, {"summaries": self.service.list_traces(token, patient)})
                if method == "GET" and len(parts) == 3:
                    return self._send(HTTPStatus.OK, self.service.fetch_trace(token, parts[2]))
                return self._error(HTTPStatus.METHOD_NOT_ALLOWED, "method not allowed")
            return self._error(HTTPStatus.NOT_FOUND, "no such endpoint")
        except AuthError as exc:
            return self._error(HTTPStatus.UNAUTHORIZED, str(exc))
        except NotFound as exc:
            return self._error(HTTPStatus.NOT_FOUND, str(exc))
        except InputError as exc:
            return self._error(HTTPStatus.UNPROCESSABLE_ENTITY, str(exc))

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class TraceServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, service, host="127.0.0.1", port=8080):
        self.service = service
        super().__init__((host, port), _Handler)

    @property
    def url(self):
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self):
        thread = threading.Thread(target=self.serve_forever, name="trace-server", daemon=True)
        thread.start()
        return thread

    def stop(self):
        self.shutdown()
        self.server_close()


def make_server(config, **service_kwargs):
    return TraceServer(TraceService(config, **service_kwargs), config.host, config.port)
