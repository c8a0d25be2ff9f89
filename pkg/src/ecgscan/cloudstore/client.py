"""Client for the trace service."""

from __future__ import annotations

import json
import os

import requests
from requests.auth import AuthBase

from ..errors import InvalidCredentials, NetworkError, NotFound, SchemaError, Unauthorized, ValidationError
from .records import deserialize_trace, serialize_trace


class BearerAuth(AuthBase):
    def __init__(self, token):
        self.token = token

    def __call__(self, r):
        r.headers["Authorization"] = "Bearer " + self.token
        return r


class TraceClient:
    def __init__(self, base_url, token=None, timeout=30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self.http = session or requests.Session()

    def _request(self, method, path, **kwargs):
        if self.token:
            kwargs.setdefault("auth", BearerAuth(self.token))
        try:
            resp = self.http.request(method, self.base_url + path, timeout=self.timeout, **kwargs)
        except requests.RequestException as exc:
            raise NetworkError(f"cannot reach {self.base_url}: {exc}") from exc
        if resp.status_code == 401:
            raise Unauthorized(_message(resp))
        if resp.status_code == 404:
            raise NotFound(_message(resp))
        if resp.status_code in (400, 422):
            raise ValidationError(_message(resp))
        if resp.status_code >= 400:
            raise NetworkError(f"server error {resp.status_code}: {_message(resp)}")
        return resp

    def health(self):
        return self._request("GET", "/api/health").json()

    def login(self, username, password):
        try:
            resp = self._request("POST", "/api/login", json={"username": username, "password": password})
        except Unauthorized as exc:
            raise InvalidCredentials(str(exc)) from exc
        body = resp.json()
        self.token = body["token"]
        return body

    def upload(self, record):
        """Upload a record (without id); returns the id the server assigned."""
        resp = self._request("POST", "/api/traces", data=serialize_trace(record),
                             headers={"Content-Type": "application/json"})
        return resp.json()["id"]

    def list(self, patient_ref=None):
        params = {"patient_ref": patient_ref} if patient_ref is not None else None
        return self._request("GET", "/api/traces", params=params).json()["summaries"]

    def fetch_bytes(self, record_id):
        return self._request("GET", f"/api/traces/{record_id}").content

    def fetch(self, record_id):
        return deserialize_trace(self.fetch_bytes(record_id))


def _message(resp):
    try:
        return resp.json().get("error", resp.text)
    except ValueError:
        return resp.text


def default_token_path():
    return os.environ.get("EHEALTH_TOKEN_FILE") or os.path.join(
        os.path.expanduser("~"), ".config", "ecgscan", "token.json")


def save_token(path, server, username, token, expires_at):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump({"server": server, "username": username, "token": token,
                   "expires_at": expires_at}, fh)
    os.chmod(path, 0o600)


def load_token(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"token cache {path} is corrupt: {exc}") from exc
