"""Password credentials and bearer-token sessions."""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta

from ..errors import InputError, InvalidCredentials, Unauthorized
from .records import format_timestamp, utc_now

SCRYPT_DEFAULTS = {"n": 2 ** 14, "r": 8, "p": 1}
TOKEN_BYTES = 16


def hash_password(password, salt, n, r, p):
    return hashlib.scrypt(password.encode("utf-8"), salt=salt, n=n, r=r, p=p,
                          maxmem=256 * 1024 * 1024, dklen=32)


def atomic_write(path, data):
    tmp = f"{path}.tmp-{os.getpid()}-{threading.get_ident()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass(frozen=True)
class Credential:
    username: str
    password_hash: bytes
    salt: bytes
    n: int = SCRYPT_DEFAULTS["n"]
    r: int = SCRYPT_DEFAULTS["r"]
    p: int = SCRYPT_DEFAULTS["p"]

    def to_dict(self):
        return {"hash": self.password_hash.hex(), "salt": self.salt.hex(),
                "n": self.n, "r": self.r, "p": self.p}

    @classmethod
    def from_dict(cls, username, obj):
        return cls(username, bytes.fromhex(obj["hash"]), bytes.fromhex(obj["salt"]),
                   obj["n"], obj["r"], obj["p"])

    def verify(self, password):
        candidate = hash_password(password, self.salt, self.n, self.r, self.p)
        return hmac.compare_digest(candidate, self.password_hash)


class CredentialStore:
    """Salted scrypt hashes kept in a JSON file; plaintext is never written."""

    def __init__(self, path, scrypt_params=None):
        self.path = path
        self.params = dict(SCRYPT_DEFAULTS, **(scrypt_params or {}))
        self._lock = threading.Lock()
        self._dummy = Credential("", b"\0" * 32, b"\0" * 16, **self.params)

    def _load(self):
        if not os.path.exists(self.path):
            return {}
        with open(self.path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return {name: Credential.from_dict(name, obj) for name, obj in raw.get("users", {}).items()}

    def add_user(self, username, password):
        if not username or not password:
            raise InputError("username and password must be non-empty")
        salt = secrets.token_bytes(16)
        cred = Credential(username, hash_password(password, salt, **self.params), salt, **self.params)
        with self._lock:
            users = self._load()
            users[username] = cred
            body = {"users": {k: v.to_dict() for k, v in sorted(users.items())}}
            directory = os.path.dirname(os.path.abspath(self.path))
            os.makedirs(directory, exist_ok=True)
            atomic_write(self.path, json.dumps(body, indent=2, sort_keys=True).encode("utf-8"))
            os.chmod(self.path, 0o600)
        return cred

    def verify(self, username, password):
        cred = self._load().get(username)
        # hash even for unknown users so timing does not reveal which accounts exist
        ok = (cred or self._dummy).verify(password)
        if cred is None or not ok:
            raise InvalidCredentials("invalid username or password")
        return cred


@dataclass(frozen=True)
class SessionToken:
    token: str
    username: str
    expires_at: datetime

    def to_dict(self):
        return {"token": self.token, "expires_at": format_timestamp(self.expires_at)}


def _token_key(token):
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


class SessionManager:
    """Issues and checks bearer tokens.

    Only a SHA-256 of each token is kept, in ``sessions.json`` under the data
    directory, so sessions survive a restart without storing usable tokens.
    """

    def __init__(self, data_dir, ttl=timedelta(hours=24), clock=utc_now):
        self.path = os.path.join(data_dir, "sessions.json")
        self.ttl = ttl
        self.clock = clock
        self._lock = threading.Lock()
        self._sessions = {}
        if os.path.exists(self.path):
            with open(self.path, encoding="utf-8") as fh:
                for key, s in json.load(fh).items():
                    self._sessions[key] = (s["username"], datetime.fromisoformat(s["expires_at"]))

    def _persist(self):
        body = {k: {"username": u, "expires_at": e.isoformat()} for k, (u, e) in self._sessions.items()}
        atomic_write(self.path, json.dumps(body, sort_keys=True).encode("utf-8"))
        os.chmod(self.path, 0o600)

    def issue(self, username):
        token = secrets.token_urlsafe(TOKEN_BYTES)
        now = self.clock()
        expires = now + self.ttl
        with self._lock:
            self._sessions = {k: v for k, v in self._sessions.items() if v[1] > now}
            self._sessions[_token_key(token)] = (username, expires)
            self._persist()
        return SessionToken(token, username, expires)

    def check(self, token):
        if not token:
            raise Unauthorized("missing bearer token")
        entry = self._sessions.get(_token_key(token))
        if entry is None:
            raise Unauthorized("unknown token")
        username, expires = entry
        if self.clock() >= expires:
            raise Unauthorized("token expired")
        return username


def parse_bearer(header):
    if not header:
        return None
    scheme, _, value = header.partition(" ")
    if scheme.lower() != "bearer" or not value.strip():
        return None
    return value.strip()

