"""Password-authenticated storage service for calibrated traces."""

from .auth import CredentialStore, SessionManager, SessionToken
from .client import TraceClient
from .records import (
    TraceRecord,
    compute_analysis,
    deserialize_trace,
    serialize_trace,
    with_analysis,
)
from .server import ServerConfig, TraceServer, TraceService, make_server
from .store import TraceStore
