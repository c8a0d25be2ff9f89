"""Directory-backed trace storage.

Layout under the data directory::

    records/<id>.json   canonical record bytes, written via temp file + rename
    index.jsonl         append-only summaries, one JSON object per line
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import replace

from ..errors import NotFound
from .auth import atomic_write
from .records import format_timestamp, serialize_trace, utc_now, with_analysis

_ID_RE = re.compile(r"^[0-9]{8}$")


class TraceStore:
    def __init__(self, data_dir, clock=utc_now):
        self.data_dir = data_dir
        self.records_dir = os.path.join(data_dir, "records")
        self.index_path = os.path.join(data_dir, "index.jsonl")
        self.clock = clock
        os.makedirs(self.records_dir, exist_ok=True)
        self._write_lock = threading.Lock()
        self._summaries = []
        if os.path.exists(self.index_path):
            with open(self.index_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._summaries.append(json.loads(line))
        seen = [int(s["id"]) for s in self._summaries]
        # files without an index line still reserve their id
        seen += [int(name[:8]) for name in os.listdir(self.records_dir)
                 if _ID_RE.match(name[:8]) and name.endswith(".json")]
        self._next_id = max(seen, default=0) + 1

    def _path(self, record_id):
        return os.path.join(self.records_dir, f"{record_id}.json")

    def store(self, record):
        """Persist ``record`` under a fresh id; analysis is computed if absent.

        Returns the stored record and its canonical bytes.
        """
        record = with_analysis(record)
        with self._write_lock:
            record_id = f"{self._next_id:08d}"
            self._next_id += 1
            record = replace(record, id=record_id, created_at=format_timestamp(self.clock()))
            body = serialize_trace(record)
            atomic_write(self._path(record_id), body)
            summary = record.summary()
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(summary, sort_keys=True, separators=(",", ":")) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._summaries.append(summary)
        return record, body

    def fetch_bytes(self, record_id):
        if not _ID_RE.match(record_id or ""):
            raise NotFound(f"no trace with id {record_id!r}")
        try:
            with open(self._path(record_id), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            raise NotFound(f"no trace with id {record_id!r}") from None

    def list(self, patient_ref=None):
        rows = list(self._summaries)
        if patient_ref is not None:
            rows = [s for s in rows if s["patient_ref"] == patient_ref]
        rows.sort(key=lambda s: (s["created_at"], s["id"]), reverse=True)
        return rows
