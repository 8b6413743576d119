"""Append-only hub event ledger.

One JSON object per line. Each append rewrites the file through a temp file
and an atomic rename, so after a crash the file holds either the complete
new event or none of it. A line without its trailing newline is treated as
never written.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from bikit._io import atomic_write_bytes
from bikit.errors import IntegrityError


class EventLedger:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._raw = b""
        self._events: tuple[dict, ...] = ()
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        end = raw.rfind(b"\n") + 1
        raw = raw[:end]
        events = []
        for lineno, line in enumerate(raw.split(b"\n")[:-1], start=1):
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError:
                raise IntegrityError(f"{self.path}:{lineno}: corrupt ledger line") from None
        self._raw = raw
        self._events = tuple(events)

    @property
    def events(self) -> tuple[dict, ...]:
        """Immutable snapshot; safe to read without the writer lock."""
        return self._events

    def append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
        with self._lock:
            raw = self._raw + line
            atomic_write_bytes(self.path, raw)
            self._raw = raw
            self._events = self._events + (event,)
