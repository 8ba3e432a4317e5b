"""Durable append-only event log with snapshot support.

One canonical-JSON object per line, fsync'd before the append returns, so
a record acknowledged to a client survives a process kill. On open the
log drops a torn final line (the one write that may die mid-crash) and
continues from the last complete record.

Snapshots write to a temp file and os.replace into place, so a reader
sees either the old snapshot or the new one, never a partial file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .encoding import canonical_json


class EventLogError(Exception):
    pass


class EventLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._repair_tail()
        self._fh = open(self.path, "ab")

    def _repair_tail(self) -> None:
        """Drop a torn final line left by a crash mid-append."""
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if not data:
            return
        keep = len(data)
        if not data.endswith(b"\n"):
            nl = data.rfind(b"\n")
            keep = nl + 1 if nl >= 0 else 0
        else:
            # Complete lines can still hold a torn record if the crash hit
            # between payload and newline of an earlier write; validate the
            # last line cheaply.
            last_start = data.rfind(b"\n", 0, len(data) - 1) + 1
            try:
                json.loads(data[last_start : len(data) - 1])
            except ValueError:
                keep = last_start
        if keep != len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def append(self, event: dict) -> None:
        """Write one event and fsync before returning."""
        line = canonical_json(event) + b"\n"
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def replay(self) -> list[dict]:
        """All complete events, oldest first."""
        events = []
        if self.path.exists():
            with open(self.path, "rb") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        events.append(json.loads(line))
                    except ValueError:
                        break
        return events

    def truncate(self) -> None:
        """Empty the log (after its contents moved into a snapshot)."""
        self._fh.close()
        with open(self.path, "wb") as fh:
            fh.flush()
            os.fsync(fh.fileno())
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        self._fh.close()


class SnapshotStore:
    """Atomic whole-state snapshot beside an event log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def save(self, state: dict) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(canonical_json(state))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)

    def load(self) -> dict | None:
        if not self.path.exists():
            return None
        data = self.path.read_bytes()
        if not data:
            return None
        return json.loads(data)
