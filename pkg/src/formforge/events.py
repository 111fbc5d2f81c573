"""Append-only JSONL event logs and snapshot files.

Every persistent store in the engine is a reducer over one of these logs:
writers append `{seq, ts, op, payload}` records, readers replay them (plus
an optional snapshot) to reconstruct state. Records are serialized with
sorted keys so that a deterministic run produces a byte-identical log.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Callable, Iterator

from .clock import Clock, WallClock


def dump_canonical(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class EventLog:
    """One append-only JSONL file of `{seq, ts, op, payload}` records."""

    def __init__(self, path: Path, clock: Clock | None = None) -> None:
        self.path = Path(path)
        self.clock = clock or WallClock()
        self._lock = threading.Lock()
        self._next_seq = 1
        self._observers: list[Callable[[dict], None]] = []
        if self.path.exists():
            last = None
            for last in self.read():
                pass
            if last is not None:
                self._next_seq = int(last["seq"]) + 1
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def subscribe(self, callback: Callable[[dict], None]) -> None:
        self._observers.append(callback)

    def append(self, op: str, payload: dict) -> dict:
        with self._lock:
            record = {
                "seq": self._next_seq,
                "ts": self.clock.now(),
                "op": op,
                "payload": payload,
            }
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(dump_canonical(record) + "\n")
            self._next_seq += 1
        for callback in self._observers:
            callback(record)
        return record

    def read(self, since_seq: int = 0) -> Iterator[dict]:
        """Yield records with seq > since_seq, tolerating a torn final line."""
        if not self.path.exists():
            return
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    # A crash mid-append leaves at most one partial trailing line.
                    continue
                if record.get("seq", 0) > since_seq:
                    yield record


class SnapshotFile:
    """Atomic JSON snapshot paired with an event log seq watermark."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)

    def save(self, state: dict, as_of_seq: int) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"as_of_seq": as_of_seq, "state": state}
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(dump_canonical(payload) + "\n", encoding="utf-8")
        os.replace(tmp, self.path)

    def load(self) -> tuple[dict, int] | None:
        if not self.path.exists():
            return None
        payload = json.loads(self.path.read_text(encoding="utf-8"))
        return payload["state"], int(payload["as_of_seq"])
