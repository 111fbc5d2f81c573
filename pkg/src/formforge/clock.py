"""Clock abstraction: wall time for live runs, a logical tick for simulations."""

from __future__ import annotations

import threading
import time


class Clock:
    """Source of monotonically non-decreasing timestamps."""

    def now(self) -> float:
        raise NotImplementedError


class WallClock(Clock):
    def now(self) -> float:
        return time.time()


class LogicalClock(Clock):
    """Deterministic integer-valued clock; every read advances it by one tick."""

    def __init__(self, start: int = 0) -> None:
        self._value = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            self._value += 1
            return float(self._value)

    def advance_to(self, value: float) -> None:
        with self._lock:
            self._value = max(self._value, int(value))
