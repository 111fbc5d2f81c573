"""Resource pool: semaphores with active-count and high-water tracking."""

from __future__ import annotations

import threading
from contextlib import contextmanager


class ResourcePool:
    """Caps concurrent holders of one resource kind (model or tool calls)."""

    def __init__(self, name: str, cap: int) -> None:
        if cap < 1:
            raise ValueError("cap must be >= 1")
        self.name = name
        self.cap = cap
        self._semaphore = threading.Semaphore(cap)
        self._lock = threading.Lock()
        self.active = 0
        self.high_water = 0
        self.total_acquisitions = 0

    def acquire(self) -> None:
        self._semaphore.acquire()
        with self._lock:
            self.active += 1
            self.total_acquisitions += 1
            self.high_water = max(self.high_water, self.active)

    def release(self) -> None:
        with self._lock:
            self.active -= 1
        self._semaphore.release()

    @contextmanager
    def permit(self):
        self.acquire()
        try:
            yield self
        finally:
            self.release()

    def metrics(self) -> dict:
        with self._lock:
            return {
                "name": self.name,
                "cap": self.cap,
                "active": self.active,
                "high_water": self.high_water,
                "total_acquisitions": self.total_acquisitions,
            }
