"""Child-process lifecycle management.

Adapters and exec-verifier commands spawn real processes; the registry
tracks them, a background monitor enforces per-process memory caps, and
teardown terminates whole process trees so a finished or crashed run leaves
no orphans behind.
"""

from __future__ import annotations

import subprocess
import threading
from dataclasses import dataclass

import psutil


@dataclass
class ManagedProcess:
    pid: int
    memory_cap_bytes: int | None
    proc: subprocess.Popen | None = None


class ProcessRegistry:
    def __init__(self, monitor_interval_s: float = 0.5) -> None:
        self._lock = threading.Lock()
        self._managed: dict[int, ManagedProcess] = {}
        self._monitor_interval_s = monitor_interval_s
        self._monitor: threading.Thread | None = None
        self._stop = threading.Event()
        self.memory_kills: list[int] = []

    def register(
        self,
        proc: subprocess.Popen,
        memory_cap_bytes: int | None = None,
    ) -> None:
        with self._lock:
            self._managed[proc.pid] = ManagedProcess(
                pid=proc.pid, memory_cap_bytes=memory_cap_bytes, proc=proc
            )
            if memory_cap_bytes is not None and self._monitor is None:
                self._monitor = threading.Thread(
                    target=self._monitor_loop, name="proc-monitor", daemon=True
                )
                self._monitor.start()

    def _monitor_loop(self) -> None:
        while not self._stop.wait(self._monitor_interval_s):
            with self._lock:
                managed = list(self._managed.values())
            for entry in managed:
                if entry.memory_cap_bytes is None:
                    continue
                try:
                    usage = psutil.Process(entry.pid).memory_info().rss
                except psutil.NoSuchProcess:
                    continue
                if usage > entry.memory_cap_bytes:
                    self.memory_kills.append(entry.pid)
                    self.terminate_tree(entry.pid)

    def live_pids(self) -> list[int]:
        with self._lock:
            pids = list(self._managed)
        alive = []
        for pid in pids:
            try:
                proc = psutil.Process(pid)
                if proc.is_running() and proc.status() != psutil.STATUS_ZOMBIE:
                    alive.append(pid)
            except psutil.NoSuchProcess:
                continue
        return alive

    def terminate_tree(self, pid: int) -> None:
        """Terminate a process and all its descendants."""
        try:
            root = psutil.Process(pid)
        except psutil.NoSuchProcess:
            self._reap(pid)
            return
        procs = [root]
        try:
            procs.extend(root.children(recursive=True))
        except psutil.NoSuchProcess:
            pass
        for proc in procs:
            try:
                proc.terminate()
            except psutil.NoSuchProcess:
                continue
        _gone, alive = psutil.wait_procs(procs, timeout=2)
        for proc in alive:
            try:
                proc.kill()
            except psutil.NoSuchProcess:
                continue
        psutil.wait_procs(alive, timeout=2)
        self._reap(pid)

    def _reap(self, pid: int) -> None:
        with self._lock:
            entry = self._managed.pop(pid, None)
        if entry is not None and entry.proc is not None:
            try:
                entry.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                pass

    def teardown(self) -> None:
        """Kill every registered process tree; idempotent."""
        self._stop.set()
        with self._lock:
            pids = list(self._managed)
        for pid in pids:
            self.terminate_tree(pid)
