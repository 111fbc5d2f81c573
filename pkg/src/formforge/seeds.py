"""Counter-free derived randomness.

Every stochastic decision in a simulated run is drawn from a hash of
(run seed, decision key) rather than from a shared RNG stream, so outcomes
do not depend on thread interleaving and survive a crash/resume unchanged.
"""

from __future__ import annotations

import hashlib
import struct


class DecisionRng:
    """Deterministic per-key uniform draws derived from a run seed."""

    def __init__(self, seed: int) -> None:
        self.seed = seed

    def _digest(self, key: str) -> bytes:
        material = f"{self.seed}:{key}".encode("utf-8")
        return hashlib.sha256(material).digest()

    def uniform(self, key: str) -> float:
        """Uniform float in [0, 1) determined by (seed, key)."""
        (value,) = struct.unpack(">Q", self._digest(key)[:8])
        return value / 2**64

    def randint(self, key: str, low: int, high: int) -> int:
        """Integer in [low, high] determined by (seed, key)."""
        if high < low:
            raise ValueError("empty range")
        span = high - low + 1
        return low + int(self.uniform(key) * span) % span

    def chance(self, key: str, probability: float) -> bool:
        return self.uniform(key) < probability
