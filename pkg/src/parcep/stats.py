"""Running moment accumulators with optional exponential forgetting."""

from __future__ import annotations

import math


class RunningStats:
    """Weighted Welford accumulator.

    ``decay(f)`` scales the weight of everything seen so far by ``f``, which
    turns the accumulator into an exponentially-forgetting estimate while
    keeping the current mean.
    """

    __slots__ = ("weight", "mean", "m2", "count")

    def __init__(self) -> None:
        self.weight = 0.0
        self.mean = 0.0
        self.m2 = 0.0
        self.count = 0

    def add(self, x: float, w: float = 1.0) -> None:
        self.count += 1
        self.weight += w
        delta = x - self.mean
        self.mean += delta * w / self.weight
        self.m2 += w * delta * (x - self.mean)

    def decay(self, factor: float) -> None:
        self.weight *= factor
        self.m2 *= factor

    def reset(self) -> None:
        self.weight = self.mean = self.m2 = 0.0
        self.count = 0

    @property
    def var(self) -> float:
        return self.m2 / self.weight if self.weight > 0 else 0.0

    @property
    def scv(self) -> float:
        """Squared coefficient of variation, var / mean**2 (0 when undefined)."""
        if self.weight <= 0 or self.mean == 0:
            return 0.0
        return self.var / (self.mean * self.mean)

    def __repr__(self) -> str:
        return f"RunningStats(n={self.count}, mean={self.mean:.6g}, sd={math.sqrt(self.var):.6g})"
