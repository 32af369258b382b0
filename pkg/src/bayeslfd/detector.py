"""Confidence detector: smoothed uncertainty against a scaled adaptive threshold.

The scalar uncertainty stream is averaged over a ring buffer of the last m
values; the controller asks for demonstrations when that average exceeds
c * Omega after a grace period of t_start steps.  Omega starts at 0 (so an
untrained controller always queries) and is reset after every retraining
to the average uncertainty over all contexts trained on so far.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field


class DetectorNotReady(RuntimeError):
    """Smoothed value requested before any observation arrived."""


@dataclass
class DetectorState:
    m: int = 10
    c: float = 1.0
    t_start: int = 10
    omega: float = 0.0
    buffer: deque = field(default_factory=deque)
    t: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("smoothing window m must be >= 1")
        if self.c <= 0:
            raise ValueError("threshold scale c must be positive")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        self.buffer = deque(self.buffer, maxlen=self.m)

    def observe(self, sigma_t: float) -> None:
        if not math.isfinite(sigma_t) or sigma_t < 0:
            raise ValueError(f"uncertainty must be finite and nonnegative, got {sigma_t}")
        self.buffer.append(float(sigma_t))
        self.t += 1

    def smoothed(self) -> float:
        if not self.buffer:
            raise DetectorNotReady("no observations yet")
        return sum(self.buffer) / len(self.buffer)

    @property
    def threshold(self) -> float:
        return self.c * self.omega

    def should_query(self) -> bool:
        if not self.buffer or self.t <= self.t_start:
            return False
        return self.smoothed() > self.threshold

    def reset_episode(self) -> None:
        """Fresh episode clock: empty buffer, step counter back to zero.

        Omega is untouched; the grace period t_start is per episode."""
        self.buffer.clear()
        self.t = 0

    def update_threshold(self, per_context_mean_sigmas) -> None:
        """Set Omega to the average over trained contexts and restart the episode
        clock (buffer and step counter reset)."""
        values = [float(v) for v in per_context_mean_sigmas]
        if not values:
            raise ValueError("need at least one per-context mean uncertainty")
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValueError("per-context uncertainties must be finite and nonnegative")
        self.omega = sum(values) / len(values)
        self.reset_episode()

    def copy(self) -> "DetectorState":
        return DetectorState(
            m=self.m,
            c=self.c,
            t_start=self.t_start,
            omega=self.omega,
            buffer=deque(self.buffer, maxlen=self.m),
            t=self.t,
        )
