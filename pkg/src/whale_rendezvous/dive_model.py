"""Alternating dive/surface schedules sampled from truncated Gaussians."""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

import numpy as np

MINUTE = 60.0


class AnchorState(str, enum.Enum):
    UNDERWATER_SINCE = "underwater_since"
    SURFACED_SINCE = "surfaced_since"


@dataclass(frozen=True)
class DiveModelParams:
    """Dive and surface durations, in minutes."""

    mu_underwater: float = 34.0
    sigma_underwater: float = 19.0
    mu_surface: float = 9.0
    sigma_surface: float = 3.0
    min_duration: float = 1.0

    def __post_init__(self):
        if self.mu_underwater <= 0 or self.mu_surface <= 0:
            raise ValueError("dive model means must be positive")
        if self.sigma_underwater < 0 or self.sigma_surface < 0:
            raise ValueError("dive model sigmas must be non-negative")
        if self.min_duration <= 0:
            raise ValueError("min_duration must be positive")

    @property
    def cycle_s(self) -> float:
        return (self.mu_underwater + self.mu_surface) * MINUTE


@dataclass(frozen=True)
class SurfaceSchedule:
    intervals: tuple[tuple[float, float], ...] = ()
    anchor: float = 0.0
    _starts: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        prev_end = -np.inf
        for a, b in self.intervals:
            if not b > a:
                raise ValueError(f"surface interval ({a}, {b}) has end <= start")
            if a <= prev_end:
                raise ValueError("surface intervals must be increasing and disjoint")
            prev_end = b
        object.__setattr__(self, "_starts", tuple(a for a, _ in self.intervals))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.intervals, dtype=float).reshape(-1, 2)


def _draw_duration(mu_min, sigma_min, floor_min, lower_s, rng, max_tries=1000):
    """Duration in seconds ~ N(mu, sigma) truncated below at max(floor, lower_s)."""
    low = max(floor_min * MINUTE, lower_s)
    mu, sigma = mu_min * MINUTE, sigma_min * MINUTE
    if sigma == 0.0:
        return max(mu, low)
    for _ in range(max_tries):
        d = rng.normal(mu, sigma)
        if d >= low:
            return d
    # conditioning event too unlikely to hit by rejection; sit on the bound
    return low


def sample_schedule(params: DiveModelParams, anchor_time: float, anchor_state,
                    horizon: float, rng, now: float | None = None) -> SurfaceSchedule:
    """Sample surface intervals covering ``[now, now + horizon)``.

    Durations already elapsed since the anchor condition the first draw: a
    whale seen diving 20 minutes ago cannot surface after a 10 minute dive.

    Args:
        params: Dive model.
        anchor_time: Last observed dive start or surfacing time, seconds.
        anchor_state: Which of the two the anchor marks.
        horizon: Planning horizon in seconds.
        rng: numpy Generator.
        now: Current time; defaults to ``anchor_time``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    anchor_state = AnchorState(anchor_state)
    now = anchor_time if now is None else now
    elapsed = max(0.0, now - anchor_time)
    end = now + horizon

    intervals = []
    if anchor_state is AnchorState.UNDERWATER_SINCE:
        dive = _draw_duration(params.mu_underwater, params.sigma_underwater,
                              params.min_duration, elapsed, rng)
        a = max(now, anchor_time + dive)
    else:
        a = anchor_time
    first = True
    while a < end:
        lower = elapsed if (first and anchor_state is AnchorState.SURFACED_SINCE) else 0.0
        b = a + _draw_duration(params.mu_surface, params.sigma_surface,
                               params.min_duration, lower, rng)
        first = False
        if b > now:
            intervals.append((a, b))
        a = b + _draw_duration(params.mu_underwater, params.sigma_underwater,
                               params.min_duration, 0.0, rng)
    return SurfaceSchedule(tuple(intervals), anchor_time)


def is_surfaced(schedule: SurfaceSchedule, t: float) -> bool:
    """True iff ``t`` lies in some interval, closed at start and open at end."""
    i = bisect.bisect_right(schedule._starts, t) - 1
    return i >= 0 and t < schedule.intervals[i][1]


def next_surface_interval(schedule: SurfaceSchedule, t: float):
    """The interval containing ``t`` or the first one after it, else None."""
    for a, b in schedule.intervals:
        if b > t:
            return a, b
    return None
