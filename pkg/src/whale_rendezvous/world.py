"""Planar geometry and agent kinematics.

World frame is local ENU in meters: x east, y north, headings in radians
counterclockwise from +x.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_2pi(angle):
    """Wrap angle(s) into [0, 2pi)."""
    out = np.mod(angle, TWO_PI)
    # np.mod can return 2pi for tiny negative inputs
    if np.ndim(out) == 0:
        out = float(out)
        return 0.0 if out >= TWO_PI else out
    out[out >= TWO_PI] = 0.0
    return out


def wrap_pi(angle):
    """Wrap angle(s) into [-pi, pi)."""
    return np.mod(np.asarray(angle) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_2pi(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, point) -> float:
        return math.hypot(point[0] - self.x, point[1] - self.y)


@dataclass(frozen=True)
class BoatState:
    pose: Pose2D
    speed: float = 4.0
    array_offset: float = 100.0

    def __post_init__(self):
        if self.array_offset <= 0:
            raise ValueError("array_offset must be positive")

    def array_pose(self) -> Pose2D:
        """Towed array position, extrapolated on-axis behind the boat."""
        h = self.pose.heading
        return Pose2D(self.pose.x - self.array_offset * math.cos(h),
                      self.pose.y - self.array_offset * math.sin(h), h)

    def velocity(self) -> np.ndarray:
        h = self.pose.heading
        return self.speed * np.array([math.cos(h), math.sin(h)])


class FlightStatus(str, enum.Enum):
    GROUNDED = "grounded"
    IN_FLIGHT = "in_flight"


@dataclass(frozen=True)
class UAVState:
    pose: Pose2D
    max_speed: float = 10.0
    remaining_flight: float = 0.0
    flight_status: FlightStatus = FlightStatus.GROUNDED

    def __post_init__(self):
        if self.remaining_flight < 0:
            raise ValueError("remaining_flight must be >= 0")

    @property
    def in_flight(self) -> bool:
        return self.flight_status is FlightStatus.IN_FLIGHT

    def with_pose(self, pose: Pose2D) -> "UAVState":
        return replace(self, pose=pose)


def bearing(frm: Pose2D, to) -> float:
    """World-frame bearing of point ``to`` seen from ``frm``, in [0, 2pi)."""
    dx = to[0] - frm.x
    dy = to[1] - frm.y
    if dx == 0.0 and dy == 0.0:
        raise ValueError("degenerate bearing: coincident points")
    return wrap_2pi(math.atan2(dy, dx))


def fold_aoa(world_bearing, array_heading):
    """Fold a world bearing into the [0, pi) angle a linear array reports.

    Sources mirrored about the array axis map to the same value. Works on
    scalars and arrays.
    """
    rel = np.mod(np.asarray(world_bearing, dtype=float) - array_heading, TWO_PI)
    folded = np.where(rel < math.pi, rel, TWO_PI - rel)
    # rel == pi exactly lands on pi, which is identified with 0 on the [0, pi) circle
    folded = np.mod(folded, math.pi)
    return float(folded) if folded.ndim == 0 else folded


def unfold_candidates(aoa: float, array_heading: float) -> tuple[float, float]:
    """The two world bearings (left, right of the axis) consistent with a folded AOA."""
    return wrap_2pi(array_heading + aoa), wrap_2pi(array_heading - aoa)


def aoa_distance(a, b):
    """Circular distance between folded AOAs on [0, pi)."""
    d = np.abs(np.asarray(a, dtype=float) - b) % math.pi
    d = np.minimum(d, math.pi - d)
    return float(d) if d.ndim == 0 else d


def aoa_residual(a, b):
    """Signed circular difference a - b on the [0, pi) circle, in [-pi/2, pi/2)."""
    r = np.mod(np.asarray(a, dtype=float) - b + math.pi / 2, math.pi) - math.pi / 2
    return float(r) if r.ndim == 0 else r


def step_agent(state: Pose2D, speed: float, turn_rate: float, dt: float) -> Pose2D:
    """Unicycle update with exact integration of a constant turn rate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    h0 = state.heading
    if abs(turn_rate) < 1e-12:
        x = state.x + speed * dt * math.cos(h0)
        y = state.y + speed * dt * math.sin(h0)
        return Pose2D(x, y, h0)
    h1 = h0 + turn_rate * dt
    r = speed / turn_rate
    x = state.x + r * (math.sin(h1) - math.sin(h0))
    y = state.y - r * (math.cos(h1) - math.cos(h0))
    return Pose2D(x, y, h1)


def move_toward(pos, target, distance: float) -> np.ndarray:
    """Move ``pos`` up to ``distance`` meters straight toward ``target``."""
    pos = np.asarray(pos, dtype=float)
    delta = np.asarray(target, dtype=float) - pos
    d = math.hypot(delta[0], delta[1])
    if d <= distance or d == 0.0:
        return np.array(target, dtype=float)
    return pos + delta * (distance / d)


def intercept_time(chaser, speed: float, target, target_velocity) -> float:
    """Time for a chaser at constant ``speed`` to meet a constant-velocity target.

    Returns ``inf`` if the target outruns the chaser.
    """
    r = np.asarray(target, dtype=float) - np.asarray(chaser, dtype=float)
    v = np.asarray(target_velocity, dtype=float)
    a = v @ v - speed * speed
    b = 2.0 * (r @ v)
    c = r @ r
    if c == 0.0:
        return 0.0
    if abs(a) < 1e-12:
        return -c / b if b < 0 else math.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    roots = [t for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)) if t > 0]
    return min(roots) if roots else math.inf
