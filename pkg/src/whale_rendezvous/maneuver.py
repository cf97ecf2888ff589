"""Hold-or-turn decisions for the boat towing the hydrophone array."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import BoatState, wrap_2pi

HOLD = "hold"
TURN = "turn"
HEAD_ALONG_LAST_AOA = "head_along_last_aoa"


@dataclass(frozen=True)
class ManeuverParams:
    decision_period: float = 300.0
    turn_options: tuple = (-90.0, 0.0, 90.0)
    amplitude_threshold: float = 1000.0 / 1500.0
    followup_180: bool = False
    followup_180_delay: float = 60.0

    def __post_init__(self):
        if self.decision_period <= 0:
            raise ValueError("decision_period must be positive")
        if not self.turn_options:
            raise ValueError("turn_options must be non-empty")


@dataclass(frozen=True)
class ManeuverDecision:
    action: str
    turn_deg: float = 0.0
    new_heading: float | None = None
    costs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BeliefView:
    """What the maneuver policy needs to know about one tracked group."""

    position: tuple
    last_amplitude: float
    last_world_aoa: float


def projected_distance(boat: BoatState, turn_deg: float, target, period: float) -> float:
    """Distance from the boat to ``target`` after turning and running straight for ``period``."""
    h = boat.pose.heading - math.radians(turn_deg)
    x = boat.pose.x + boat.speed * period * math.cos(h)
    y = boat.pose.y + boat.speed * period * math.sin(h)
    return math.hypot(target[0] - x, target[1] - y)


def decide_maneuver(boat: BoatState, beliefs, t: float, params: ManeuverParams) -> ManeuverDecision:
    """Pick a maneuver at a decision epoch.

    Args:
        boat: Current boat state.
        beliefs: Sequence of :class:`BeliefView`.
        t: Current time; must be a multiple of ``decision_period``.
        params: Policy parameters.

    Turns are relative, in degrees, positive clockwise (to starboard).
    """
    if abs(t / params.decision_period - round(t / params.decision_period)) > 1e-9:
        raise ValueError(f"t={t} is not a maneuver decision boundary")
    if not beliefs:
        return ManeuverDecision(HOLD)
    here = (boat.pose.x, boat.pose.y)
    nearest = min(beliefs, key=lambda b: math.hypot(b.position[0] - here[0], b.position[1] - here[1]))
    if nearest.last_amplitude < params.amplitude_threshold:
        return ManeuverDecision(HEAD_ALONG_LAST_AOA, new_heading=wrap_2pi(nearest.last_world_aoa))
    costs = {float(d): projected_distance(boat, d, nearest.position, params.decision_period)
             for d in params.turn_options}
    # ties keep the option listed first
    best = min(params.turn_options, key=lambda d: costs[float(d)])
    best = float(best)
    if best == 0.0:
        return ManeuverDecision(HOLD, 0.0, boat.pose.heading, costs)
    return ManeuverDecision(TURN, best, wrap_2pi(boat.pose.heading - math.radians(best)), costs)


def needs_followup_180(relative_aoa: float) -> bool:
    """Whether the tracked group sits behind the array (AOA past 90 degrees)."""
    return relative_aoa > math.pi / 2
