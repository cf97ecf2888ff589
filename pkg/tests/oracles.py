"""Brute-force reference implementations shared by the test modules."""
import math

import numpy as np

from whale_rendezvous.dive_model import DiveModelParams, SurfaceSchedule
from whale_rendezvous.planner import (ACTIONS_BY_STATUS, PlannerParams, PlannerParticle,
                                      base_policy, transition)
from whale_rendezvous.world import FlightStatus, Pose2D, UAVState


def _cost_to_go(p, root_t, acc, params, free):
    """Planner rollout semantics, but the next ``free`` actions range over all choices."""
    cap = params.horizon + params.tail
    if p.rendezvoused:
        return min(acc, cap)
    if p.t - root_t >= params.horizon:
        return min(acc, params.horizon) + params.tail
    if free == 0:
        choices = (base_policy(p, params),)
    else:
        choices = ACTIONS_BY_STATUS[p.uav.flight_status]
    best = math.inf
    for u in choices:
        nxt, g = transition(p, u, params)
        best = min(best, _cost_to_go(nxt, root_t, acc + g, params, max(free - 1, 0)))
    return best


def exhaustive_scores(p, params, depth=3):
    """Per first action, the cheapest cost over every action sequence of length ``depth``.

    Leaves continue under the base policy with the same horizon clock the
    planner uses, so an all-base sequence reproduces the planner's Q-value.
    """
    scores = {}
    for u in ACTIONS_BY_STATUS[p.uav.flight_status]:
        nxt, g = transition(p, u, params)
        scores[u] = g + _cost_to_go(nxt, p.t, 0.0, params, depth - 1)
    return scores


def exhaustive_optimal(scores, tol=1e-6):
    """Actions whose exhaustive score is minimal (within ``tol`` seconds)."""
    low = min(scores.values())
    return {u for u, v in scores.items() if v <= low + tol}


def random_instance(rng, takeoff_time=0.0):
    """One planner particle plus params with single-stage actions (huge delta)."""
    budget = float(rng.uniform(120.0, 900.0))
    params = PlannerParams(M=1, delta=1e7, flight_budget=budget, takeoff_time=takeoff_time,
                           # longer than any schedule below, so the horizon never truncates
                           horizon=float(rng.uniform(8000.0, 12000.0)),
                           tail=float(rng.uniform(0.0, 3000.0)))
    whale = tuple(rng.uniform(-2500.0, 2500.0, 2))
    start = float(rng.uniform(0.0, 2000.0))
    length = float(rng.uniform(30.0, 900.0))
    intervals = ((start, start + length),)
    if rng.random() < 0.5:
        gap = float(rng.uniform(600.0, 3000.0))
        intervals += ((start + length + gap, start + 2 * length + gap),)
    if rng.random() < 0.5:
        uav = UAVState(Pose2D(0.0, 0.0), params.v_max)
    else:
        rem = float(rng.uniform(0.0, budget))
        # inside the disc the UAV can still fly home from
        r = float(rng.uniform(0.0, rem * params.v_max))
        phi = float(rng.uniform(0.0, 2 * math.pi))
        uav = UAVState(Pose2D(r * math.cos(phi), r * math.sin(phi)), params.v_max, rem,
                       FlightStatus.IN_FLIGHT)
    sched = SurfaceSchedule(intervals)
    return PlannerParticle(0.0, whale, uav, sched), params
