"""Rollout planning of UAV takeoff and navigation under a flight-time budget.

A planner particle is one concrete hypothesis: UAV state, whale position and
a sampled surface schedule. Each admissible action is scored by its one-step
cost plus the cost-to-go of a fixed base policy simulated from the
resulting particle, averaged over particles; the cheapest action wins.

The per-particle step, base policy and rollout are small numba kernels over
a flat state vector; the dataclass API below wraps them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .dive_model import DiveModelParams, SurfaceSchedule, is_surfaced, sample_schedule
from .tracker import LEFT, RIGHT, Belief
from .world import FlightStatus, Pose2D, UAVState

_EPS = 1e-9
# Q-values closer than this (seconds) are ties; summation order alone moves them
_TIE_TOL = 1e-6


class Action(enum.IntEnum):
    # values fix the tie-break order within each flight status
    TAKEOFF = 0
    WAIT = 1
    GO_TO_BELIEF = 2
    GO_HOME = 3


ACTIONS_BY_STATUS = {
    FlightStatus.GROUNDED: (Action.TAKEOFF, Action.WAIT),
    FlightStatus.IN_FLIGHT: (Action.GO_TO_BELIEF, Action.GO_HOME),
}

# state vector layout
T, UX, UY, REM, FLY, WX, WY, RDV = range(8)
# constants vector layout, see PlannerParams.consts
HX, HY, V, DELTA, BUDGET, TAKEOFF_T, MIN_WAIT, RADIUS, HORIZON, TAIL = range(10)


@dataclass(frozen=True)
class PlannerParams:
    M: int = 100
    delta: float = 120.0
    rendezvous_radius: float = 200.0
    horizon: float = 2 * DiveModelParams().cycle_s
    tail: float = DiveModelParams().cycle_s
    v_max: float = 10.0
    home: tuple = (0.0, 0.0)
    flight_budget: float = 900.0
    takeoff_time: float = 0.0
    min_wait: float = 1.0
    max_stages: int = 100_000

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.rendezvous_radius <= 0 or self.delta <= 0 or self.v_max <= 0:
            raise ValueError("rendezvous_radius, delta and v_max must be positive")
        if self.horizon <= 0 or self.tail < 0 or self.flight_budget < 0:
            raise ValueError("horizon must be positive; tail and flight_budget non-negative")

    @classmethod
    def for_dive_model(cls, dive: DiveModelParams, **kw) -> "PlannerParams":
        kw.setdefault("horizon", 2 * dive.cycle_s)
        kw.setdefault("tail", dive.cycle_s)
        return cls(**kw)

    def consts(self) -> np.ndarray:
        return np.array([self.home[0], self.home[1], self.v_max, self.delta,
                         self.flight_budget, self.takeoff_time, self.min_wait,
                         self.rendezvous_radius, self.horizon, self.tail], dtype=np.float64)


@dataclass
class PlannerParticle:
    t: float
    whale_pos: tuple
    uav: UAVState
    schedule: SurfaceSchedule
    rendezvoused: bool = False

    def __post_init__(self):
        if self.uav.remaining_flight < 0:
            raise ValueError("remaining_flight must be >= 0")


@njit(cache=True)
def _next_interval(iv, t):
    for k in range(iv.shape[0]):
        if iv[k, 1] > t:
            return iv[k, 0], iv[k, 1]
    return np.inf, np.inf


@njit(cache=True)
def _surfaced(iv, t):
    for k in range(iv.shape[0]):
        if iv[k, 0] <= t < iv[k, 1]:
            return True
    return False


@njit(cache=True)
def _max_safe_travel(px, py, tx, ty, rem, c):
    """Farthest distance toward (tx, ty) that keeps enough range to fly home."""
    q = rem * c[V]
    rx, ry = px - c[HX], py - c[HY]
    dx, dy = tx - px, ty - py
    n = math.hypot(dx, dy)
    if n == 0.0:
        return 0.0
    denom = 2.0 * (q + (rx * dx + ry * dy) / n)
    if denom <= _EPS:
        return np.inf
    return max(q * q - (rx * rx + ry * ry), 0.0) / denom


@njit(cache=True)
def _return_after_reach(px, py, wx, wy, c):
    """Flight time to the rendezvous disc along the straight line, plus the way home from there."""
    d = math.hypot(wx - px, wy - py)
    r = max(d - c[RADIUS], 0.0)
    if d > 0.0:
        ex, ey = px + (wx - px) * r / d, py + (wy - py) * r / d
    else:
        ex, ey = px, py
    return (r + math.hypot(ex - c[HX], ey - c[HY])) / c[V]


@njit(cache=True)
def _launch_stop(d, c):
    """Where a fresh launch toward a whale ``d`` metres from home stops: the
    whale itself, or the half-budget turnaround point if that comes first."""
    return min(d, 0.5 * c[BUDGET] * c[V])


@njit(cache=True)
def _base(s, iv, c):
    v = c[V]
    if s[FLY] > 0.5:
        if s[REM] < _return_after_reach(s[UX], s[UY], s[WX], s[WY], c) - _EPS:
            return 3
        # inside the disc with no battery slack left to wait for the surfacing
        d_uw = math.hypot(s[UX] - s[WX], s[UY] - s[WY])
        d_uh = math.hypot(s[UX] - c[HX], s[UY] - c[HY])
        if d_uw <= c[RADIUS] and not _surfaced(iv, s[T]) and s[REM] - d_uh / v <= _EPS:
            return 3
        return 2
    d = math.hypot(c[HX] - s[WX], c[HY] - s[WY])
    stop = _launch_stop(d, c)
    if d - stop > c[RADIUS]:
        return 1
    a, b = _next_interval(iv, s[T])
    meet = max(s[T] + c[TAKEOFF_T] + stop / v, a)
    airborne = meet - s[T] - c[TAKEOFF_T]
    if meet < b and airborne + stop / v <= c[BUDGET] + _EPS:
        return 0
    return 1


@njit(cache=True)
def _step(s, iv, u, c):
    """Apply action ``u`` to state ``s`` in place and return the stage cost."""
    v, delta = c[V], c[DELTA]
    cost = 0.0
    if u == 0:
        cost = min(delta, c[TAKEOFF_T])
        s[FLY] = 1.0
        s[REM] = c[BUDGET]
        s[UX] = c[HX]
        s[UY] = c[HY]
    elif u == 1:
        # launch just in time to reach the stopping point as the whale surfaces
        stop = _launch_stop(math.hypot(c[HX] - s[WX], c[HY] - s[WY]), c)
        a, b = _next_interval(iv, s[T])
        launch = a - c[TAKEOFF_T] - stop / v
        until = launch - s[T] if launch > s[T] else b - s[T]
        if not np.isfinite(until):
            until = delta
        cost = min(delta, max(until, c[MIN_WAIT]))
    elif u == 2:
        d_uw = math.hypot(s[WX] - s[UX], s[WY] - s[UY])
        travel = 0.0
        if d_uw > _EPS:
            safe = _max_safe_travel(s[UX], s[UY], s[WX], s[WY], s[REM], c)
            # absorb round-off so a feasible leg is never split into slivers
            if safe >= d_uw - 1e-6 * max(d_uw, 1.0):
                safe = np.inf
            travel = max(min(delta * v, d_uw, safe), 0.0)
        if travel > 1e-6:
            cost = travel / v
            s[UX] += (s[WX] - s[UX]) * travel / d_uw
            s[UY] += (s[WY] - s[UY]) * travel / d_uw
        else:
            # over the whale, or as close as the battery allows: hover
            a, _ = _next_interval(iv, s[T])
            hover = max(a - s[T], 0.0) if np.isfinite(a) else delta
            d_uh = math.hypot(s[UX] - c[HX], s[UY] - c[HY])
            cost = max(min(delta, hover, s[REM] - d_uh / v), 0.0)
        s[REM] = max(s[REM] - cost, 0.0)
    else:
        d_uh = math.hypot(c[HX] - s[UX], c[HY] - s[UY])
        cost = min(delta, d_uh / v)
        step = min(cost * v, d_uh)
        if d_uh - step <= 1e-6:
            s[UX] = c[HX]
            s[UY] = c[HY]
            # reaching home lands the UAV
            s[FLY] = 0.0
        else:
            s[UX] += (c[HX] - s[UX]) * step / d_uh
            s[UY] += (c[HY] - s[UY]) * step / d_uh
        s[REM] = max(s[REM] - cost, 0.0)
    s[T] += cost
    if s[FLY] > 0.5 and math.hypot(s[UX] - s[WX], s[UY] - s[WY]) <= c[RADIUS] \
            and _surfaced(iv, s[T]):
        s[RDV] = 1.0
    return cost


@njit(cache=True)
def _rollout(s, iv, c, t_start, max_stages):
    """Base-policy cost-to-go from ``s`` (mutated); -1 if it fails to stop."""
    acc = 0.0
    cap = c[HORIZON] + c[TAIL]
    for _ in range(max_stages):
        if s[RDV] > 0.5:
            return min(acc, cap)
        if s[T] - t_start >= c[HORIZON]:
            return min(acc, c[HORIZON]) + c[TAIL]
        acc += _step(s, iv, _base(s, iv, c), c)
    return -1.0


@njit(cache=True)
def _q_values(states, ivs, actions, c, max_stages):
    M = states.shape[0]
    q = np.zeros(actions.size)
    for j in range(actions.size):
        total = 0.0
        for m in range(M):
            if states[m, RDV] > 0.5:
                continue
            s = states[m].copy()
            g = _step(s, ivs[m], actions[j], c)
            rest = _rollout(s, ivs[m], c, states[m, T], max_stages)
            if rest < 0:
                return q, False
            total += g + rest
        q[j] = total / M
    return q, True


def pack(particles):
    """``(states (M, 8), intervals (M, K, 2))`` arrays for the kernels."""
    states = np.array([[p.t, p.uav.pose.x, p.uav.pose.y, p.uav.remaining_flight,
                        float(p.uav.in_flight), p.whale_pos[0], p.whale_pos[1],
                        float(p.rendezvoused)] for p in particles], dtype=np.float64)
    K = max(1, max(len(p.schedule.intervals) for p in particles))
    ivs = np.full((len(particles), K, 2), np.inf)
    for i, p in enumerate(particles):
        if p.schedule.intervals:
            ivs[i, : len(p.schedule.intervals)] = p.schedule.intervals
    return states, ivs


def unpack(p: PlannerParticle, s) -> PlannerParticle:
    status = FlightStatus.IN_FLIGHT if s[FLY] > 0.5 else FlightStatus.GROUNDED
    uav = replace(p.uav, pose=Pose2D(float(s[UX]), float(s[UY]), p.uav.pose.heading),
                  remaining_flight=float(s[REM]), flight_status=status)
    return replace(p, t=float(s[T]), uav=uav, rendezvoused=bool(s[RDV] > 0.5))


def _check_admissible(p: PlannerParticle, u):
    if Action(u) not in ACTIONS_BY_STATUS[p.uav.flight_status]:
        raise ValueError(f"action {Action(u).name} not admissible when {p.uav.flight_status.value}")


def transition(p: PlannerParticle, u: Action, params: PlannerParams):
    """Next particle and stage cost ``min(delta, time to complete u)``.

    ``go_to_belief`` never flies past the point from which home is still
    reachable; once over the belief, or stopped there by the battery, it
    hovers until the next surfacing.
    ``go_home`` lands the UAV on arrival.
    """
    _check_admissible(p, u)
    states, ivs = pack([p])
    cost = _step(states[0], ivs[0], int(u), params.consts())
    return unpack(p, states[0]), float(cost)


def base_policy(p: PlannerParticle, params: PlannerParams) -> Action:
    """In flight: go to the belief while reaching its rendezvous disc and
    flying home still fits the remaining flight time, else go home.
    Grounded: take off only if the launch would stop inside the disc and
    could wait there for the whale's next surfacing with a feasible return."""
    states, ivs = pack([p])
    return Action(_base(states[0], ivs[0], params.consts()))


def rollout_cost(p: PlannerParticle, params: PlannerParams) -> float:
    if p.rendezvoused:
        return 0.0
    states, ivs = pack([p])
    out = _rollout(states[0], ivs[0], params.consts(), p.t, params.max_stages)
    if out < 0:
        raise RuntimeError("rollout did not terminate")
    return float(out)


def rollout_trajectory(p: PlannerParticle, params: PlannerParams, first: Action | None = None):
    """Particles visited by a base-policy rollout, optionally after ``first``."""
    if first is not None:
        _check_admissible(p, first)
    states, ivs = pack([p])
    s, iv, c = states[0], ivs[0], params.consts()
    path = [s.copy()]
    if first is not None:
        _step(s, iv, int(first), c)
        path.append(s.copy())
    for _ in range(params.max_stages):
        if s[RDV] > 0.5 or s[T] - p.t >= params.horizon:
            break
        _step(s, iv, _base(s, iv, c), c)
        path.append(s.copy())
    return [unpack(p, x) for x in path]


def q_values(particles, flight_status, params: PlannerParams) -> dict:
    """Particle-averaged ``g(b, u) + J(F(b, u))`` for each admissible action."""
    status = FlightStatus(flight_status)
    if any(p.uav.flight_status is not status for p in particles):
        raise ValueError("all particles must share the stated flight status")
    actions = ACTIONS_BY_STATUS[status]
    states, ivs = pack(particles)
    q, ok = _q_values(states, ivs, np.array([int(u) for u in actions], dtype=np.int64),
                      params.consts(), params.max_stages)
    if not ok:
        raise RuntimeError("rollout did not terminate")
    return {u: float(x) for u, x in zip(actions, q)}


def choose_action(particles, flight_status, params: PlannerParams, return_q: bool = False):
    """Admissible action minimising the particle-averaged rollout Q-value.

    Ties (within ``_TIE_TOL`` seconds) resolve by fixed action order:
    takeoff before wait, go_to_belief before go_home.
    """
    if not particles:
        raise ValueError("need at least one planner particle")
    q = q_values(particles, flight_status, params)
    low = min(q.values())
    best = min(u for u in q if q[u] <= low + _TIE_TOL)
    return (best, q) if return_q else best


def make_planner_particles(belief: Belief, uav: UAVState, dive: DiveModelParams, anchor,
                           M: int, horizon: float, rng, now: float | None = None):
    """Planner particles from a tracker belief.

    Whale positions are resampled from the dominant side of ``belief``;
    schedules are drawn independently from ``dive`` anchored at ``anchor =
    (anchor_time, anchor_state)``.
    """
    left, right = belief.side_mass()
    side = LEFT if left >= right - 1e-12 else RIGHT
    mask = belief.sides == side
    pos = belief.positions[mask]
    w = belief.weights[mask]
    idx = rng.choice(pos.shape[0], size=M, p=w / w.sum())
    anchor_time, anchor_state = anchor
    now = anchor_time if now is None else now
    return [PlannerParticle(now, (float(pos[i, 0]), float(pos[i, 1])), uav,
                            sample_schedule(dive, anchor_time, anchor_state, horizon, rng, now=now))
            for i in idx]


def whale_surfaced(p: PlannerParticle) -> bool:
    return is_surfaced(p.schedule, p.t)
