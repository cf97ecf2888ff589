"""Bimodal particle-filter beliefs over whale-group locations.

Each belief starts with particles on both sides of the towed array, since a
folded AOA cannot tell left from right. Array maneuvers and VHF bearings
later collapse the wrong side.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import norm

from .world import Pose2D, aoa_distance, aoa_residual, fold_aoa, wrap_2pi, wrap_pi

LEFT, RIGHT = 0, 1
# while both sides hold mass, each keeps at least this share of the particles
MIN_SIDE_FRAC = 0.1
# a side whose relative mass falls below this is dropped at the next resampling
SIDE_MASS_FLOOR = 1e-6


class BeliefDegenerate(RuntimeError):
    """Raised when no particle can explain a measurement."""


@dataclass(frozen=True)
class TrackerParams:
    P: int = 500
    init_range_max: float = 1000.0
    init_range_min: float = 0.0
    motion_speed_max: float = 2.5
    heading_jitter: float = 0.05      # rad / sqrt(s)
    delta_silent: float = 60.0
    ess_frac: float = 0.5
    amp_reject_quantile: float = 0.95
    degenerate_gate: float = 6.0      # sigmas
    match_gate: float | None = None   # radians; None disables gating
    roughen_speed: float = 0.1        # m/s jitter on resampled copies
    roughen_heading: float = 0.1      # rad jitter on resampled copies
    spawn_gate: float = 3.0           # cluster sigmas; closer clusters never spawn
    spawn_gate_min: float = math.radians(10.0)
    reject_gate_min: float = math.radians(3.0)  # floor on the post-maneuver rejection band

    def __post_init__(self):
        if self.P < 10:
            raise ValueError("P must be >= 10")
        if self.init_range_max <= 0 or self.init_range_min < 0 \
                or self.init_range_min >= self.init_range_max:
            raise ValueError("need 0 <= init_range_min < init_range_max")
        if not 0.0 < self.ess_frac <= 1.0:
            raise ValueError("ess_frac must be in (0, 1]")
        if not 0.0 < self.amp_reject_quantile < 1.0:
            raise ValueError("amp_reject_quantile must be in (0, 1)")


@dataclass
class Particle:
    position: tuple
    weight: float
    side: int


@dataclass
class Belief:
    id: int
    positions: np.ndarray       # (P, 2)
    weights: np.ndarray         # (P,)
    sides: np.ndarray           # (P,) LEFT / RIGHT
    headings: np.ndarray        # (P,) persisted motion heading
    speeds: np.ndarray          # (P,)
    surfaced: bool = False
    last_matched_t: float = 0.0
    last_aoa: float = 0.0
    last_amplitude: float = 0.0
    last_cluster: tuple = (0.0, math.radians(5.0))
    reinit_count: int = 0
    created_t: float = 0.0
    underwater_since: float = 0.0
    surfaced_since: float | None = None
    last_world_aoa: float | None = None

    def __len__(self):
        return self.weights.size

    @property
    def particles(self) -> list[Particle]:
        return [Particle(tuple(p), float(w), int(s))
                for p, w, s in zip(self.positions, self.weights, self.sides)]

    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights ** 2))

    def side_mass(self) -> tuple[float, float]:
        left = float(self.weights[self.sides == LEFT].sum())
        return left, float(self.weights.sum()) - left

    def snapshot(self) -> dict:
        pos, conf = estimate(self)
        return {
            "id": self.id,
            "estimate": [round(float(pos[0]), 6), round(float(pos[1]), 6)],
            "side_confidence": round(conf, 6),
            "surfaced": self.surfaced,
            "ess": round(self.ess(), 6),
            "reinit_count": self.reinit_count,
        }


def _fold_from(array_pose: Pose2D, positions: np.ndarray) -> np.ndarray:
    d = positions - np.array([array_pose.x, array_pose.y])
    return fold_aoa(np.arctan2(d[:, 1], d[:, 0]), array_pose.heading)


def _normalize(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


def systematic_resample(weights: np.ndarray, rng, n: int | None = None) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset)."""
    n = weights.size if n is None else n
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def _take(belief: Belief, idx: np.ndarray):
    belief.positions = belief.positions[idx]
    belief.sides = belief.sides[idx]
    belief.headings = belief.headings[idx]
    belief.speeds = belief.speeds[idx]
    belief.weights = belief.weights[idx]


def init_belief(cluster, array_pose: Pose2D, params: TrackerParams, rng,
                id: int = 0, t: float = 0.0) -> Belief:
    """New two-sided belief from an AOA cluster ``(mean, sigma)``.

    Half the particles are placed on rays ``heading + alpha`` (left side),
    half on ``heading - alpha`` (right side), with ``alpha ~ N(mean, sigma)``
    and range uniform on ``[init_range_min, init_range_max]``.
    """
    mean, sigma = cluster
    if not 0.0 <= mean < math.pi:
        raise ValueError("cluster mean must be in [0, pi)")
    P = params.P
    sides = np.repeat(np.array([LEFT, RIGHT], dtype=np.int8), [P - P // 2, P // 2])
    alpha = rng.normal(mean, sigma, P)
    sign = np.where(sides == LEFT, 1.0, -1.0)
    world = array_pose.heading + sign * alpha
    rng_m = rng.uniform(params.init_range_min, params.init_range_max, P)
    positions = np.column_stack([array_pose.x + rng_m * np.cos(world),
                                 array_pose.y + rng_m * np.sin(world)])
    return Belief(
        id=id,
        positions=positions,
        weights=np.full(P, 1.0 / P),
        sides=sides,
        headings=rng.uniform(0.0, 2.0 * math.pi, P),
        speeds=rng.uniform(0.0, params.motion_speed_max, P),
        last_matched_t=t,
        last_aoa=float(mean),
        last_cluster=(float(mean), float(sigma)),
        created_t=t,
        underwater_since=t,
    )


def predict(belief: Belief, dt: float, rng, params: TrackerParams | None = None) -> Belief:
    """Random walk with persisted per-particle heading and speed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    params = params or TrackerParams()
    if params.motion_speed_max <= 0:
        return belief
    n = len(belief)
    belief.headings = belief.headings + rng.normal(0.0, params.heading_jitter * math.sqrt(dt), n)
    step = belief.speeds * dt
    belief.positions = belief.positions + np.column_stack(
        [step * np.cos(belief.headings), step * np.sin(belief.headings)])
    return belief


def _reweight(belief: Belief, log_lik: np.ndarray, params: TrackerParams, rng):
    w = belief.weights * np.exp(log_lik - log_lik.max())
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise BeliefDegenerate("total likelihood underflowed")
    belief.weights = w / total
    if belief.ess() < params.ess_frac * params.P or len(belief) != params.P:
        resample_by_side(belief, rng, params.P)
        _roughen(belief, params, rng)


def resample_by_side(belief: Belief, rng, P: int) -> Belief:
    """Systematic resampling within each side, preserving the side masses.

    Resampling the two sides jointly lets random drift wipe out a side the
    data cannot yet distinguish (mirror symmetry holds exactly until the
    array turns), so the left/right split is carried over in the weights.
    """
    mass = {s: float(belief.weights[belief.sides == s].sum()) for s in (LEFT, RIGHT)}
    total = mass[LEFT] + mass[RIGHT]
    live = [s for s in (LEFT, RIGHT) if mass[s] > SIDE_MASS_FLOOR * total]
    if len(live) == 1:
        counts = {live[0]: P}
    else:
        lo = max(1, math.ceil(MIN_SIDE_FRAC * P))
        n_left = min(max(round(P * mass[LEFT] / total), lo), P - lo)
        counts = {LEFT: n_left, RIGHT: P - n_left}
    idx, w = [], []
    for s, n in counts.items():
        members = np.flatnonzero(belief.sides == s)
        local = belief.weights[members] / mass[s]
        idx.append(members[systematic_resample(local, rng, n)])
        w.append(np.full(n, mass[s] / n))
    _take(belief, np.concatenate(idx))
    belief.weights = _normalize(np.concatenate(w))
    return belief


def _roughen(belief: Belief, params: TrackerParams, rng):
    # resampled duplicates would otherwise share one velocity forever
    n = len(belief)
    if params.roughen_heading > 0:
        belief.headings = belief.headings + rng.normal(0.0, params.roughen_heading, n)
    if params.roughen_speed > 0:
        belief.speeds = np.clip(belief.speeds + rng.normal(0.0, params.roughen_speed, n),
                                0.0, params.motion_speed_max)


def update(belief: Belief, cluster, array_pose: Pose2D, params: TrackerParams, rng) -> Belief:
    """Weight particles by how well their folded AOA matches the cluster.

    Raises:
        BeliefDegenerate: every particle is beyond ``degenerate_gate`` sigmas.
    """
    mean, sigma = cluster
    if sigma <= 0:
        raise ValueError("cluster sigma must be positive")
    d = aoa_distance(_fold_from(array_pose, belief.positions), mean) / sigma
    if d.min() > params.degenerate_gate:
        raise BeliefDegenerate("no particle within gate of the AOA cluster")
    _reweight(belief, -0.5 * d * d, params, rng)
    belief.last_aoa = float(mean)
    belief.last_cluster = (float(mean), float(sigma))
    return belief


def update_world_bearing(belief: Belief, bearing: float, sigma: float, origin,
                         params: TrackerParams, rng) -> Belief:
    """Unambiguous bearing update (no fold), used for VHF AOA."""
    d = belief.positions - np.asarray(origin, dtype=float)
    r = wrap_pi(np.arctan2(d[:, 1], d[:, 0]) - bearing) / sigma
    if np.abs(r).min() > params.degenerate_gate:
        raise BeliefDegenerate("no particle within gate of the VHF bearing")
    _reweight(belief, -0.5 * r * r, params, rng)
    return belief


def reinit_on_degeneracy(belief: Belief, last_cluster, array_pose: Pose2D,
                         params: TrackerParams, rng) -> Belief:
    """Replace the particle set with a fresh two-sided init; keep identity."""
    fresh = init_belief(last_cluster, array_pose, params, rng, belief.id)
    belief.positions = fresh.positions
    belief.weights = fresh.weights
    belief.sides = fresh.sides
    belief.headings = fresh.headings
    belief.speeds = fresh.speeds
    belief.last_cluster = (float(last_cluster[0]), float(last_cluster[1]))
    belief.reinit_count += 1
    return belief


def _side_means(belief: Belief):
    out = {}
    for side in (LEFT, RIGHT):
        mask = belief.sides == side
        mass = belief.weights[mask].sum()
        if mask.any() and mass > 0:
            out[side] = (belief.weights[mask] @ belief.positions[mask]) / mass
    return out


def belief_aoa_cost(belief: Belief, cluster_mean: float, array_pose: Pose2D) -> float:
    """Min over the belief's sides of the folded-AOA distance to ``cluster_mean``."""
    costs = [aoa_distance(fold_aoa(math.atan2(p[1] - array_pose.y, p[0] - array_pose.x),
                                   array_pose.heading), cluster_mean)
             for p in _side_means(belief).values()]
    return min(costs) if costs else math.inf


def match_clusters(beliefs, clusters, array_pose: Pose2D, gate: float | None = None):
    """Min-cost assignment of AOA clusters to beliefs.

    Returns:
        ``(pairs, unmatched_clusters, unmatched_beliefs)`` where ``pairs`` is
        a list of ``(belief_index, cluster_index)``.
    """
    nb, nc = len(beliefs), len(clusters)
    if nb == 0 or nc == 0:
        return [], list(range(nc)), list(range(nb))
    cost = np.array([[belief_aoa_cost(b, c[0], array_pose) for c in clusters] for b in beliefs])
    rows, cols = linear_sum_assignment(np.where(np.isfinite(cost), cost, 1e6))
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)
             if gate is None or cost[r, c] <= gate]
    mb = {r for r, _ in pairs}
    mc = {c for _, c in pairs}
    return pairs, [c for c in range(nc) if c not in mc], [b for b in range(nb) if b not in mb]


def brute_force_assignment(cost: np.ndarray) -> float:
    """Exhaustive minimum assignment cost; small problems only."""
    nb, nc = cost.shape
    if nb <= nc:
        return min(sum(cost[i, p[i]] for i in range(nb))
                   for p in itertools.permutations(range(nc), nb))
    return min(sum(cost[p[j], j] for j in range(nc))
               for p in itertools.permutations(range(nb), nc))


def update_surfacing(belief: Belief, t: float, vhf_matched: bool,
                     params: TrackerParams) -> Belief:
    """Mark a belief surfaced once silent for ``delta_silent`` or VHF-matched.

    The flag is sticky; only an acoustic match (:func:`mark_acoustic_match`)
    clears it.
    """
    if not belief.surfaced and (t - belief.last_matched_t >= params.delta_silent or vhf_matched):
        belief.surfaced = True
        belief.surfaced_since = belief.last_matched_t
    return belief


def mark_acoustic_match(belief: Belief, t: float, amplitude: float) -> Belief:
    if belief.surfaced:
        belief.surfaced = False
        belief.underwater_since = t
        belief.surfaced_since = None
    belief.last_matched_t = t
    belief.last_amplitude = float(amplitude)
    return belief


def pair_by_amplitude(pre_amplitudes, post_amplitudes) -> dict[int, int]:
    """Pair pre- and post-maneuver clusters by nearest mean amplitude (log scale)."""
    pre = np.log(np.maximum(np.asarray(pre_amplitudes, dtype=float), 1e-12))
    post = np.log(np.maximum(np.asarray(post_amplitudes, dtype=float), 1e-12))
    if pre.size == 0 or post.size == 0:
        return {}
    rows, cols = linear_sum_assignment(np.abs(pre[:, None] - post[None, :]))
    return {int(r): int(c) for r, c in zip(rows, cols)}


def reject_side(belief: Belief, pre_cluster, post_cluster, array_pose_before: Pose2D,
                array_pose_after: Pose2D, params: TrackerParams) -> Belief:
    """Drop particles whose AOA change across a maneuver disagrees with the observed one.

    ``pre_cluster`` and ``post_cluster`` are the ``(mean, sigma)`` of the
    belief's cluster before and after the maneuver (paired by amplitude, see
    :func:`pair_by_amplitude`). For each particle, the residual of its
    predicted folded AOA against the cluster mean is compared before and
    after; particles whose residual shifts by more than the
    ``amp_reject_quantile`` two-sided normal quantile of the combined cluster
    spread (at least ``reject_gate_min``) are removed.

    Raises:
        BeliefDegenerate: every particle was rejected.
    """
    (m0, s0), (m1, s1) = pre_cluster, post_cluster
    e_before = aoa_residual(_fold_from(array_pose_before, belief.positions), m0)
    e_after = aoa_residual(_fold_from(array_pose_after, belief.positions), m1)
    z = norm.ppf(0.5 * (1.0 + params.amp_reject_quantile))
    # the array swings sideways in a turn, so range error alone shifts a
    # correct-side particle's AOA; the mirror side moves by far more
    band = max(z * math.hypot(s0, s1), params.reject_gate_min)
    keep = np.abs(aoa_residual(e_after, e_before)) <= band
    if not keep.any():
        raise BeliefDegenerate("all particles rejected after maneuver")
    if not keep.all():
        _take(belief, np.flatnonzero(keep))
        belief.weights = _normalize(belief.weights)
    return belief


def estimate(belief: Belief):
    """Weighted mean of the dominant side and that side's weight mass.

    A perfectly balanced belief resolves to the left side.
    """
    left, right = belief.side_mass()
    total = left + right
    side = LEFT if left >= right - 1e-12 else RIGHT
    mask = belief.sides == side
    w = belief.weights[mask]
    pos = (w @ belief.positions[mask]) / w.sum()
    return pos, (left if side == LEFT else right) / total


def init_from_bearing(belief: Belief, bearing: float, sigma: float, origin,
                      array_pose: Pose2D, params: TrackerParams, rng) -> Belief:
    """Re-seed a belief along an unambiguous world bearing (one-sided).

    Side labels are assigned from each particle's position relative to the
    array axis, so :func:`estimate` stays meaningful.
    """
    P = params.P
    world = rng.normal(bearing, sigma, P)
    r = rng.uniform(params.init_range_min, params.init_range_max, P)
    ox, oy = float(origin[0]), float(origin[1])
    belief.positions = np.column_stack([ox + r * np.cos(world), oy + r * np.sin(world)])
    d = belief.positions - np.array([array_pose.x, array_pose.y])
    rel = wrap_pi(np.arctan2(d[:, 1], d[:, 0]) - array_pose.heading)
    belief.sides = np.where(rel >= 0, LEFT, RIGHT).astype(np.int8)
    belief.weights = np.full(P, 1.0 / P)
    belief.headings = rng.uniform(0.0, 2.0 * math.pi, P)
    belief.speeds = rng.uniform(0.0, params.motion_speed_max, P)
    belief.reinit_count += 1
    return belief


@dataclass(frozen=True)
class ClusterObs:
    """One separated AOA cluster and its mean click amplitude."""

    mean: float
    sigma: float
    amplitude: float
    n: int = 1


def pool_clusters(a: ClusterObs, b: ClusterObs) -> ClusterObs:
    """Moment-matched union of two clusters on the folded-AOA circle."""
    n = a.n + b.n
    d = aoa_residual(b.mean, a.mean)
    mean = float(np.mod(a.mean + d * b.n / n, math.pi))
    var = (a.n * a.sigma ** 2 + b.n * b.sigma ** 2) / n + a.n * b.n * d * d / (n * n)
    amp = (a.n * a.amplitude + b.n * b.amplitude) / n
    return ClusterObs(mean, math.sqrt(var), amp, n)


class GroupTracker:
    """Owns the beliefs of all tracked groups and applies batch updates.

    Args:
        params: Per-belief filter parameters.
        k: Maximum number of simultaneously tracked groups.
        rng: Generator for every stochastic step.
        prune_after: Drop beliefs silent (no acoustic or VHF match) for
            longer than this many seconds. ``None`` keeps them forever.
    """

    def __init__(self, params: TrackerParams, k: int, rng, prune_after: float | None = None):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.params = params
        self.k = k
        self.rng = rng
        self.prune_after = prune_after
        self.beliefs: list[Belief] = []
        self._next_id = 0
        self._t = None
        self._last_heard: dict[int, float] = {}
        self._pending = None

    def predict_to(self, t: float):
        if self._t is not None and t > self._t:
            for b in self.beliefs:
                predict(b, t - self._t, self.rng, self.params)
        self._t = t if self._t is None else max(self._t, t)

    def begin_maneuver(self, t: float, array_pose_before: Pose2D, batch_period: float):
        """Remember pre-maneuver clusters of beliefs heard in the last batch."""
        pre = [(b.id, b.last_cluster, b.last_amplitude) for b in self.beliefs
               if b.last_matched_t >= t - batch_period + 1e-9 and not b.surfaced]
        self._pending = (array_pose_before, pre) if pre else None

    def _reject_after_maneuver(self, clusters, array_pose, events):
        pose_before, pre = self._pending
        self._pending = None
        pairs = pair_by_amplitude([a for _, _, a in pre], [c.amplitude for c in clusters])
        by_id = {b.id: b for b in self.beliefs}
        for i, j in pairs.items():
            bid, pre_cluster, _ = pre[i]
            b = by_id.get(bid)
            if b is None:
                continue
            post = (clusters[j].mean, clusters[j].sigma)
            before = len(b)
            try:
                reject_side(b, pre_cluster, post, pose_before, array_pose, self.params)
                events.append({"kind": "reject_side", "id": bid,
                               "removed": before - len(b)})
            except BeliefDegenerate:
                reinit_on_degeneracy(b, post, array_pose, self.params, self.rng)
                events.append({"kind": "reinit", "id": bid, "cause": "reject_side"})

    def process_batch(self, t: float, clusters, array_pose: Pose2D) -> list[dict]:
        """Predict to ``t``, then match, update and spawn from ``clusters``.

        Returns a list of event dicts describing what changed.
        """
        self.predict_to(t)
        events = []
        clusters = list(clusters)
        if self._pending is not None and clusters:
            self._reject_after_maneuver(clusters, array_pose, events)
        pairs, unmatched, _ = match_clusters(self.beliefs, [(c.mean, c.sigma) for c in clusters],
                                             array_pose, self.params.match_gate)
        assigned = {bi: clusters[ci] for bi, ci in pairs}
        fresh = []
        for ci in unmatched:
            # a split of an already tracked group is pooled back, not spawned
            c = clusters[ci]
            near = [(belief_aoa_cost(b, c.mean, array_pose), bi) for bi, b in enumerate(self.beliefs)
                    if belief_aoa_cost(b, c.mean, array_pose) <= self._gate(b, c)]
            if not near:
                fresh.append(c)
                continue
            _, bi = min(near)
            assigned[bi] = pool_clusters(assigned[bi], c) if bi in assigned else c
        for bi in sorted(assigned):
            b, c = self.beliefs[bi], assigned[bi]
            try:
                update(b, (c.mean, c.sigma), array_pose, self.params, self.rng)
            except BeliefDegenerate:
                reinit_on_degeneracy(b, (c.mean, c.sigma), array_pose, self.params, self.rng)
                events.append({"kind": "reinit", "id": b.id, "cause": "update"})
            was = b.surfaced
            mark_acoustic_match(b, t, c.amplitude)
            left, right = b.side_mass()
            sign = 1.0 if left >= right - 1e-12 else -1.0
            b.last_world_aoa = float(wrap_2pi(array_pose.heading + sign * c.mean))
            self._last_heard[b.id] = t
            if was:
                events.append({"kind": "surfacing", "id": b.id, "surfaced": False})
        for c in fresh:
            if len(self.beliefs) >= self.k:
                break
            b = init_belief((c.mean, c.sigma), array_pose, self.params, self.rng, self._next_id, t)
            b.last_amplitude = c.amplitude
            b.last_world_aoa = float(wrap_2pi(array_pose.heading + c.mean))
            self._next_id += 1
            self.beliefs.append(b)
            self._last_heard[b.id] = t
            events.append({"kind": "spawn", "id": b.id})
        events.extend(self.refresh_surfacing(t, ()))
        self._prune(t, events)
        return events

    def _gate(self, b: Belief, c: ClusterObs) -> float:
        return max(self.params.spawn_gate * math.hypot(c.sigma, b.last_cluster[1]),
                   self.params.spawn_gate_min)

    def apply_vhf(self, t: float, bearing: float, sigma: float, origin,
                  array_pose: Pose2D) -> int | None:
        """Fuse an unambiguous bearing into the nearest-bearing belief; return its id."""
        self.predict_to(t)
        if not self.beliefs:
            return None
        o = np.asarray(origin, dtype=float)

        def cost(b):
            means = _side_means(b).values()
            return min((abs(float(wrap_pi(math.atan2(m[1] - o[1], m[0] - o[0]) - bearing)))
                        for m in means), default=math.inf)

        b = min(self.beliefs, key=cost)
        try:
            update_world_bearing(b, bearing, sigma, o, self.params, self.rng)
        except BeliefDegenerate:
            init_from_bearing(b, bearing, sigma, o, array_pose, self.params, self.rng)
        self._last_heard[b.id] = t
        return b.id

    def refresh_surfacing(self, t: float, vhf_matched_ids) -> list[dict]:
        events = []
        for b in self.beliefs:
            was = b.surfaced
            update_surfacing(b, t, b.id in vhf_matched_ids, self.params)
            if b.surfaced and not was:
                events.append({"kind": "surfacing", "id": b.id, "surfaced": True})
        return events

    def _prune(self, t, events):
        if self.prune_after is None:
            return
        keep = []
        for b in self.beliefs:
            if t - self._last_heard.get(b.id, b.created_t) > self.prune_after:
                events.append({"kind": "prune", "id": b.id})
            else:
                keep.append(b)
        self.beliefs = keep

    def snapshots(self) -> list[dict]:
        return [b.snapshot() for b in self.beliefs]
