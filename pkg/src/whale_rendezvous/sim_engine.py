"""Closed-loop scenario execution and Monte Carlo sweeps.

One run advances ground truth on a fixed tick, emits acoustic batches to
the separation and tracking stack, injects VHF bearings for tagged whales
while they are surfaced, lets the boat maneuver on its decision epochs and
lets the planner fly the UAV. Every decision lands in an event trace.
"""
from __future__ import annotations

import bisect
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import planner as pl
from .acoustic import AcousticNoiseParams, observe_batch
from .dive_model import AnchorState, DiveModelParams, sample_schedule
from .maneuver import HOLD, BeliefView, ManeuverParams, decide_maneuver
from .rng import substream
from .separation import SeparationParams, select_model
from .tracker import ClusterObs, GroupTracker, TrackerParams, estimate
from .world import (BoatState, FlightStatus, Pose2D, UAVState, bearing, intercept_time,
                    move_toward, wrap_2pi)

TRAJECTORY_COLUMNS = ("t_s", "whale_id", "x_m", "y_m", "surfaced_flag")


class TrajectoryError(ValueError):
    """Invalid trajectory file; ``row`` is the 1-based data row (header excluded)."""

    def __init__(self, msg: str, row: int | None = None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


class SimulationError(RuntimeError):
    """A module error raised during a run, tagged with the tick time."""

    def __init__(self, t: float, cause: Exception):
        super().__init__(f"t={t:g}s: {type(cause).__name__}: {cause}")
        self.t = t


@dataclass
class Trajectory:
    """Piecewise-linear whale track with surfacing intervals ``[start, end)``."""

    whale_id: str
    t: np.ndarray
    xy: np.ndarray
    intervals: tuple = ()

    def position(self, t) -> np.ndarray:
        """Position at time(s) ``t``; clamped to the first/last sample."""
        tt = np.asarray(t, dtype=float)
        out = np.stack([np.interp(tt, self.t, self.xy[:, 0]),
                        np.interp(tt, self.t, self.xy[:, 1])], axis=-1)
        return out

    def is_surfaced(self, t: float) -> bool:
        i = bisect.bisect_right([a for a, _ in self.intervals], t) - 1
        return i >= 0 and t < self.intervals[i][1]

    @property
    def end(self) -> float:
        return float(self.t[-1])


def _intervals_from_flags(t, flags):
    out = []
    start = None
    for ti, f in zip(t, flags):
        if f and start is None:
            start = ti
        elif not f and start is not None:
            out.append((float(start), float(ti)))
            start = None
    if start is not None and t[-1] > start:
        out.append((float(start), float(t[-1])))
    return tuple(out)


def load_trajectory(path) -> dict[str, Trajectory]:
    """Read whale tracks from CSV, keyed by ``whale_id``.

    Columns: ``t_s, whale_id, x_m, y_m, surfaced_flag`` (flag 0/1). Times
    must strictly increase within each whale id.

    Raises:
        TrajectoryError: missing columns, unparsable or NaN values, bad
            flags, or non-increasing time; the message names the row.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    rows: dict[str, list] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRAJECTORY_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise TrajectoryError(f"missing columns: {', '.join(missing)}")
        for n, rec in enumerate(reader, start=1):
            try:
                t, x, y = float(rec["t_s"]), float(rec["x_m"]), float(rec["y_m"])
                flag = float(rec["surfaced_flag"])
            except (TypeError, ValueError):
                raise TrajectoryError("non-numeric value", n) from None
            if not all(math.isfinite(v) for v in (t, x, y, flag)):
                raise TrajectoryError("NaN or infinite value", n)
            if flag not in (0.0, 1.0):
                raise TrajectoryError(f"surfaced_flag must be 0 or 1, got {rec['surfaced_flag']}", n)
            wid = str(rec["whale_id"]).strip()
            if not wid:
                raise TrajectoryError("empty whale_id", n)
            track = rows.setdefault(wid, [])
            if track and t <= track[-1][0]:
                raise TrajectoryError(f"time {t:g} not strictly increasing for whale {wid}", n)
            track.append((t, x, y, int(flag)))
    if not rows:
        raise TrajectoryError("no data rows")
    out = {}
    for wid, track in rows.items():
        a = np.asarray(track, dtype=float)
        out[wid] = Trajectory(wid, a[:, 0], a[:, 1:3], _intervals_from_flags(a[:, 0], a[:, 3] > 0.5))
    return out


def write_trajectory(path, trajectories):
    """Write tracks in the :func:`load_trajectory` format (flag sampled per row)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for tr in trajectories:
            for t, (x, y) in zip(tr.t, tr.xy):
                w.writerow([f"{t:.3f}", tr.whale_id, f"{x:.3f}", f"{y:.3f}", int(tr.is_surfaced(t))])


@dataclass(frozen=True)
class SyntheticWhaleParams:
    """Correlated random-walk whales with dive-model surfacings."""

    n_whales: int = 1
    n_tagged: int = 1
    n_surfacings: int = 3
    speed_min: float = 0.5
    speed_max: float = 2.0
    heading_sigma: float = 0.02       # rad / sqrt(s)
    range_min: float = 300.0
    range_max: float = 1000.0
    first_dive_min: float = 600.0     # s of vocal tracking before the first surfacing
    sample_period: float = 10.0

    def __post_init__(self):
        if self.n_whales < 1 or self.n_surfacings < 1:
            raise ValueError("n_whales and n_surfacings must be >= 1")
        if not 0 <= self.n_tagged <= self.n_whales:
            raise ValueError("n_tagged must be within [0, n_whales]")
        if not 0 < self.speed_min <= self.speed_max:
            raise ValueError("need 0 < speed_min <= speed_max")
        if not 0 < self.range_min <= self.range_max:
            raise ValueError("need 0 < range_min <= range_max")


def generate_trajectory(params: SyntheticWhaleParams, dive: DiveModelParams, origin, rng,
                        whale_id: str = "0") -> Trajectory:
    """One synthetic whale starting underwater somewhere around ``origin``."""
    horizon = (params.n_surfacings + 2) * 2.0 * dive.cycle_s
    while True:
        sched = sample_schedule(dive, 0.0, AnchorState.UNDERWATER_SINCE, horizon, rng,
                                now=params.first_dive_min)
        if len(sched.intervals) >= params.n_surfacings:
            break
        horizon *= 2.0
    intervals = sched.intervals[: params.n_surfacings]
    end = intervals[-1][1] + params.sample_period
    dt = params.sample_period
    n = int(math.ceil(end / dt)) + 1
    t = np.arange(n) * dt
    r = rng.uniform(params.range_min, params.range_max)
    th = rng.uniform(0.0, 2.0 * math.pi)
    xy = np.empty((n, 2))
    xy[0] = (origin[0] + r * math.cos(th), origin[1] + r * math.sin(th))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    speed = rng.uniform(params.speed_min, params.speed_max)
    for i in range(1, n):
        heading += rng.normal(0.0, params.heading_sigma * math.sqrt(dt))
        speed = float(np.clip(speed + rng.normal(0.0, 0.02 * math.sqrt(dt)),
                              params.speed_min, params.speed_max))
        xy[i] = xy[i - 1] + speed * dt * np.array([math.cos(heading), math.sin(heading)])
    return Trajectory(str(whale_id), t, xy, tuple(intervals))


@dataclass(frozen=True)
class WhaleSpec:
    trajectory: str
    whale_id: str | None = None
    tagged: bool = True


@dataclass(frozen=True)
class BoatConfig:
    x: float = 0.0
    y: float = 0.0
    heading_deg: float | None = None   # None: uniform random
    speed: float | None = None         # None: uniform in [speed_min, speed_max]
    speed_min: float = 2.0
    speed_max: float = 6.0
    array_offset: float = 100.0
    realism: bool = True

    def __post_init__(self):
        if not 0 < self.speed_min <= self.speed_max:
            raise ValueError("need 0 < speed_min <= speed_max")
        if self.speed is not None and self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.realism:
            lo, hi = (self.speed, self.speed) if self.speed is not None else (self.speed_min, self.speed_max)
            if lo < 2.0 or hi > 6.0:
                raise ValueError("boat speed outside [2, 6] m/s with realism enabled")
        if self.array_offset <= 0:
            raise ValueError("array_offset must be positive")


@dataclass(frozen=True)
class UAVConfig:
    max_speed: float = 10.0
    flight_budget: float = 900.0       # s per takeoff
    takeoff_time: float = 0.0

    def __post_init__(self):
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")
        if self.flight_budget < 0 or self.takeoff_time < 0:
            raise ValueError("flight_budget and takeoff_time must be >= 0")


@dataclass(frozen=True)
class VHFSimConfig:
    enabled: bool = True
    sigma_deg: float | None = None     # None: same as the acoustic noise
    range_max: float = 2000.0

    def __post_init__(self):
        if self.sigma_deg is not None and self.sigma_deg < 0:
            raise ValueError("sigma_deg must be >= 0")
        if self.range_max <= 0:
            raise ValueError("range_max must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    M: int = 100
    delta: float = 120.0
    rendezvous_radius: float = 200.0
    horizon: float | None = None       # None: two dive cycles
    tail: float | None = None          # None: one dive cycle
    min_wait: float = 1.0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.delta <= 0 or self.rendezvous_radius <= 0:
            raise ValueError("delta and rendezvous_radius must be positive")


@dataclass(frozen=True)
class SimOptions:
    arrival_wait: float = 60.0         # hover at a candidate before moving on
    safety_margin: float = 10.0        # s of reserve kept for the flight home
    prune_after: float | None = 1800.0
    min_cluster_frac: float = 0.25     # of clicks_per_batch; smaller clusters are dropped
    record_trace: bool = True


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    duration: float | None = None      # None: until the last surfacing ends
    tick: float = 1.0
    batch_period: float = 10.0
    whales: tuple = ()                 # WhaleSpec; empty means synthetic
    synthetic: SyntheticWhaleParams = SyntheticWhaleParams()
    boat: BoatConfig = BoatConfig()
    uav: UAVConfig = UAVConfig()
    acoustic: AcousticNoiseParams = AcousticNoiseParams()
    vhf: VHFSimConfig = VHFSimConfig()
    dive_model: DiveModelParams = DiveModelParams()
    separation: SeparationParams = SeparationParams()
    tracker: TrackerParams = TrackerParams()
    maneuver: ManeuverParams = ManeuverParams()
    planner: PlannerConfig = PlannerConfig()
    sim: SimOptions = SimOptions()
    base_dir: str = "."

    def __post_init__(self):
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.tick <= 0 or self.batch_period <= 0:
            raise ValueError("tick and batch_period must be positive")
        ratio = self.batch_period / self.tick
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("batch_period must be a multiple of tick")
        ratio = self.maneuver.decision_period / self.batch_period
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("maneuver decision_period must be a multiple of batch_period")

    def planner_params(self, home=(0.0, 0.0)) -> pl.PlannerParams:
        p = self.planner
        kw = dict(M=p.M, delta=p.delta, rendezvous_radius=p.rendezvous_radius, v_max=self.uav.max_speed,
                  home=tuple(home), flight_budget=self.uav.flight_budget,
                  takeoff_time=self.uav.takeoff_time, min_wait=p.min_wait)
        if p.horizon is not None:
            kw["horizon"] = p.horizon
        if p.tail is not None:
            kw["tail"] = p.tail
        return pl.PlannerParams.for_dive_model(self.dive_model, **kw)


@dataclass
class SurfacingMetric:
    whale_id: str
    index: int
    start: float
    end: float
    min_error: float | None = None
    t_min: float | None = None         # seconds after surfacing start
    n_samples: int = 0


@dataclass
class AttemptMetric:
    takeoff_t: float
    land_t: float | None = None
    success: bool = False
    min_distance: float | None = None  # to any surfaced whale while airborne
    flight_time: float = 0.0


@dataclass
class Metrics:
    seed: int
    duration: float
    surfacings: list = field(default_factory=list)
    attempts: list = field(default_factory=list)
    reinit_count: int = 0
    side_resolution_time: float | None = None
    flight_time_used: float = 0.0

    @property
    def rendezvous_success(self) -> bool:
        return any(a.success for a in self.attempts)

    @property
    def rendezvous_distance(self) -> float | None:
        d = [a.min_distance for a in self.attempts if a.success]
        return min(d) if d else None

    def min_errors(self) -> list[float]:
        return [s.min_error for s in self.surfacings if s.min_error is not None]

    def rows(self) -> list[tuple]:
        """Long-format ``(scope, index, name, value)`` rows for CSV output."""
        out = [("run", 0, "seed", self.seed), ("run", 0, "duration_s", self.duration),
               ("run", 0, "rendezvous_success", int(self.rendezvous_success)),
               ("run", 0, "rendezvous_distance_m", self.rendezvous_distance),
               ("run", 0, "flight_time_used_s", self.flight_time_used),
               ("run", 0, "reinit_count", self.reinit_count),
               ("run", 0, "side_resolution_time_s", self.side_resolution_time)]
        for i, s in enumerate(self.surfacings):
            out += [("surfacing", i, "whale_id", s.whale_id), ("surfacing", i, "start_s", s.start),
                    ("surfacing", i, "end_s", s.end), ("surfacing", i, "min_error_m", s.min_error),
                    ("surfacing", i, "t_min_s", s.t_min), ("surfacing", i, "n_samples", s.n_samples)]
        for i, a in enumerate(self.attempts):
            out += [("attempt", i, "takeoff_s", a.takeoff_t), ("attempt", i, "land_s", a.land_t),
                    ("attempt", i, "success", int(a.success)),
                    ("attempt", i, "min_distance_m", a.min_distance),
                    ("attempt", i, "flight_time_s", a.flight_time)]
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_metrics_csv(path, metrics: Metrics):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scope", "index", "name", "value"))
        for scope, i, name, v in metrics.rows():
            w.writerow((scope, i, name, _fmt(v)))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return round(v, 6) if math.isfinite(v) else None
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if hasattr(v, "value"):
        return _jsonable(v.value)
    if hasattr(v, "name"):
        return v.name
    return v


def event_line(ev: dict) -> str:
    return json.dumps(_jsonable(ev), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_trace(path, events):
    with Path(path).open("w") as fh:
        for ev in events:
            fh.write(event_line(ev) + "\n")


def resolve_whales(scenario: Scenario, rng=None):
    """``[(Trajectory, tagged)]`` for the scenario, loading or generating tracks."""
    if scenario.whales:
        out = []
        for spec in scenario.whales:
            path = Path(spec.trajectory)
            if not path.is_absolute():
                path = Path(scenario.base_dir) / path
            tracks = load_trajectory(path)
            if spec.whale_id is not None:
                if spec.whale_id not in tracks:
                    raise TrajectoryError(f"whale_id {spec.whale_id!r} not in {path}")
                out.append((tracks[spec.whale_id], spec.tagged))
            else:
                out.extend((tracks[k], spec.tagged) for k in sorted(tracks))
        return out
    rng = rng if rng is not None else substream(scenario.seed, "trajectory")
    syn = scenario.synthetic
    origin = (scenario.boat.x, scenario.boat.y)
    return [(generate_trajectory(syn, scenario.dive_model, origin, rng, str(i)), i < syn.n_tagged)
            for i in range(syn.n_whales)]


class _Run:
    """Mutable state of one closed-loop run."""

    def __init__(self, scenario: Scenario):
        sc = scenario
        self.sc = sc
        seed = sc.seed
        self.rng_acoustic = substream(seed, "acoustic")
        self.rng_sep = substream(seed, "separation")
        self.rng_vhf = substream(seed, "vhf")
        rng_boat = substream(seed, "boat")

        self.whales = resolve_whales(sc)
        if sc.duration is not None:
            self.duration = float(sc.duration)
        else:
            ends = [tr.intervals[-1][1] if tr.intervals else tr.end for tr, _ in self.whales]
            self.duration = math.ceil(max(ends) / sc.batch_period) * sc.batch_period

        b = sc.boat
        heading = rng_boat.uniform(0.0, 2.0 * math.pi) if b.heading_deg is None \
            else math.radians(b.heading_deg)
        speed = rng_boat.uniform(b.speed_min, b.speed_max) if b.speed is None else b.speed
        self.boat = BoatState(Pose2D(b.x, b.y, heading), speed, b.array_offset)

        self.tracker = GroupTracker(sc.tracker, sc.separation.k, substream(seed, "tracker"),
                                    sc.sim.prune_after)
        self.events = [] if sc.sim.record_trace else None
        self.metrics = Metrics(seed=sc.seed, duration=self.duration)

        self.n_ticks = int(round(self.duration / sc.tick))
        self.times = np.arange(self.n_ticks + 1) * sc.tick
        self.truth = [tr.position(self.times) for tr, _ in self.whales]
        self.surf_metrics = {}
        for wi, (tr, _) in enumerate(self.whales):
            for k, (a, e) in enumerate(tr.intervals):
                if a < self.duration:
                    m = SurfacingMetric(tr.whale_id, k, a, e)
                    self.metrics.surfacings.append(m)
                    self.surf_metrics[(wi, k)] = m

        # UAV state
        self.uav_pos = self.boat.pose.xy
        self.flying = False
        self.remaining = 0.0
        self.action = pl.Action.WAIT
        self.candidate = None
        self.hover_until = None
        self.visited: set[int] = set()
        self.attempt = None
        self.pending_followup = None
        self.vhf_sigma = max(math.radians(sc.vhf.sigma_deg if sc.vhf.sigma_deg is not None
                                          else sc.acoustic.sigma_deg), sc.separation.sigma_floor)

    # -- helpers -----------------------------------------------------------
    def emit(self, t, kind, payload):
        if self.events is not None:
            self.events.append({"t": t, "kind": kind, "payload": payload})

    def surfaced(self, wi, t):
        return self.whales[wi][0].is_surfaced(t)

    def belief_by_id(self, bid):
        for b in self.tracker.beliefs:
            if b.id == bid:
                return b
        return None

    # -- sensing and tracking ------------------------------------------------
    def batch(self, t, i):
        sc = self.sc
        array_pose = self.boat.array_pose()
        whales = [(self.truth[w][i], self.surfaced(w, t)) for w in range(len(self.whales))]
        meas = observe_batch(whales, array_pose, sc.acoustic, t, self.rng_acoustic, sc.batch_period)
        clusters = []
        if meas:
            aoas = np.array([m.aoa for m in meas])
            amps = np.array([m.amplitude for m in meas])
            fit = select_model(aoas, sc.separation, self.rng_sep)
            min_pts = max(1, int(math.ceil(sc.sim.min_cluster_frac * sc.acoustic.clicks_per_batch)))
            for j, (mu, sd) in enumerate(fit.clusters()):
                sel = fit.assignments == j
                if sel.sum() >= min_pts:
                    clusters.append(ClusterObs(mu, sd, float(amps[sel].mean()), int(sel.sum())))
        events = self.tracker.process_batch(t, clusters, array_pose)
        self.emit(t, "acoustic_batch", {"n": len(meas), "clusters": [asdict(c) for c in clusters],
                                        "array_pose": [array_pose.x, array_pose.y, array_pose.heading]})

        vhf_ids = set()
        if sc.vhf.enabled:
            here = self.boat.pose
            for w, (tr, tagged) in enumerate(self.whales):
                pos = self.truth[w][i]
                if not tagged or not whales[w][1] or here.distance_to(pos) > sc.vhf.range_max:
                    continue
                brg = bearing(here, pos) + self.rng_vhf.normal(0.0, self.vhf_sigma)
                bid = self.tracker.apply_vhf(t, brg, self.vhf_sigma, here.xy, array_pose)
                if bid is not None:
                    vhf_ids.add(bid)
                    self.emit(t, "vhf", {"belief": bid, "bearing": wrap_2pi(brg),
                                         "sigma": self.vhf_sigma})
            events += self.tracker.refresh_surfacing(t, vhf_ids)
        for ev in events:
            if ev["kind"] == "reinit":
                self.metrics.reinit_count += 1
        # a candidate that dove again may be visited again
        self.visited = {v for v in self.visited
                        if (b := self.belief_by_id(v)) is not None and b.surfaced}
        if self.events is not None:
            self.emit(t, "tracker", {"events": events, "beliefs": self.tracker.snapshots()})
        self.score(t, i)
        return events

    def score(self, t, i):
        beliefs = self.tracker.beliefs
        if not beliefs:
            return
        ests = [estimate(b) for b in beliefs]
        for w, (tr, _) in enumerate(self.whales):
            pos = self.truth[w][i]
            errs = [math.hypot(p[0] - pos[0], p[1] - pos[1]) for p, _ in ests]
            j = int(np.argmin(errs))
            if self.metrics.side_resolution_time is None and ests[j][1] >= 0.99:
                self.metrics.side_resolution_time = t
            k = bisect.bisect_right([a for a, _ in tr.intervals], t) - 1
            if k < 0 or not t < tr.intervals[k][1] or (w, k) not in self.surf_metrics:
                continue
            m = self.surf_metrics[(w, k)]
            m.n_samples += 1
            if m.min_error is None or errs[j] < m.min_error:
                m.min_error = errs[j]
                m.t_min = t - m.start

    # -- boat -----------------------------------------------------------------
    def belief_views(self):
        array_pose = self.boat.array_pose()
        out = []
        for b in self.tracker.beliefs:
            pos, _ = estimate(b)
            aoa = b.last_world_aoa
            if aoa is None:
                try:
                    aoa = bearing(array_pose, pos)
                except ValueError:
                    aoa = array_pose.heading
            out.append(BeliefView((float(pos[0]), float(pos[1])), b.last_amplitude, aoa))
        return out

    def maneuver(self, t):
        views = self.belief_views()
        before = self.boat.array_pose()
        d = decide_maneuver(self.boat, views, t, self.sc.maneuver)
        self.emit(t, "maneuver", {"action": d.action, "turn_deg": d.turn_deg, "costs": d.costs,
                                  "boat": [self.boat.pose.x, self.boat.pose.y, self.boat.pose.heading],
                                  "beliefs": [asdict(v) for v in views]})
        if d.action != HOLD and d.new_heading is not None:
            self._set_heading(t, d.new_heading, before)
            if self.sc.maneuver.followup_180:
                self.pending_followup = t + self.sc.maneuver.followup_180_delay

    def _set_heading(self, t, heading, before):
        p = self.boat.pose
        if abs(wrap_2pi(heading - p.heading)) < 1e-12:
            return
        self.boat = replace(self.boat, pose=Pose2D(p.x, p.y, heading))
        self.tracker.begin_maneuver(t, before, self.sc.batch_period)

    def followup(self, t):
        self.pending_followup = None
        views = self.belief_views()
        if not views:
            return
        here = self.boat.pose
        j = int(np.argmin([math.hypot(v.position[0] - here.x, v.position[1] - here.y) for v in views]))
        b = self.tracker.beliefs[j]
        if b.last_aoa > math.pi / 2:
            before = self.boat.array_pose()
            self._set_heading(t, wrap_2pi(here.heading + math.pi), before)
            self.emit(t, "maneuver", {"action": "followup_180", "belief": b.id, "last_aoa": b.last_aoa})

    # -- UAV ------------------------------------------------------------------
    def pick_candidate(self):
        pool = [b for b in self.tracker.beliefs if b.id not in self.visited]
        if not pool:
            return None
        surfaced = [b for b in pool if b.surfaced]
        pool = surfaced or pool
        ref = self.uav_pos
        return min(pool, key=lambda b: (float(np.hypot(*(estimate(b)[0] - ref))), b.id))

    def plan(self, t):
        sc = self.sc
        if sc.uav.flight_budget <= 0 and not self.flying:
            return
        if self.hover_until is not None:
            return
        b = self.pick_candidate()
        self.candidate = None if b is None else b.id
        if b is None:
            self.action = pl.Action.GO_HOME if self.flying else pl.Action.WAIT
            return
        home = self.boat.pose.xy
        params = sc.planner_params(home=(float(home[0]), float(home[1])))
        status = FlightStatus.IN_FLIGHT if self.flying else FlightStatus.GROUNDED
        uav = UAVState(Pose2D(float(self.uav_pos[0]), float(self.uav_pos[1])), sc.uav.max_speed,
                       self.remaining if self.flying else sc.uav.flight_budget, status)
        anchor = (b.surfaced_since, AnchorState.SURFACED_SINCE) if b.surfaced \
            else (b.underwater_since, AnchorState.UNDERWATER_SINCE)
        # same schedule draws for a candidate on every decision (common random numbers)
        rng = substream(sc.seed, "planner", b.id)
        particles = pl.make_planner_particles(b, uav, sc.dive_model, anchor, params.M,
                                              params.horizon, rng, now=t)
        action, q = pl.choose_action(particles, status, params, return_q=True)
        est, conf = estimate(b)
        self.emit(t, "plan", {"status": status.value, "candidate": b.id, "estimate": est,
                              "side_confidence": conf, "surfaced": b.surfaced,
                              "anchor": [anchor[0], anchor[1].value], "uav": self.uav_pos,
                              "remaining": uav.remaining_flight, "home": home,
                              "q": {u.name: v for u, v in q.items()}, "action": action.name})
        self.action = action
        if action is pl.Action.TAKEOFF:
            self.flying = True
            self.remaining = sc.uav.flight_budget
            self.uav_pos = self.boat.pose.xy
            self.attempt = AttemptMetric(takeoff_t=t)
            self.metrics.attempts.append(self.attempt)
            self.emit(t, "takeoff", {"budget": self.remaining})
            # the takeoff Q-value assumed the base policy continues to the belief
            self.action = pl.Action.GO_TO_BELIEF

    def fly(self, t, i, dt):
        sc = self.sc
        v = sc.uav.max_speed
        boat_next = self.boat.pose.xy + self.boat.velocity() * dt
        vel = self.boat.velocity()
        action = self.action
        target = None
        if action is pl.Action.GO_TO_BELIEF:
            b = self.belief_by_id(self.candidate) if self.candidate is not None else None
            if b is None:
                action = pl.Action.GO_HOME
            else:
                target = estimate(b)[0]
        if action is pl.Action.GO_TO_BELIEF:
            nxt = move_toward(self.uav_pos, target, v * dt)
            back = intercept_time(nxt, v, boat_next, vel)
            if self.remaining - dt < back + sc.sim.safety_margin:
                action = pl.Action.GO_HOME
                self.action = action
                self.hover_until = None
                self.emit(t, "safety_override", {"remaining": self.remaining, "time_home": back})
        if action is pl.Action.GO_TO_BELIEF:
            self.uav_pos = nxt
            if np.allclose(nxt, target) and self.hover_until is None:
                self.hover_until = t + sc.sim.arrival_wait
                self.emit(t, "arrival", {"candidate": self.candidate, "at": nxt})
            elif self.hover_until is not None and t >= self.hover_until:
                self.visited.add(self.candidate)
                self.hover_until = None
                self.emit(t, "candidate_done", {"candidate": self.candidate})
        else:
            here = self.boat.pose.xy
            ti = intercept_time(self.uav_pos, v, here, vel)
            aim = here + vel * ti if math.isfinite(ti) else here
            self.uav_pos = move_toward(self.uav_pos, aim, v * dt)
        self.remaining = max(self.remaining - dt, 0.0)
        self.attempt.flight_time += dt
        self.metrics.flight_time_used += dt
        if action is pl.Action.GO_HOME and np.hypot(*(self.uav_pos - boat_next)) <= v * dt:
            self.uav_pos = boat_next
            self.flying = False
            self.hover_until = None
            self.action = pl.Action.WAIT
            self.attempt.land_t = t + dt
            self.emit(t + dt, "land", {"remaining": self.remaining})
            self.attempt = None
            return
        for w in range(len(self.whales)):
            if not self.surfaced(w, t + dt):
                continue
            pos = self.whales[w][0].position(t + dt)
            d = float(np.hypot(*(self.uav_pos - pos)))
            a = self.attempt
            if a.min_distance is None or d < a.min_distance:
                a.min_distance = d
            if d <= sc.planner.rendezvous_radius and not a.success:
                a.success = True
                self.emit(t + dt, "rendezvous", {"whale": self.whales[w][0].whale_id, "distance": d})

    # -- main loop ------------------------------------------------------------
    def run(self):
        sc = self.sc
        dt = sc.tick
        per_batch = int(round(sc.batch_period / dt))
        per_maneuver = int(round(sc.maneuver.decision_period / dt))
        self.emit(0.0, "start", {"seed": sc.seed, "duration": self.duration,
                                 "boat": [self.boat.pose.x, self.boat.pose.y,
                                          self.boat.pose.heading, self.boat.speed],
                                 "whales": [{"id": tr.whale_id, "tagged": tag,
                                             "surfacings": tr.intervals} for tr, tag in self.whales]})
        for i in range(self.n_ticks):
            t = float(self.times[i])
            try:
                if i % per_batch == 0:
                    self.batch(t, i)
                    self.plan(t)
                if i > 0 and i % per_maneuver == 0:
                    self.maneuver(t)
                if self.pending_followup is not None and t >= self.pending_followup:
                    self.followup(t)
                if self.flying:
                    self.fly(t, i, dt)
                self.boat = replace(self.boat, pose=Pose2D(
                    *(self.boat.pose.xy + self.boat.velocity() * dt), self.boat.pose.heading))
                if not self.flying:
                    self.uav_pos = self.boat.pose.xy
            except SimulationError:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with the tick time
                raise SimulationError(t, e) from e
        m = self.metrics
        self.emit(self.duration, "end", {"rendezvous_success": m.rendezvous_success,
                                         "reinit_count": m.reinit_count,
                                         "flight_time_used": m.flight_time_used,
                                         "min_errors": [s.min_error for s in m.surfacings]})
        return m, (self.events if self.events is not None else [])


def run(scenario: Scenario):
    """Execute one scenario; returns ``(Metrics, events)``."""
    return _Run(scenario).run()


# -- sweeps ---------------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    sigma_deg: float
    vhf: bool
    flight_budget: float


def _run_cell(args):
    template, cell, trials, seed_base = args
    sc = replace(template,
                 acoustic=replace(template.acoustic, sigma_deg=cell.sigma_deg),
                 vhf=replace(template.vhf, enabled=cell.vhf),
                 uav=replace(template.uav, flight_budget=cell.flight_budget),
                 sim=replace(template.sim, record_trace=False))
    out = []
    for k in range(trials):
        m, _ = run(replace(sc, seed=seed_base + k))
        out.append(m)
    return out


def summarize(errors, confidence: float = 0.99):
    """``(mean, std, ci_halfwidth)`` with a Student-t interval."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(e.mean())
    if e.size == 1:
        return mean, 0.0, 0.0
    std = float(e.std(ddof=1))
    half = float(stats.t.ppf(0.5 * (1 + confidence), e.size - 1) * std / math.sqrt(e.size))
    return mean, std, half


def sweep(template: Scenario, sigmas=(0.1, 5.0, 10.0, 15.0), flight_budgets=None,
          vhf_modes=(False, True), trials: int = 25, seed_base: int = 0, workers: int = 1):
    """Run every (sigma, vhf, flight budget) cell for ``trials`` seeds.

    Trials share seeds across cells, so cells differ only by the swept
    setting. Returns a list of per-cell dicts. Relative errors are
    normalized by the acoustic-only cell at the smallest sigma (and the same
    flight budget) when that cell is part of the sweep.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    budgets = (template.uav.flight_budget,) if flight_budgets is None else tuple(flight_budgets)
    cells = [CellSpec(float(s), bool(v), float(f)) for f in budgets for v in vhf_modes for s in sigmas]
    jobs = [(template, c, trials, seed_base) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    rows = []
    for c, ms in zip(cells, results):
        errors = [e for m in ms for e in m.min_errors()]
        t_mins = [s.t_min for m in ms for s in m.surfacings if s.t_min is not None]
        mean, std, half = summarize(errors)
        succ = sum(m.rendezvous_success for m in ms)
        rows.append({"sigma_deg": c.sigma_deg, "vhf": c.vhf, "flight_budget_s": c.flight_budget,
                     "trials": len(ms), "n_surfacings": len(errors), "mean_error_m": mean,
                     "std_error_m": std, "ci99_m": half,
                     "median_t_min_s": float(np.median(t_mins)) if t_mins else math.nan,
                     "successes": int(succ), "success_rate": succ / len(ms),
                     "reinit_count": int(sum(m.reinit_count for m in ms))})
    smin = min(float(s) for s in sigmas)
    for r in rows:
        ref = next((x for x in rows if not x["vhf"] and x["sigma_deg"] == smin
                    and x["flight_budget_s"] == r["flight_budget_s"]), None)
        if ref is None or not ref["mean_error_m"] > 0:
            r["rel_mean"] = r["rel_ci99"] = r["rel_std"] = math.nan
        else:
            r["rel_mean"] = r["mean_error_m"] / ref["mean_error_m"]
            r["rel_std"] = r["std_error_m"] / ref["mean_error_m"]
            r["rel_ci99"] = r["ci99_m"] / ref["mean_error_m"]
    return rows
