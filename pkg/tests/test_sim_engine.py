import json
import math
from dataclasses import replace

import numpy as np
import pytest

from whale_rendezvous.config import scenario_from_dict
from whale_rendezvous.sim_engine import (Metrics, Scenario, SimulationError, SurfacingMetric,
                                         SyntheticWhaleParams, TrajectoryError, UAVConfig,
                                         VHFSimConfig, event_line, load_trajectory,
                                         resolve_whales, run, summarize, sweep,
                                         write_metrics_csv, write_trace, write_trajectory)

HEADER = "t_s,whale_id,x_m,y_m,surfaced_flag\n"


def write_csv(path, rows, header=HEADER):
    path.write_text(header + "".join(",".join(str(v) for v in r) + "\n" for r in rows))
    return path


# load_trajectory

def test_two_row_midpoint(tmp_path):
    tr = load_trajectory(write_csv(tmp_path / "a.csv", [(0, "A", 0, 0, 0), (100, "A", 200, -50, 0)]))
    assert tr["A"].position(50.0) == pytest.approx([100.0, -25.0])


def test_flag_010_one_interval(tmp_path):
    rows = [(0, "A", 0, 0, 0), (10, "A", 0, 0, 1), (20, "A", 0, 0, 1), (30, "A", 0, 0, 0)]
    tr = load_trajectory(write_csv(tmp_path / "a.csv", rows))["A"]
    assert tr.intervals == ((10.0, 30.0),)
    assert tr.is_surfaced(10.0) and tr.is_surfaced(29.9) and not tr.is_surfaced(30.0)


def test_shuffled_rows_name_first_offender(tmp_path):
    rows = [(0, "A", 0, 0, 0), (20, "A", 0, 0, 0), (10, "A", 0, 0, 0), (5, "A", 0, 0, 0)]
    with pytest.raises(TrajectoryError, match="row 3") as e:
        load_trajectory(write_csv(tmp_path / "a.csv", rows))
    assert e.value.row == 3


def test_ids_are_ordered_independently(tmp_path):
    rows = [(0, "A", 0, 0, 0), (0, "B", 5, 5, 0), (10, "A", 1, 0, 0), (10, "B", 5, 6, 1)]
    tracks = load_trajectory(write_csv(tmp_path / "a.csv", rows))
    assert sorted(tracks) == ["A", "B"]


def test_missing_column(tmp_path):
    with pytest.raises(TrajectoryError, match="surfaced_flag"):
        load_trajectory(write_csv(tmp_path / "a.csv", [(0, "A", 0, 0)],
                                  header="t_s,whale_id,x_m,y_m\n"))


@pytest.mark.parametrize("bad", [(10, "A", "nan", 0, 0), (10, "A", 0, 0, 2), (10, "A", "x", 0, 0)])
def test_bad_values_name_row(tmp_path, bad):
    with pytest.raises(TrajectoryError, match="row 2"):
        load_trajectory(write_csv(tmp_path / "a.csv", [(0, "A", 0, 0, 0), bad]))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_trajectory(tmp_path / "nope.csv")


def test_write_load_roundtrip(tmp_path):
    sc = Scenario(synthetic=SyntheticWhaleParams(n_whales=2))
    tracks = [tr for tr, _ in resolve_whales(sc)]
    write_trajectory(tmp_path / "w.csv", tracks)
    back = load_trajectory(tmp_path / "w.csv")
    for tr in tracks:
        assert np.allclose(back[tr.whale_id].xy, tr.xy, atol=1e-3)
        assert len(back[tr.whale_id].intervals) == len(tr.intervals)


# synthetic trajectories

def test_synthetic_whales_surface_three_times_within_range():
    sc = Scenario(seed=4)
    (tr, tagged), = resolve_whales(sc)
    assert tagged and len(tr.intervals) == 3
    r0 = math.hypot(*tr.xy[0])
    assert 300.0 <= r0 <= 1000.0
    speed = np.hypot(*np.diff(tr.xy, axis=0).T) / np.diff(tr.t)
    assert speed.min() >= 0.5 - 1e-9 and speed.max() <= 2.0 + 1e-9


# run

def stationary_scenario(tmp_path, budget=900.0, seed=1, **extra):
    rows = [(0, "A", 700, 500, 0), (1200, "A", 700, 500, 1), (1700, "A", 700, 500, 0),
            (2000, "A", 700, 500, 0)]
    write_csv(tmp_path / "w.csv", rows)
    cfg = {"seed": seed, "whales": [{"trajectory": "w.csv"}], "acoustic": {"sigma_deg": 0.0},
           "vhf": {"enabled": False}, "boat": {"heading_deg": 0.0, "speed": 3.0},
           "uav": {"flight_budget": budget}, **extra}
    return scenario_from_dict(cfg, base_dir=tmp_path)


def test_zero_noise_stationary_whale_rendezvous(tmp_path):
    sc = stationary_scenario(tmp_path)
    m, events = run(sc)
    assert m.rendezvous_success
    assert m.rendezvous_distance <= sc.planner.rendezvous_radius
    assert any(e["kind"] == "rendezvous" for e in events)


def test_zero_budget_never_takes_off(tmp_path):
    m, events = run(stationary_scenario(tmp_path, budget=0.0))
    assert m.attempts == [] and not m.rendezvous_success
    assert m.flight_time_used == 0.0
    assert not any(e["kind"] == "takeoff" for e in events)


def test_identical_seed_byte_identical_trace(tmp_path):
    sc = Scenario(seed=7, duration=1800.0)
    _, ev1 = run(sc)
    _, ev2 = run(sc)
    write_trace(tmp_path / "a.jsonl", ev1)
    write_trace(tmp_path / "b.jsonl", ev2)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_trace_shape_and_order(tmp_path):
    m, events = run(stationary_scenario(tmp_path))
    times = [e["t"] for e in events]
    assert all(b >= a for a, b in zip(times, times[1:]))
    assert events[0]["kind"] == "start" and events[-1]["kind"] == "end"
    for e in events:
        obj = json.loads(event_line(e))
        assert set(obj) == {"t", "kind", "payload"}
    # every plan decision carries the Q-values and state it saw
    plans = [e for e in events if e["kind"] == "plan"]
    assert plans and all({"q", "uav", "remaining", "estimate"} <= set(e["payload"]) for e in plans)
    batches = [e for e in events if e["kind"] == "acoustic_batch"]
    assert [e["t"] for e in batches] == pytest.approx(np.arange(len(batches)) * 10.0)


def test_maneuvers_every_five_minutes(tmp_path):
    _, events = run(stationary_scenario(tmp_path))
    t = [e["t"] for e in events if e["kind"] == "maneuver" and e["payload"].get("costs")]
    assert t and all(x % 300.0 == 0 for x in t)


def test_metrics_nonnegative_and_csv(tmp_path):
    m, _ = run(Scenario(seed=2))
    assert len(m.surfacings) == 3
    assert all(e >= 0 for e in m.min_errors())
    write_metrics_csv(tmp_path / "m.csv", m)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "scope,index,name,value"
    assert "run,0,rendezvous_success," + str(int(m.rendezvous_success)) in lines


def test_module_error_carries_tick_time(tmp_path, monkeypatch):
    import whale_rendezvous.sim_engine as se
    orig = se.GroupTracker.process_batch

    def broken(self, t, clusters, pose):
        if t >= 50.0:
            raise ValueError("boom")
        return orig(self, t, clusters, pose)

    monkeypatch.setattr(se.GroupTracker, "process_batch", broken)
    with pytest.raises(SimulationError, match="t=50s: ValueError: boom") as e:
        run(stationary_scenario(tmp_path))
    assert e.value.t == 50.0


# sweep

def test_summarize_ci():
    mean, std, half = summarize([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5 and std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    # t quantile for 3 dof at 99.5%
    assert half == pytest.approx(5.840909 * std / 2.0, rel=1e-5)
    assert summarize([5.0]) == (5.0, 0.0, 0.0)


def test_one_cell_one_trial_equals_run():
    sc = Scenario(seed=3, uav=UAVConfig(flight_budget=0.0), vhf=VHFSimConfig(enabled=False))
    rows = sweep(sc, sigmas=(5.0,), vhf_modes=(False,), trials=1, seed_base=3)
    m, _ = run(replace(sc, sim=replace(sc.sim, record_trace=False)))
    (r,) = rows
    assert r["trials"] == 1 and r["n_surfacings"] == len(m.min_errors())
    assert r["mean_error_m"] == pytest.approx(np.mean(m.min_errors()))
    assert r["successes"] == int(m.rendezvous_success)
    assert r["rel_mean"] == 1.0


def test_sweep_rejects_zero_trials():
    with pytest.raises(ValueError):
        sweep(Scenario(), trials=0)


def test_sweep_counts_three_surfacings_per_trial(monkeypatch):
    import whale_rendezvous.sim_engine as se

    def fake_run(sc):
        m = Metrics(seed=sc.seed, duration=1.0)
        m.surfacings = [SurfacingMetric("0", k, 0.0, 1.0, 10.0 + sc.acoustic.sigma_deg, 5.0, 1)
                        for k in range(3)]
        return m, []

    monkeypatch.setattr(se, "run", fake_run)
    rows = sweep(Scenario(), sigmas=(0.1, 5.0), trials=25)
    assert all(r["n_surfacings"] == 75 for r in rows)
    ref = next(r for r in rows if r["sigma_deg"] == 0.1 and not r["vhf"])
    assert ref["rel_mean"] == 1.0
    assert next(r for r in rows if r["sigma_deg"] == 5.0)["rel_mean"] == pytest.approx(15.0 / 10.1)


def test_vhf_moves_min_error_later_and_lower():
    rows = sweep(Scenario(uav=UAVConfig(flight_budget=0.0)), sigmas=(5.0,), trials=6)
    ac, vh = sorted(rows, key=lambda r: r["vhf"])
    assert vh["mean_error_m"] < ac["mean_error_m"]
    assert vh["median_t_min_s"] > ac["median_t_min_s"]
