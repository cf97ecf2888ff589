import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from whale_rendezvous.world import (BoatState, Pose2D, UAVState, aoa_distance, bearing, fold_aoa,
                                    intercept_time, move_toward, step_agent, unfold_candidates,
                                    wrap_2pi)

angles = st.floats(-20.0, 20.0, allow_nan=False)


def test_bearing_axes():
    assert bearing(Pose2D(0, 0), (1, 0)) == 0.0
    assert bearing(Pose2D(0, 0), (0, 5)) == pytest.approx(math.pi / 2)


def test_bearing_oracle_back_to_origin():
    # direct trig: atan2(-4, -3) = -2.2143 rad, wrapped into [0, 2pi)
    expected = math.atan2(-4, -3) + 2 * math.pi
    got = bearing(Pose2D(3, 4), (0, 0))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(4.0689, abs=1e-4)


def test_bearing_degenerate():
    with pytest.raises(ValueError, match="degenerate bearing"):
        bearing(Pose2D(1, 1), (1, 1))


def test_fold_examples():
    assert fold_aoa(0.7, 0.7) == 0.0
    assert fold_aoa(math.pi / 4, 0.0) == pytest.approx(math.pi / 4)
    assert fold_aoa(2 * math.pi - math.pi / 4, 0.0) == pytest.approx(math.pi / 4)
    # substitute into rel = (0 - pi/2) mod 2pi = 3pi/2 -> 2pi - 3pi/2
    assert fold_aoa(0.0, math.pi / 2) == pytest.approx(math.pi / 2)


@given(angles, angles)
def test_fold_range_and_mirror(rel, heading):
    a = fold_aoa(heading + rel, heading)
    b = fold_aoa(heading - rel, heading)
    assert 0.0 <= a < math.pi
    assert aoa_distance(a, b) < 1e-9


@given(st.floats(1e-3, math.pi - 1e-3), angles)
def test_unfold_roundtrip_left_half_plane(rel, heading):
    true = wrap_2pi(heading + rel)
    cands = unfold_candidates(fold_aoa(true, heading), heading)
    hits = [abs(math.remainder(c - true, 2 * math.pi)) < 1e-9 for c in cands]
    assert sum(hits) == 1


def test_step_agent_examples():
    p = Pose2D(1.0, 2.0, 0.3)
    assert step_agent(p, 0.0, 0.0, 10.0) == p
    q = step_agent(Pose2D(0, 0, 0), 10.0, 0.0, 60.0)
    assert q.x == pytest.approx(600.0) and q.y == pytest.approx(0.0)
    r = step_agent(Pose2D(0, 0, 0), 0.0, math.pi / 60, 60.0)
    assert r.heading == pytest.approx(math.pi)


@given(st.floats(-100, 100), st.floats(-100, 100), angles, st.floats(-1, 1), st.floats(0.1, 100))
def test_step_agent_zero_speed_keeps_position(x, y, h, w, dt):
    q = step_agent(Pose2D(x, y, h), 0.0, w, dt)
    assert (q.x, q.y) == pytest.approx((x, y))
    assert 0.0 <= q.heading < 2 * math.pi


def test_step_agent_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step_agent(Pose2D(0, 0), 1.0, 0.0, 0.0)


def test_pose_heading_normalized():
    assert Pose2D(0, 0, -math.pi / 2).heading == pytest.approx(1.5 * math.pi)
    assert Pose2D(0, 0, 2 * math.pi).heading == 0.0


def test_array_trails_boat_on_axis():
    boat = BoatState(Pose2D(0, 0, math.pi / 2), 4.0, 100.0)
    a = boat.array_pose()
    assert (a.x, a.y) == pytest.approx((0.0, -100.0), abs=1e-9)
    assert a.heading == boat.pose.heading


def test_state_invariants():
    with pytest.raises(ValueError):
        BoatState(Pose2D(0, 0), 4.0, 0.0)
    with pytest.raises(ValueError):
        UAVState(Pose2D(0, 0), remaining_flight=-1.0)


def test_move_toward_and_intercept():
    assert move_toward((0, 0), (10, 0), 4.0) == pytest.approx([4.0, 0.0])
    assert move_toward((0, 0), (3, 4), 10.0) == pytest.approx([3.0, 4.0])
    # head-on: closing speed 10 + 5 over 150 m
    assert intercept_time((0, 0), 10.0, (150, 0), (-5, 0)) == pytest.approx(10.0)
    assert intercept_time((0, 0), 1.0, (10, 0), (5, 0)) == math.inf
    assert np.isclose(aoa_distance(0.01, math.pi - 0.01), 0.02)
