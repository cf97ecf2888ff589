import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from whale_rendezvous.dive_model import (AnchorState, DiveModelParams, SurfaceSchedule, is_surfaced,
                                         next_surface_interval, sample_schedule)

ZERO_VAR = DiveModelParams(mu_underwater=34, sigma_underwater=0, mu_surface=9, sigma_surface=0)


def test_zero_variance_schedule_oracle():
    # 34 min down, 9 min up, repeated from a dive start at t=0
    s = sample_schedule(ZERO_VAR, 0.0, AnchorState.UNDERWATER_SINCE, 7200.0, np.random.default_rng(0))
    assert s.intervals == ((2040.0, 2580.0), (4620.0, 5160.0))


def test_horizon_shorter_than_first_dive_is_empty():
    s = sample_schedule(ZERO_VAR, 0.0, "underwater_since", 1000.0, np.random.default_rng(0))
    assert s.intervals == ()


def test_surfaced_anchor_starts_at_anchor():
    s = sample_schedule(ZERO_VAR, 0.0, "surfaced_since", 3600.0, np.random.default_rng(0))
    assert s.intervals[0] == (0.0, 540.0)


def test_is_surfaced_boundaries():
    s = sample_schedule(ZERO_VAR, 0.0, "underwater_since", 7200.0, np.random.default_rng(0))
    assert not is_surfaced(s, 100.0)
    assert is_surfaced(s, 2040.0)
    assert is_surfaced(s, 2500.0)
    assert not is_surfaced(s, 2580.0)
    assert next_surface_interval(s, 2600.0) == (4620.0, 5160.0)
    assert next_surface_interval(s, 6000.0) is None


def test_elapsed_dive_conditions_first_surfacing():
    # seen diving 40 min ago: a 34 min dive is already ruled out
    s = sample_schedule(ZERO_VAR, 0.0, "underwater_since", 3600.0, np.random.default_rng(0), now=2400.0)
    assert s.intervals[0][0] == pytest.approx(2400.0)


def test_zero_variance_is_periodic():
    s = sample_schedule(ZERO_VAR, 0.0, "underwater_since", 30000.0, np.random.default_rng(1))
    starts = np.array([a for a, _ in s.intervals])
    assert np.allclose(np.diff(starts), (34 + 9) * 60)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5000), st.sampled_from(list(AnchorState)))
def test_schedule_invariants(seed, now, state):
    p = DiveModelParams()
    s = sample_schedule(p, 0.0, state, 20000.0, np.random.default_rng(seed), now=now)
    prev = -math.inf
    for a, b in s.intervals:
        assert b > a > prev
        assert b - a >= p.min_duration * 60 - 1e-9
        prev = b
    gaps = [s.intervals[i + 1][0] - s.intervals[i][1] for i in range(len(s.intervals) - 1)]
    assert all(g >= p.min_duration * 60 - 1e-9 for g in gaps)


def test_underwater_mean_matches_truncated_normal():
    p = DiveModelParams()
    rng = np.random.default_rng(7)
    draws = []
    for _ in range(10_000):
        s = sample_schedule(p, 0.0, "underwater_since", 1e5, rng)
        draws.append(s.intervals[0][0])
    draws = np.array(draws) / 60.0
    a = (p.min_duration - p.mu_underwater) / p.sigma_underwater
    tn = stats.truncnorm(a, np.inf, loc=p.mu_underwater, scale=p.sigma_underwater)
    se = tn.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - tn.mean()) < 3 * se
    assert draws.min() >= p.min_duration


def test_invalid_params_and_schedule():
    with pytest.raises(ValueError):
        DiveModelParams(mu_underwater=0)
    with pytest.raises(ValueError):
        DiveModelParams(sigma_surface=-1)
    with pytest.raises(ValueError):
        sample_schedule(DiveModelParams(), 0.0, "underwater_since", 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        SurfaceSchedule(((10.0, 5.0),))
