import json

import pytest

from whale_rendezvous.acoustic import amplitude_at
from whale_rendezvous.config import ConfigError, config_hash, load_config, scenario_from_dict
from whale_rendezvous.sim_engine import Scenario


def test_empty_config_is_default_scenario():
    sc = scenario_from_dict({})
    assert sc.planner == Scenario().planner and sc.tick == 1.0
    assert sc.maneuver.amplitude_threshold == pytest.approx(float(amplitude_at(1500.0, 1000.0)))


def test_threshold_follows_amplitude_scale():
    sc = scenario_from_dict({"acoustic": {"amplitude_scale": 3000.0}})
    assert sc.maneuver.amplitude_threshold == pytest.approx(2.0)


@pytest.mark.parametrize("cfg,path", [
    ({"bogus": 1}, "bogus"),
    ({"planner": {"deltaa": 1.0}}, "planner.deltaa"),
    ({"planner": {"delta": 0.0}}, "planner.delta"),
    ({"planner": {"M": 1.5}}, "planner.M"),
    ({"boat": {"speed": 7.0}}, "boat"),
    ({"vhf": {"enabled": "yes"}}, "vhf.enabled"),
    ({"whales": [{"trajectory": "x.csv", "colour": 1}]}, "whales[0].colour"),
    ({"tick": -1.0}, "tick"),
])
def test_rejections_carry_field_path(cfg, path):
    with pytest.raises(ConfigError) as e:
        scenario_from_dict(cfg, check_files=False)
    assert e.value.path == path


def test_realism_flag_off_allows_fast_boat():
    assert scenario_from_dict({"boat": {"speed": 7.0, "realism": False}}).boat.speed == 7.0


def test_missing_trajectory_names_path(tmp_path):
    with pytest.raises(ConfigError, match="missing.csv") as e:
        scenario_from_dict({"whales": [{"trajectory": "missing.csv"}]}, base_dir=tmp_path)
    assert e.value.path == "whales[0].trajectory"


def test_bad_trajectory_reports_row(tmp_path):
    (tmp_path / "w.csv").write_text("t_s,whale_id,x_m,y_m,surfaced_flag\n0,A,0,0,0\n0,A,1,1,0\n")
    with pytest.raises(ConfigError, match="row 2"):
        scenario_from_dict({"whales": [{"trajectory": "w.csv"}]}, base_dir=tmp_path)


def test_unknown_whale_id(tmp_path):
    (tmp_path / "w.csv").write_text("t_s,whale_id,x_m,y_m,surfaced_flag\n0,A,0,0,0\n1,A,1,1,0\n")
    with pytest.raises(ConfigError) as e:
        scenario_from_dict({"whales": [{"trajectory": "w.csv", "whale_id": "B"}]}, base_dir=tmp_path)
    assert e.value.path == "whales[0].whale_id"


def test_load_config_and_hash(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5, "planner": {"M": 20}}))
    sc, raw = load_config(p)
    assert sc.seed == 5 and sc.planner.M == 20
    assert config_hash(raw) == config_hash({"planner": {"M": 20}, "seed": 5})
    assert config_hash(raw) != config_hash({"seed": 6, "planner": {"M": 20}})


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{ seed: 1 }")
    with pytest.raises(ConfigError, match="invalid JSON at line 1"):
        load_config(p)
