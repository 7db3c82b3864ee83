import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from topomarl.sim import (BASE_DIM, OBS_DIM, ActionMismatch, ConfigError, IdmParams, Kind, NoSuchAgent, Route,
                          ScenarioConfig, World, action_mask, apply_cav_action, build_observation, decode_action,
                          encode_action, hdv_lane_change_decision, idm_acceleration, idm_desired_gap,
                          remove_noncompliant, spawn_vehicles, step_world)

IDM = IdmParams()
# Frozen from oracles.desired_gap(10, 5): 17 + 50 / (2 * sqrt(5.25)).
GAP_10_5 = 27.910894511799620


def empty_world(**changes) -> World:
    cfg = ScenarioConfig(flow_rate=0.0, **changes)
    return World(cfg, seed=0)


# ------------------------------------------------------------------ IDM

def test_desired_gap_examples():
    assert idm_desired_gap(0.0, 13.0, IDM) == 2.0
    assert idm_desired_gap(10.0, 10.0, IDM) == pytest.approx(17.0, rel=1e-12)
    assert oracles.desired_gap(10.0, 5.0) == pytest.approx(GAP_10_5, rel=1e-12)
    assert idm_desired_gap(10.0, 5.0, IDM) == pytest.approx(GAP_10_5, rel=1e-9)
    assert round(idm_desired_gap(10.0, 5.0, IDM), 4) == 27.9109


def test_acceleration_examples():
    assert idm_acceleration(20.0, 20.0, math.inf, IDM) == 0.0
    assert idm_acceleration(0.0, 0.0, math.inf, IDM) == 3.5
    assert idm_acceleration(10.0, 10.0, 34.0, IDM) == pytest.approx(2.40625, rel=1e-12)


def test_nonpositive_gap_is_emergency_braking():
    assert idm_acceleration(10.0, 10.0, 0.0, IDM) == -IDM.emergency_decel
    assert idm_acceleration(10.0, 10.0, -3.0, IDM) == -IDM.emergency_decel


@given(v=st.floats(0, 20), v_lead=st.floats(0, 20), gap=st.floats(0.1, 500))
def test_acceleration_matches_oracle(v, v_lead, gap):
    expected = min(3.5, max(-9.0, oracles.idm_accel(v, v_lead, gap)))
    assert idm_acceleration(v, v_lead, gap, IDM) == pytest.approx(expected, rel=1e-9, abs=1e-9)


idm_params = st.builds(IdmParams, desired_time_headway=st.floats(0.5, 3), max_accel=st.floats(0.5, 5),
                       min_gap=st.floats(0.5, 5), comfort_decel=st.floats(0.5, 5),
                       accel_exponent=st.floats(1, 8), desired_speed=st.floats(5, 40))


@given(params=idm_params, v1=st.floats(0, 30), v2=st.floats(0, 30), v_lead=st.floats(0, 30),
       gap=st.floats(0.1, 200))
def test_acceleration_nonincreasing_in_speed(params, v1, v2, v_lead, gap):
    lo, hi = sorted((v1, v2))
    assert idm_acceleration(hi, v_lead, gap, params) <= idm_acceleration(lo, v_lead, gap, params) + 1e-12


@given(params=idm_params, v=st.floats(0, 30), v_lead=st.floats(0, 30), g1=st.floats(0.1, 200),
       g2=st.floats(0.1, 200))
def test_acceleration_nondecreasing_in_gap(params, v, v_lead, g1, g2):
    lo, hi = sorted((g1, g2))
    assert idm_acceleration(v, v_lead, hi, params) >= idm_acceleration(v, v_lead, lo, params) - 1e-12


def test_idm_params_validation():
    with pytest.raises(ConfigError):
        IdmParams(max_accel=0.0)
    with pytest.raises(ConfigError):
        IdmParams(accel_exponent=0.5)


# ------------------------------------------------------------------ scenario config

def test_scenario_validation_and_round_trip(tmp_path):
    cfg = ScenarioConfig(lane_count=2, flow_rate=150)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_json(path) == cfg
    with pytest.raises(ConfigError):
        ScenarioConfig(route_probs=(0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        ScenarioConfig(cav_penetration=1.5)
    with pytest.raises(ConfigError):
        ScenarioConfig(sim_dt=0.0)
    with pytest.raises(ConfigError, match="unknown"):
        ScenarioConfig.from_dict({"lanes": 3})


def test_spawn_probability_conversion():
    assert ScenarioConfig(flow_rate=360.0, sim_dt=0.1).spawn_probability == pytest.approx(0.01, rel=1e-12)


# ------------------------------------------------------------------ lane changes

def test_hdv_in_target_lane_stays():
    w = empty_world()
    v = w.add_vehicle(Kind.HDV, 0, 50.0, 10.0, Route.RIGHT)
    assert hdv_lane_change_decision(w, v.id) == "stay"


def test_hdv_moves_toward_route_target_into_empty_lane():
    w = empty_world()
    v = w.add_vehicle(Kind.HDV, 1, 50.0, 10.0, Route.RIGHT)
    assert hdv_lane_change_decision(w, v.id) == "right"
    u = w.add_vehicle(Kind.HDV, 1, 120.0, 10.0, Route.LEFT)
    assert hdv_lane_change_decision(w, u.id) == "left"


def test_hdv_rejects_short_rear_gap():
    w = empty_world()
    ego = w.add_vehicle(Kind.HDV, 1, 50.0, 10.0, Route.RIGHT)
    follower = w.add_vehicle(Kind.HDV, 0, 40.0, 10.0, Route.RIGHT)
    w.add_vehicle(Kind.HDV, 0, 150.0, 10.0, Route.RIGHT)
    rear_gap = ego.pos - ego.length - follower.pos
    assert rear_gap < oracles.desired_gap(follower.speed, ego.speed)
    assert hdv_lane_change_decision(w, ego.id) == "stay"
    follower.pos = 50.0 - 5.0 - 17.5   # rear gap 17.5 m >= 17 m desired
    assert hdv_lane_change_decision(w, ego.id) == "right"


def test_hdv_rejects_short_front_gap():
    w = empty_world()
    ego = w.add_vehicle(Kind.HDV, 1, 50.0, 10.0, Route.RIGHT)
    w.add_vehicle(Kind.HDV, 0, 60.0, 10.0, Route.RIGHT)
    assert hdv_lane_change_decision(w, ego.id) == "stay"


# ------------------------------------------------------------------ CAV actions

def test_action_encoding_round_trip():
    for lat in range(3):
        for lon in range(3):
            assert decode_action(encode_action(lat, lon)) == (lat, lon)
    assert encode_action("LK", "MT") == 4
    assert decode_action(("RC", "AC")) == (2, 0)
    with pytest.raises(ValueError):
        decode_action(9)


def test_identity_action():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 1, 50.0, 10.0, Route.STRAIGHT)
    apply_cav_action(w, v.id, ("LK", "MT"))
    assert (v.lane, v.speed) == (1, 10.0)


def test_right_change_at_lane_zero_is_masked():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 0, 50.0, 10.0, Route.STRAIGHT)
    apply_cav_action(w, v.id, ("RC", "AC"))
    assert v.lane == 0 and v.masked
    assert v.speed == pytest.approx(10.0 + 2.5 * 0.1, rel=1e-12)


def test_left_change_with_braking():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 1, 50.0, 10.0, Route.STRAIGHT)
    apply_cav_action(w, v.id, ("LC", "DC"))
    assert v.lane == 2
    assert v.speed == pytest.approx(9.75, rel=1e-12)


def test_unknown_agent():
    w = empty_world()
    with pytest.raises(NoSuchAgent, match="no such agent"):
        apply_cav_action(w, 99, 4)
    with pytest.raises(NoSuchAgent, match="no such agent"):
        build_observation(w, 99)


def test_action_mask_edges():
    assert not action_mask(3, 4)[:3].any() and action_mask(3, 4)[3:].all()
    assert not action_mask(0, 4)[6:].any() and action_mask(0, 4)[:6].all()
    assert action_mask(0, 1)[3:6].all() and action_mask(0, 1).sum() == 3


# ------------------------------------------------------------------ step_world

def test_empty_world_step_is_empty():
    w = empty_world()
    _, report = step_world(w, {})
    assert report.is_empty and not w.vehicles and w.step_index == 1


def test_mismatched_actions_rejected():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 1, 50.0, 10.0, Route.STRAIGHT)
    with pytest.raises(ActionMismatch, match="action/agent mismatch"):
        w.step({})
    with pytest.raises(ActionMismatch):
        w.step({v.id: 4, 77: 4})


def test_arrival_in_target_lane_is_success():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 0, 249.5, 10.0, Route.RIGHT)
    report = w.step({v.id: encode_action("LK", "MT")})
    assert report.arrivals == [{"id": v.id, "kind": "CAV", "lane": 0, "step": 1, "success": True}]
    assert not w.vehicles


def test_arrival_in_wrong_lane_fails():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 2, 249.5, 10.0, Route.RIGHT)
    report = w.step({v.id: encode_action("LK", "MT")})
    assert report.arrivals[0]["success"] is False


def test_overlap_is_collision_and_both_removed():
    w = empty_world()
    rear = w.add_vehicle(Kind.CAV, 1, 100.0, 15.0, Route.STRAIGHT)
    front = w.add_vehicle(Kind.CAV, 1, 105.5, 5.0, Route.STRAIGHT)
    # After one step the rear is at 101.5 and the front at 106.0: gap 106.0 - 5 - 101.5 < 0.
    report = w.step({rear.id: encode_action("LK", "MT"), front.id: encode_action("LK", "MT")})
    assert report.collisions == [(rear.id, front.id)]
    assert report.collided == [rear.id, front.id]
    assert not w.vehicles
    assert {r["reason"] for r in report.removals} == {"collision"}


def test_spawning_blocked_and_deferred():
    cfg = ScenarioConfig(lane_count=1, flow_rate=36000.0, sim_dt=0.1)     # p = 1 per step
    w = World(cfg, seed=1)
    first = spawn_vehicles(w)
    assert len(first) == 1
    second = spawn_vehicles(w)          # entrance still occupied by the first vehicle
    assert second == [] and len(w.pending[0]) == 1
    w.vehicles[first[0]].pos = 20.0
    third = spawn_vehicles(w)
    assert len(third) == 1              # deferred vehicle released, nothing lost


def test_zero_flow_never_spawns():
    w = World(ScenarioConfig(flow_rate=0.0), seed=3)
    for _ in range(200):
        assert spawn_vehicles(w) == []


def test_noncompliant_removal_and_entrance_exemption():
    w = empty_world()
    ok = w.add_vehicle(Kind.HDV, 0, 50.0, 10.0, Route.RIGHT)
    stalled = w.add_vehicle(Kind.HDV, 1, 80.0, 0.2, Route.STRAIGHT)
    w.step_index = 4
    assert remove_noncompliant(w, 0.5) == [stalled.id]
    assert ok.id in w.vehicles
    w.step_index = 5
    fresh = w.add_vehicle(Kind.HDV, 2, 0.0, 0.0, Route.STRAIGHT)
    assert fresh.spawn_step == 5
    assert remove_noncompliant(w, 0.5) == []


# ------------------------------------------------------------------ observations

def test_lone_vehicle_observation():
    w = empty_world()
    v = w.add_vehicle(Kind.CAV, 1, 50.0, 10.0, Route.STRAIGHT)
    obs = build_observation(w, v.id)
    assert obs.shape == (OBS_DIM,) and BASE_DIM == 38 and OBS_DIM == 42
    assert np.all(obs[8:38] == 0.0)
    assert list(obs[5:8]) == [100.0, 100.0, 100.0]
    assert list(obs[:5]) == [50.0, 1.0, 10.0, 1.0, 1.0]


def test_same_lane_leader_slot():
    w = empty_world()
    ego = w.add_vehicle(Kind.CAV, 1, 50.0, 10.0, Route.STRAIGHT)
    w.add_vehicle(Kind.HDV, 1, 80.0, 8.0, Route.RIGHT)
    obs = build_observation(w, ego.id)
    same_front = obs[8 + 5 * 2: 8 + 5 * 3]
    assert list(same_front) == [-30.0, 0.0, 2.0, 0.0, 0.0]
    assert obs[6] == 30.0
    assert np.all(obs[8:18] == 0.0) and np.all(obs[23:38] == 0.0)


def test_observation_spawn_counts_are_appended():
    w = World(ScenarioConfig(lane_count=4, flow_rate=36000.0, cav_penetration=1.0), seed=0)
    w.step({})
    ids = w.cav_ids()
    assert ids
    obs = build_observation(w, ids[0])
    assert list(obs[38:]) == [float(c) for c in w.spawn_counts]
    assert sum(w.spawn_counts) == len(ids)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 9))
def test_padding_matches_brute_force_neighbours(seed, n):
    rng = np.random.default_rng(seed)
    w = empty_world()
    for _ in range(n):
        w.add_vehicle(Kind.CAV, int(rng.integers(4)), float(rng.uniform(0, 250)), float(rng.uniform(0, 20)),
                      Route.STRAIGHT)
    for vid in w.cav_ids():
        obs = build_observation(w, vid)
        for slot, other in enumerate(oracles.slot_neighbours(w, vid)):
            block = obs[8 + 5 * slot: 13 + 5 * slot]
            if other is None:
                assert np.all(block == 0.0)
            else:
                assert block[0] == w.vehicles[vid].pos - other.pos


# ------------------------------------------------------------------ determinism and conservation

def _random_rollout(seed, steps=120, flow=350.0, penetration=0.5):
    cfg = ScenarioConfig(flow_rate=flow, cav_penetration=penetration)
    w = World(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = []
    for _ in range(steps):
        actions = {}
        for vid in w.cav_ids():
            valid = np.flatnonzero(action_mask(w.vehicles[vid].lane, cfg.lane_count))
            actions[vid] = int(rng.choice(valid))
        report = w.step(actions)
        frames.append((report.to_dict(), [v.snapshot() for v in sorted(w.vehicles.values(), key=lambda v: v.id)]))
    return w, frames


def test_identical_seeds_identical_trajectories():
    _, a = _random_rollout(11)
    _, b = _random_rollout(11)
    assert json.dumps(a) == json.dumps(b)
    _, c = _random_rollout(12)
    assert json.dumps(a) != json.dumps(c)


def test_vehicle_accounting_conserved():
    w, _ = _random_rollout(5, steps=180)
    arrived = {r["id"] for r in w.arrived_log}
    removed = {r["id"] for r in w.removed_log}
    live = set(w.vehicles)
    assert not (arrived & removed) and not (arrived & live) and not (removed & live)
    assert arrived | removed | live == set(w.spawned_log)
