import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import env_total, field, positional
from topomarl.reward import (RewardConfig, action_reward, completion_reward, environmental_reward, flow_reward,
                             positional_field, positional_reward_terms, safety_reward, total_reward)
from topomarl.sim import Kind, Route, ScenarioConfig, StepReport, World, encode_action, nearest_target_lane

CFG = RewardConfig()
KEEP = encode_action(1, 1)          # lane keep, maintain speed

# frozen oracle values
FIELD_60 = 0.6065306597126334        # exp(-0.5)
POSITIONAL_60 = 363.91839582758007   # 10 * 60 * exp(-0.5)


def world(**overrides):
    base = dict(lane_count=3, flow_rate=0.0)
    base.update(overrides)
    return World(ScenarioConfig(**base), seed=0)


def test_frozen_values_match_oracle():
    assert field(190.0, 0, 0) == pytest.approx(FIELD_60, rel=1e-12)
    assert positional(10.0, 0, 190.0, 0, 0) == pytest.approx(POSITIONAL_60, rel=1e-12)


def test_config_defaults_and_validation():
    assert (CFG.w1, CFG.w2, CFG.w3, CFG.w4, CFG.w5) == (10.0, 2.0, 1.0, -50.0, 8.0)
    assert (CFG.sigma, CFG.zeta, CFG.beta1, CFG.beta2) == (60.0, 1.0, 0.1, 0.2)
    with pytest.raises(ValueError):
        RewardConfig(sigma=0.0)
    with pytest.raises(ValueError):
        RewardConfig(zeta=-1.0)
    with pytest.raises(ValueError, match="unknown"):
        RewardConfig.from_dict({"bogus": 1})
    assert RewardConfig.from_dict(CFG.to_dict()) == CFG


class _V:
    def __init__(self, accel, speed):
        self.accel, self.speed = accel, speed


@pytest.mark.parametrize("accel, speed, expected", [(2.5, 5.0, 1), (0.0, 19.0, 1), (0.0, 18.0, 1),
                                                    (0.0, 17.99, 0), (-2.5, 10.0, 0)])
def test_action_reward(accel, speed, expected):
    assert action_reward(_V(accel, speed), CFG) == expected


def test_positional_field_examples():
    assert positional_field(250.0, 1, 1, CFG) == 1.0
    assert positional_field(190.0, 1, 1, CFG) == pytest.approx(FIELD_60, rel=1e-6)
    assert round(positional_field(190.0, 1, 1, CFG), 6) == 0.606531
    assert positional_field(250.0, 1, 0, CFG) == 0.5


def test_positional_reward_examples():
    value = positional_reward_terms(10.0, 0, 190.0, 0, 0, CFG)
    assert value == pytest.approx(POSITIONAL_60, rel=1e-6)
    assert round(value, 2) == 363.92
    assert positional_reward_terms(0.0, -1, 250.0, 2, 0, CFG) == pytest.approx(1 / 9, rel=1e-12)
    assert positional_reward_terms(0.0, 1, 250.0, 1, 1, CFG) == -1.0
    assert positional_reward_terms(0.0, -1, 250.0, 1, 1, CFG) == -1.0


@given(v_x=st.floats(0, 20), v_y=st.sampled_from([-1, 0, 1]), x=st.floats(0, 250),
       y=st.integers(0, 3), y_target=st.integers(0, 3))
def test_positional_matches_oracle(v_x, v_y, x, y, y_target):
    assert positional_reward_terms(v_x, v_y, x, y, y_target, CFG) == \
        pytest.approx(positional(v_x, v_y, x, y, y_target), rel=1e-9, abs=1e-12)


@given(v_x=st.floats(0, 20), x=st.floats(0, 250), y=st.integers(0, 3), y_target=st.integers(0, 3))
def test_lateral_sign_rewards_moving_toward_target(v_x, x, y, y_target):
    stay = positional_reward_terms(v_x, 0, x, y, y_target, CFG)
    if y == y_target:
        assert positional_reward_terms(v_x, 1, x, y, y_target, CFG) <= stay
        return
    toward = int(math.copysign(1, y_target - y))
    assert positional_reward_terms(v_x, toward, x, y, y_target, CFG) >= stay
    assert positional_reward_terms(v_x, -toward, x, y, y_target, CFG) <= stay


def test_flow_reward():
    w = world()
    assert flow_reward(w, CFG) == 0.0
    w.add_vehicle(Kind.HDV, 0, 10.0, 20.0, Route.RIGHT)
    w.add_vehicle(Kind.CAV, 1, 10.0, 20.0, Route.STRAIGHT)
    assert flow_reward(w, CFG) == 1.0
    for v in w.vehicles.values():
        v.speed = 10.0
    assert flow_reward(w, CFG) == 0.5


def test_safety_reward_counts_indicators():
    assert safety_reward(StepReport(step=1)) == 0
    report = StepReport(step=1, collisions=[(3, 4)], collided=[3, 4])
    assert safety_reward(report) == 2
    assert CFG.w4 * safety_reward(report) == -100.0


def test_completion_once_rule_and_wrong_lane():
    w = world(lane_count=1)
    w.add_vehicle(Kind.CAV, 0, 228.5, 10.0, Route.STRAIGHT)
    counts = [completion_reward(w.step({0: KEEP})) for _ in range(3)]
    assert counts == [0, 1, 0]

    w = world()
    w.add_vehicle(Kind.CAV, 2, 229.5, 10.0, Route.RIGHT)
    assert [completion_reward(w.step({0: KEEP})) for _ in range(3)] == [0, 0, 0]

    w = world()
    w.add_vehicle(Kind.CAV, 0, 231.0, 10.0, Route.RIGHT)
    w.add_vehicle(Kind.CAV, 2, 231.0, 10.0, Route.LEFT)
    assert completion_reward(w.step({0: KEEP, 1: KEEP})) == 2


def test_environmental_reward_examples():
    empty = environmental_reward(world(), StepReport(step=1), CFG)
    assert empty.env_total == 0.0 and empty.grand_total == 0.0

    w = world()
    cav = w.add_vehicle(Kind.CAV, 1, 250.0, 20.0, Route.STRAIGHT)
    cav.prev_lane = 1
    quiet = environmental_reward(w, StepReport(step=1), CFG)
    assert (quiet.action_term, quiet.positional_term, quiet.flow_term) == (1.0, 0.0, 1.0)
    assert quiet.env_total == 11.0 == env_total([1], [0.0], 1.0, 0, 0)

    crash = environmental_reward(w, StepReport(step=1, collisions=[(7, 8)], collided=[7, 8]), CFG)
    assert crash.env_total == -89.0 == env_total([1], [0.0], 1.0, 2, 0)


def test_environmental_reward_matches_oracle_on_rollout():
    w = World(ScenarioConfig(flow_rate=900.0, cav_penetration=0.5), seed=4)
    for _ in range(120):
        report = w.step({vid: KEEP for vid in w.cav_ids()})
        got = environmental_reward(w, report, CFG)
        cavs = [w.vehicles[i] for i in w.cav_ids()]
        r_a = [action_reward(v, CFG) for v in cavs]
        r_p = []
        for v in cavs:
            target = nearest_target_lane(v.prev_lane, v.route, w.config.lane_count)
            r_p.append(positional(v.speed, v.lateral_move, min(v.pos, 250.0), v.prev_lane, target))
        flow = sum(v.speed / 20.0 for v in w.vehicles.values()) / len(w.vehicles) if w.vehicles else 0.0
        expected = env_total(r_a, r_p, flow, len(report.collided), len(report.completions))
        assert got.env_total == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_total_reward_examples():
    assert total_reward(2.0, 0.5, 1.0, CFG) == pytest.approx(2.25, rel=1e-12)
    assert total_reward(7.5, 0.0, 0.0, CFG) == 7.5
    assert total_reward(0.0, 1.0, 0.0, CFG) == pytest.approx(0.1, rel=1e-12)
    b = environmental_reward(world(), StepReport(step=1), CFG).with_intrinsic(0.5, 1.0, CFG)
    assert b.grand_total == b.env_total + 0.1 * 0.5 + 0.2 * 1.0
