"""Environmental reward terms and their combination with the intrinsic bonuses."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .sim.world import Kind, StepReport, Vehicle, World, nearest_target_lane


@dataclass(frozen=True)
class RewardConfig:
    w1: float = 10.0
    w2: float = 2.0
    w3: float = 1.0
    w4: float = -50.0
    w5: float = 8.0
    sigma: float = 60.0
    zeta: float = 1.0
    beta1: float = 0.1
    beta2: float = 0.2
    goal_x: float = 250.0
    v_max: float = 20.0
    high_speed_fraction: float = 0.9
    completion_zone: float = 20.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown reward keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RewardBreakdown:
    action_term: float = 0.0        # mean r_a over CAVs
    positional_term: float = 0.0    # mean r_p over CAVs
    flow_term: float = 0.0
    safety_term: float = 0.0
    completion_term: float = 0.0
    env_total: float = 0.0
    visit_term: float = 0.0
    topo_term: float = 0.0
    grand_total: float = 0.0

    def with_intrinsic(self, visit_term: float, topo_term: float, cfg: RewardConfig) -> "RewardBreakdown":
        self.visit_term = visit_term
        self.topo_term = topo_term
        self.grand_total = total_reward(self.env_total, visit_term, topo_term, cfg)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def action_reward(vehicle: Vehicle, cfg: RewardConfig) -> int:
    """1 when accelerating or already at high speed (>= 0.9 v_max)."""
    return int(vehicle.accel > 0 or vehicle.speed >= cfg.high_speed_fraction * cfg.v_max)


def positional_field(x: float, y_lane: float, y_target: float, cfg: RewardConfig) -> float:
    longitudinal = math.exp(-((cfg.goal_x - x) ** 2) / (2.0 * cfg.sigma ** 2))
    return longitudinal / (cfg.zeta * abs(y_target - y_lane) + 1.0)


def _sign(x: float) -> float:
    return (x > 0) - (x < 0)


def positional_reward_terms(v_x: float, v_y: int, x: float, y: int, y_target: int, cfg: RewardConfig) -> float:
    """Velocity-weighted gradient of the positional field.

    Off the target lane the lateral term is positive when the lane change
    heads toward the target; on the target lane any lane change costs zeta.
    """
    f = positional_field(x, y, y_target, cfg)
    if y != y_target:
        lateral = cfg.zeta * v_y * _sign(y_target - y) / (cfg.zeta * abs(y_target - y) + 1.0)
    else:
        lateral = -cfg.zeta * abs(v_y)
    return (v_x * (cfg.goal_x - x) + lateral) * f


def positional_reward(vehicle: Vehicle, cfg: RewardConfig, lane_count: int) -> float:
    """r_p of a vehicle after a step, evaluated at the lane it left this step."""
    y = vehicle.prev_lane
    y_target = nearest_target_lane(y, vehicle.route, lane_count)
    return positional_reward_terms(vehicle.speed, vehicle.lateral_move, min(vehicle.pos, cfg.goal_x), y,
                                   y_target, cfg)


def flow_reward(world: World, cfg: RewardConfig) -> float:
    if not world.vehicles:
        return 0.0
    return sum(v.speed / cfg.v_max for v in world.vehicles.values()) / len(world.vehicles)


def safety_reward(report: StepReport) -> int:
    """Number of vehicles involved in a collision this step."""
    return len(report.collided)


def completion_reward(report: StepReport) -> int:
    """Vehicles newly inside the final zone in a target lane (each counted once per lifetime)."""
    return len(report.completions)


def environmental_reward(world: World, report: StepReport, cfg: RewardConfig) -> RewardBreakdown:
    cavs = [v for v in world.vehicles.values() if v.kind is Kind.CAV]
    out = RewardBreakdown()
    if cavs:
        lane_count = world.config.lane_count
        out.action_term = sum(action_reward(v, cfg) for v in cavs) / len(cavs)
        out.positional_term = sum(positional_reward(v, cfg, lane_count) for v in cavs) / len(cavs)
    out.flow_term = flow_reward(world, cfg)
    out.safety_term = float(safety_reward(report))
    out.completion_term = float(completion_reward(report))
    out.env_total = (cfg.w1 * out.action_term + cfg.w2 * out.positional_term + cfg.w3 * out.flow_term
                     + cfg.w4 * out.safety_term + cfg.w5 * out.completion_term)
    out.grand_total = out.env_total
    return out


def total_reward(env: float, visit_term: float, topo_term: float, cfg: RewardConfig) -> float:
    return env + cfg.beta1 * visit_term + cfg.beta2 * topo_term
