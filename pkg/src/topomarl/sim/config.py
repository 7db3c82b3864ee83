"""Scenario and car-following parameters."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (SI units)."""

    desired_time_headway: float = 1.5
    max_accel: float = 3.5
    min_gap: float = 2.0
    comfort_decel: float = 1.5
    accel_exponent: float = 4.0
    desired_speed: float = 20.0
    emergency_decel: float = 9.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"IdmParams.{f.name} must be a positive finite number, got {value!r}")
        if self.accel_exponent < 1:
            raise ConfigError("IdmParams.accel_exponent must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """Road geometry, demand and simulation timing.

    Lane 0 is the rightmost lane. ``route_probs`` are the probabilities of the
    (right-turn, straight, left-turn) movement classes.
    """

    lane_count: int = 4
    road_length: float = 250.0
    speed_limit: float = 23.0
    v_max: float = 20.0
    flow_rate: float = 250.0
    cav_penetration: float = 0.5
    route_probs: tuple = (0.25, 0.50, 0.25)
    departure_speed: float = 10.0
    episode_length: int = 180
    sim_dt: float = 0.1
    removal_speed_threshold: float = 0.5
    vehicle_length: float = 5.0
    entry_headway: float = 10.0
    cav_accel: float = 2.5
    obs_radius: float = 100.0
    seed: int = 0
    idm: IdmParams = field(default_factory=IdmParams)

    def __post_init__(self):
        object.__setattr__(self, "route_probs", tuple(float(p) for p in self.route_probs))
        if isinstance(self.idm, dict):
            object.__setattr__(self, "idm", IdmParams(**self.idm))
        if not 1 <= self.lane_count <= 4:
            raise ConfigError("lane_count must be between 1 and 4 (observation layout holds 4 spawn slots)")
        if len(self.route_probs) != 3 or min(self.route_probs) < 0 or abs(sum(self.route_probs) - 1) > 1e-9:
            raise ConfigError(f"route_probs must be 3 non-negative values summing to 1, got {self.route_probs}")
        if not self.sim_dt > 0:
            raise ConfigError("sim_dt must be > 0")
        if not 0 <= self.cav_penetration <= 1:
            raise ConfigError("cav_penetration must lie in [0, 1]")
        if self.flow_rate < 0:
            raise ConfigError("flow_rate must be >= 0")
        if self.flow_rate * self.sim_dt / 3600.0 > 1:
            raise ConfigError("flow_rate too high for one spawn per lane per step")
        for name in ("road_length", "v_max", "vehicle_length", "obs_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("departure_speed", "removal_speed_threshold", "entry_headway", "cav_accel"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.departure_speed > self.v_max:
            raise ConfigError("departure_speed exceeds v_max")
        if self.episode_length < 0:
            raise ConfigError("episode_length must be >= 0")

    @property
    def spawn_probability(self) -> float:
        """Per-lane, per-step Bernoulli spawn probability."""
        return self.flow_rate * self.sim_dt / 3600.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["route_probs"] = list(self.route_probs)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        data = dict(data)
        if "idm" in data:
            idm = data["idm"]
            unknown = set(idm) - {f.name for f in fields(IdmParams)}
            if unknown:
                raise ConfigError(f"unknown idm keys: {sorted(unknown)}")
            data["idm"] = IdmParams(**idm)
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig.from_dict(d)
