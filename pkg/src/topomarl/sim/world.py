"""Discrete-time multi-lane highway with IDM human drivers and learning CAVs.

One call to :meth:`World.step` runs, in this order: spawning, HDV lane
changes, CAV lateral actions, accelerations, kinematic integration, collision
detection, completion bookkeeping, arrival at the road end and removal of
stalled vehicles.
"""
from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .config import ScenarioConfig
from .idm import idm_acceleration, idm_desired_gap

LATERAL = ("LC", "LK", "RC")          # left (+1 lane), keep, right (-1 lane)
LONGITUDINAL = ("AC", "MT", "DC")
N_ACTIONS = len(LATERAL) * len(LONGITUDINAL)
SPAWN_SLOTS = 4


class Kind(str, Enum):
    HDV = "HDV"
    CAV = "CAV"


class Route(str, Enum):
    RIGHT = "right"
    STRAIGHT = "straight"
    LEFT = "left"


ROUTES = (Route.RIGHT, Route.STRAIGHT, Route.LEFT)


class NoSuchAgent(KeyError):
    def __init__(self, vehicle_id):
        super().__init__(f"no such agent: {vehicle_id}")
        self.vehicle_id = vehicle_id


class ActionMismatch(ValueError):
    pass


def target_lanes(route: Route, lane_count: int) -> tuple:
    """Lanes that satisfy a movement class.

    Right turns need lane 0, left turns the leftmost lane, straight traffic
    the interior lanes (every lane when there are fewer than three).
    """
    if route is Route.RIGHT:
        return (0,)
    if route is Route.LEFT:
        return (lane_count - 1,)
    if lane_count < 3:
        return tuple(range(lane_count))
    return tuple(range(1, lane_count - 1))


def nearest_target_lane(lane: int, route: Route, lane_count: int) -> int:
    return min(target_lanes(route, lane_count), key=lambda t: (abs(t - lane), t))


def encode_action(lateral, longitudinal) -> int:
    lat = LATERAL.index(lateral) if isinstance(lateral, str) else int(lateral)
    lon = LONGITUDINAL.index(longitudinal) if isinstance(longitudinal, str) else int(longitudinal)
    return lat * len(LONGITUDINAL) + lon


def decode_action(action) -> tuple[int, int]:
    if isinstance(action, tuple):
        return divmod(encode_action(*action), len(LONGITUDINAL))
    action = int(action)
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action {action} outside 0..{N_ACTIONS - 1}")
    return divmod(action, len(LONGITUDINAL))


def action_mask(lane: int, lane_count: int) -> np.ndarray:
    """Valid-action flags; lateral moves off either road edge are invalid."""
    mask = np.ones(N_ACTIONS, dtype=bool)
    if lane >= lane_count - 1:
        mask[0:3] = False
    if lane <= 0:
        mask[6:9] = False
    return mask


@dataclass
class Vehicle:
    id: int
    kind: Kind
    lane: int
    pos: float
    speed: float
    route: Route
    length: float = 5.0
    accel: float = 0.0
    spawn_step: int = 0
    prev_lane: int = -1
    lateral_move: int = 0
    completed: bool = False
    masked: bool = False

    def __post_init__(self):
        if self.prev_lane < 0:
            self.prev_lane = self.lane

    @property
    def is_cav(self) -> bool:
        return self.kind is Kind.CAV

    def snapshot(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "lane": self.lane, "x": self.pos,
                "v": self.speed, "a": self.accel, "route": self.route.value}


@dataclass
class StepReport:
    """Events of one simulation step; field names are stable (JSONL traces)."""

    step: int
    spawned: list = field(default_factory=list)
    spawn_counts: list = field(default_factory=lambda: [0] * SPAWN_SLOTS)
    deferred: list = field(default_factory=lambda: [0] * SPAWN_SLOTS)
    lane_changes: list = field(default_factory=list)
    masked: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    collided: list = field(default_factory=list)
    completions: list = field(default_factory=list)
    arrivals: list = field(default_factory=list)
    removals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "spawned": list(self.spawned),
            "spawn_counts": list(self.spawn_counts),
            "deferred": list(self.deferred),
            "lane_changes": [dict(c) for c in self.lane_changes],
            "masked": list(self.masked),
            "collisions": [list(p) for p in self.collisions],
            "collided": list(self.collided),
            "completions": list(self.completions),
            "arrivals": [dict(a) for a in self.arrivals],
            "removals": [dict(r) for r in self.removals],
        }

    @property
    def is_empty(self) -> bool:
        return not (self.spawned or self.lane_changes or self.collisions or self.arrivals or self.removals
                    or self.completions or any(self.deferred))


class World:
    """Mutable world state. Deterministic given (config, seed, action stream)."""

    def __init__(self, config: ScenarioConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.step_index = 0
        self.vehicles: dict[int, Vehicle] = {}
        self.next_id = 0
        self.pending = [deque() for _ in range(config.lane_count)]
        self.spawn_counts = [0] * SPAWN_SLOTS
        self.spawned_log: list[int] = []
        self.removed_log: list[dict] = []
        self.arrived_log: list[dict] = []

    # ------------------------------------------------------------------ queries
    def clone(self) -> "World":
        return copy.deepcopy(self)

    def cav_ids(self) -> list[int]:
        return sorted(vid for vid, v in self.vehicles.items() if v.kind is Kind.CAV)

    def get(self, vehicle_id) -> Vehicle:
        try:
            return self.vehicles[vehicle_id]
        except KeyError:
            raise NoSuchAgent(vehicle_id) from None

    def lanes(self) -> list[list[Vehicle]]:
        """Vehicles per lane sorted by position (rear to front, ties by id)."""
        out = [[] for _ in range(self.config.lane_count)]
        for v in self.vehicles.values():
            out[v.lane].append(v)
        for members in out:
            members.sort(key=lambda v: (v.pos, v.id))
        return out

    def leader_of(self, vehicle: Vehicle, lane: int | None = None, lanes=None) -> Vehicle | None:
        """Nearest vehicle at or ahead of ``vehicle`` in ``lane`` (default: own lane)."""
        lane = vehicle.lane if lane is None else lane
        members = (lanes or self.lanes())[lane]
        best = None
        for other in members:
            if other.id == vehicle.id or other.pos < vehicle.pos:
                continue
            if other.pos == vehicle.pos and lane == vehicle.lane and other.id < vehicle.id:
                continue
            if best is None or other.pos < best.pos:
                best = other
        return best

    def follower_of(self, vehicle: Vehicle, lane: int | None = None, lanes=None) -> Vehicle | None:
        lane = vehicle.lane if lane is None else lane
        members = (lanes or self.lanes())[lane]
        best = None
        for other in members:
            if other.id == vehicle.id or other.pos > vehicle.pos:
                continue
            if other.pos == vehicle.pos and (lane != vehicle.lane or other.id > vehicle.id):
                continue
            if best is None or other.pos > best.pos:
                best = other
        return best

    # ------------------------------------------------------------------ dynamics
    def step(self, actions: Mapping[int, object]) -> StepReport:
        cfg = self.config
        live_cavs = set(self.cav_ids())
        if set(actions) != live_cavs:
            raise ActionMismatch(
                f"action/agent mismatch: missing {sorted(live_cavs - set(actions))}, "
                f"unknown {sorted(set(actions) - live_cavs)}")
        self.step_index += 1
        report = StepReport(step=self.step_index)
        for v in self.vehicles.values():
            v.prev_lane = v.lane
            v.lateral_move = 0
            v.masked = False

        spawn_vehicles(self, report)

        lanes = self.lanes()
        decisions = {vid: hdv_lane_change_decision(self, vid, lanes)
                     for vid, v in self.vehicles.items() if v.kind is Kind.HDV}
        for vid, decision in decisions.items():
            if decision != "stay":
                v = self.vehicles[vid]
                self._change_lane(v, 1 if decision == "left" else -1, report)

        decoded = {vid: decode_action(a) for vid, a in actions.items()}
        for vid, (lat, _) in decoded.items():
            _cav_lateral(self, self.vehicles[vid], lat, report)

        lanes = self.lanes()
        for v in self.vehicles.values():
            if v.kind is Kind.HDV:
                v.accel = _hdv_accel(self, v, lanes)
            else:
                lon = decoded[v.id][1] if v.id in decoded else 1
                v.accel = _cav_accel(cfg, lon)

        for v in self.vehicles.values():
            v.speed = min(cfg.v_max, max(0.0, v.speed + v.accel * cfg.sim_dt))
            v.pos += v.speed * cfg.sim_dt

        self._detect_collisions(report)
        self._record_completions(report)
        self._arrivals(report)
        remove_noncompliant(self, cfg.removal_speed_threshold, report)
        self.spawn_counts = list(report.spawn_counts)
        return report

    def _change_lane(self, v: Vehicle, delta: int, report: StepReport) -> None:
        report.lane_changes.append({"id": v.id, "kind": v.kind.value, "from": v.lane, "to": v.lane + delta})
        v.lane += delta
        v.lateral_move = delta

    def _detect_collisions(self, report: StepReport) -> None:
        collided = set()
        for members in self.lanes():
            for follower, leader in zip(members, members[1:]):
                if leader.pos - leader.length - follower.pos < 0.0:
                    report.collisions.append((follower.id, leader.id))
                    collided.update((follower.id, leader.id))
        report.collided = sorted(collided)
        for vid in report.collided:
            self._remove(vid, "collision", report)

    def _record_completions(self, report: StepReport) -> None:
        zone_start = self.config.road_length - 20.0
        for v in self.vehicles.values():
            if not v.completed and v.pos >= zone_start and \
                    v.lane in target_lanes(v.route, self.config.lane_count):
                v.completed = True
                report.completions.append(v.id)

    def _arrivals(self, report: StepReport) -> None:
        for vid in [vid for vid, v in self.vehicles.items() if v.pos >= self.config.road_length]:
            v = self.vehicles.pop(vid)
            record = {"id": vid, "kind": v.kind.value, "lane": v.lane, "step": self.step_index,
                      "success": v.lane in target_lanes(v.route, self.config.lane_count)}
            report.arrivals.append(record)
            self.arrived_log.append(record)

    def _remove(self, vid: int, reason: str, report: StepReport) -> None:
        v = self.vehicles.pop(vid)
        record = {"id": vid, "kind": v.kind.value, "lane": v.lane, "step": self.step_index, "reason": reason}
        report.removals.append(record)
        self.removed_log.append(record)

    def add_vehicle(self, kind: Kind, lane: int, pos: float, speed: float, route: Route,
                    accel: float = 0.0) -> Vehicle:
        """Place a vehicle directly (scripted scenarios and tests)."""
        v = Vehicle(id=self.next_id, kind=Kind(kind), lane=lane, pos=float(pos), speed=float(speed),
                    route=Route(route), length=self.config.vehicle_length, accel=accel,
                    spawn_step=self.step_index)
        self.next_id += 1
        self.vehicles[v.id] = v
        self.spawned_log.append(v.id)
        return v


def step_world(world: World, joint_cav_actions: Mapping[int, object]) -> tuple[World, StepReport]:
    report = world.step(joint_cav_actions)
    return world, report


# ---------------------------------------------------------------------- phases

def spawn_vehicles(world: World, report: StepReport | None = None) -> list[int]:
    """Bernoulli arrivals per lane; blocked arrivals wait in a per-lane queue."""
    cfg = world.config
    p = cfg.spawn_probability
    lanes = world.lanes()
    cum_routes = np.cumsum(cfg.route_probs)
    new_ids = []
    for lane in range(cfg.lane_count):
        if world.rng.random() < p:
            kind = Kind.CAV if world.rng.random() < cfg.cav_penetration else Kind.HDV
            route = ROUTES[min(int(np.searchsorted(cum_routes, world.rng.random(), side="right")), 2)]
            world.pending[lane].append((kind, route))
        if not world.pending[lane]:
            continue
        blocked = any(v.pos - v.length < cfg.entry_headway for v in lanes[lane])
        if blocked:
            if report is not None:
                report.deferred[lane] = len(world.pending[lane])
            continue
        kind, route = world.pending[lane].popleft()
        v = world.add_vehicle(kind, lane, 0.0, cfg.departure_speed, route)
        new_ids.append(v.id)
        if report is not None:
            report.spawned.append(v.id)
            report.spawn_counts[lane] += 1
            report.deferred[lane] = len(world.pending[lane])
    return new_ids


def hdv_lane_change_decision(world: World, vehicle_id: int, lanes=None) -> str:
    """Route-driven gap acceptance: 'stay', 'left' or 'right'.

    An HDV moves one lane toward its nearest target lane when both the gap to
    the new leader and the gap from the new follower are at least the IDM
    desired gap of the respective follower. There is no politeness term.
    """
    v = world.get(vehicle_id)
    cfg = world.config
    goal = nearest_target_lane(v.lane, v.route, cfg.lane_count)
    if goal == v.lane:
        return "stay"
    delta = 1 if goal > v.lane else -1
    lane = v.lane + delta
    lanes = lanes or world.lanes()
    leader = world.leader_of(v, lane, lanes)
    follower = world.follower_of(v, lane, lanes)
    if leader is not None:
        front_gap = leader.pos - leader.length - v.pos
        if front_gap < idm_desired_gap(v.speed, leader.speed, cfg.idm):
            return "stay"
    if follower is not None:
        rear_gap = v.pos - v.length - follower.pos
        if rear_gap < idm_desired_gap(follower.speed, v.speed, cfg.idm):
            return "stay"
    return "left" if delta > 0 else "right"


def _hdv_accel(world: World, v: Vehicle, lanes) -> float:
    leader = world.leader_of(v, lanes=lanes)
    if leader is None:
        return idm_acceleration(v.speed, v.speed, math.inf, world.config.idm)
    gap = leader.pos - leader.length - v.pos
    return idm_acceleration(v.speed, leader.speed, gap, world.config.idm)


def _cav_lateral(world: World, v: Vehicle, lat: int, report: StepReport | None) -> None:
    delta = (1, 0, -1)[lat]
    if delta == 0:
        return
    if not 0 <= v.lane + delta < world.config.lane_count:
        v.masked = True
        if report is not None:
            report.masked.append(v.id)
        return
    if report is None:
        v.lane += delta
        v.lateral_move = delta
    else:
        world._change_lane(v, delta, report)


def _cav_accel(cfg: ScenarioConfig, lon: int) -> float:
    return (cfg.cav_accel, 0.0, -cfg.cav_accel)[lon]


def apply_cav_action(world: World, vehicle_id: int, action) -> Vehicle:
    """Apply one CAV action in isolation: lane change, acceleration and speed update."""
    v = world.get(vehicle_id)
    if v.kind is not Kind.CAV:
        raise ValueError(f"vehicle {vehicle_id} is not a CAV")
    lat, lon = decode_action(action)
    v.masked = False
    v.lateral_move = 0
    _cav_lateral(world, v, lat, None)
    v.accel = _cav_accel(world.config, lon)
    v.speed = min(world.config.v_max, max(0.0, v.speed + v.accel * world.config.sim_dt))
    return v


def remove_noncompliant(world: World, threshold: float, report: StepReport | None = None) -> list[int]:
    """Remove vehicles slower than ``threshold``; vehicles spawned this step are exempt."""
    stalled = [vid for vid, v in world.vehicles.items()
               if v.speed < threshold and v.spawn_step != world.step_index]
    for vid in stalled:
        if report is None:
            report = StepReport(step=world.step_index)
        world._remove(vid, "noncompliant", report)
    return stalled
