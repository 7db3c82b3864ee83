"""Per-agent observation vectors.

Layout of the 42-value vector:

    [0:8]    ego: x, lane, v, type (CAV=1), target lane, H_left, H_front, H_right
    [8:38]   six neighbour slots of (dx, dlane, dv, type, target lane), in the
             order left-front, left-rear, same-front, same-rear, right-front,
             right-rear; differences are ego minus neighbour
    [38:42]  vehicles spawned this step in lanes 0..3

Headways are front-to-front longitudinal distances to the nearest leader in
each lane, capped at the observation radius, which is also the value used when
no leader (or no lane) exists.
"""
from __future__ import annotations

import numpy as np

from .world import SPAWN_SLOTS, Kind, World, nearest_target_lane

EGO_DIM = 8
SLOT_DIM = 5
N_SLOTS = 6
BASE_DIM = EGO_DIM + SLOT_DIM * N_SLOTS      # 38
OBS_DIM = BASE_DIM + SPAWN_SLOTS             # 42
SLOT_ORDER = ("left-front", "left-rear", "same-front", "same-rear", "right-front", "right-rear")


def _scan_lane(ego, members, radius: float):
    """Nearest front and rear vehicle of ``ego`` in one lane within ``radius``."""
    front = rear = None
    for other in members:
        if other.id == ego.id:
            continue
        dx = other.pos - ego.pos
        if dx > 0 or (dx == 0 and (other.lane != ego.lane or other.id > ego.id)):
            if dx <= radius and (front is None or other.pos < front.pos):
                front = other
        elif -dx <= radius and (rear is None or other.pos > rear.pos):
            rear = other
    return front, rear


def build_observation(world: World, vehicle_id: int, lanes=None) -> np.ndarray:
    ego = world.get(vehicle_id)
    cfg = world.config
    lanes = lanes or world.lanes()
    radius = cfg.obs_radius
    obs = np.zeros(OBS_DIM)
    obs[0:5] = (ego.pos, ego.lane, ego.speed, 1.0 if ego.kind is Kind.CAV else 0.0,
                nearest_target_lane(ego.lane, ego.route, cfg.lane_count))
    slot = 0
    for offset, headway_index in ((1, 5), (0, 6), (-1, 7)):
        lane = ego.lane + offset
        front = rear = None
        if 0 <= lane < cfg.lane_count:
            front, rear = _scan_lane(ego, lanes[lane], radius)
        obs[headway_index] = radius if front is None else min(radius, front.pos - ego.pos)
        for other in (front, rear):
            if other is not None:
                base = EGO_DIM + SLOT_DIM * slot
                obs[base:base + SLOT_DIM] = (
                    ego.pos - other.pos, ego.lane - other.lane, ego.speed - other.speed,
                    1.0 if other.kind is Kind.CAV else 0.0,
                    nearest_target_lane(other.lane, other.route, cfg.lane_count))
            slot += 1
    obs[BASE_DIM:] = world.spawn_counts[:SPAWN_SLOTS]
    return obs


def observe_cavs(world: World) -> dict[int, np.ndarray]:
    """Observations of every live CAV keyed by vehicle id (ascending)."""
    lanes = world.lanes()
    return {vid: build_observation(world, vid, lanes) for vid in world.cav_ids()}


def feature_scale(road_length: float, v_max: float, radius: float, lane_count: int) -> np.ndarray:
    """Fixed divisors that bring every observation feature to O(1) for the networks."""
    lanes = max(1, lane_count - 1)
    ego = [road_length, lanes, v_max, 1.0, lanes, radius, radius, radius]
    slot = [radius, 1.0, v_max, 1.0, lanes]
    return np.array(ego + slot * N_SLOTS + [1.0] * SPAWN_SLOTS)
