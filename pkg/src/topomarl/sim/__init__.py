"""Highway microsimulator: world state, IDM human drivers, CAV actions, observations."""
from .config import ConfigError, IdmParams, ScenarioConfig
from .idm import idm_acceleration, idm_desired_gap
from .observation import (BASE_DIM, OBS_DIM, SLOT_ORDER, build_observation, feature_scale,
                          observe_cavs)
from .world import (LATERAL, LONGITUDINAL, N_ACTIONS, ROUTES, ActionMismatch, Kind, NoSuchAgent, Route,
                    StepReport, Vehicle, World, action_mask, apply_cav_action, decode_action,
                    encode_action, hdv_lane_change_decision, nearest_target_lane, remove_noncompliant,
                    spawn_vehicles, step_world, target_lanes)

__all__ = [
    "ActionMismatch", "BASE_DIM", "ConfigError", "IdmParams", "Kind", "LATERAL", "LONGITUDINAL",
    "N_ACTIONS", "NoSuchAgent", "OBS_DIM", "ROUTES", "Route", "SLOT_ORDER", "ScenarioConfig",
    "StepReport", "Vehicle", "World", "action_mask", "apply_cav_action", "build_observation",
    "decode_action", "encode_action", "feature_scale", "hdv_lane_change_decision", "idm_acceleration",
    "idm_desired_gap", "nearest_target_lane", "observe_cavs", "remove_noncompliant", "spawn_vehicles",
    "step_world", "target_lanes",
]
