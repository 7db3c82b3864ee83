"""Intelligent Driver Model car-following law."""
from __future__ import annotations

import logging
import math

from .config import IdmParams

log = logging.getLogger(__name__)


def idm_desired_gap(follower_speed: float, leader_speed: float, params: IdmParams) -> float:
    """Desired bumper-to-bumper gap d* for a follower behind a leader."""
    v = follower_speed
    dynamic = v * params.desired_time_headway - v * (leader_speed - v) / (
        2.0 * math.sqrt(params.max_accel * params.comfort_decel))
    return params.min_gap + max(0.0, dynamic)


def idm_acceleration(follower_speed: float, leader_speed: float, gap: float, params: IdmParams) -> float:
    """IDM acceleration, clamped to [-emergency_decel, max_accel].

    ``gap`` is the bumper-to-bumper distance to the leader; pass ``math.inf``
    on a free road. A non-positive gap returns full emergency braking.
    """
    if gap <= 0.0:
        log.debug("near-collision: gap %.3f m, emergency braking", gap)
        return -params.emergency_decel
    free = (follower_speed / params.desired_speed) ** params.accel_exponent
    interaction = 0.0 if math.isinf(gap) else (idm_desired_gap(follower_speed, leader_speed, params) / gap) ** 2
    accel = params.max_accel * (1.0 - free - interaction)
    return min(params.max_accel, max(-params.emergency_decel, accel))
