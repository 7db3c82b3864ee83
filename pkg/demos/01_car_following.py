"""Human drivers on an open road: the intelligent driver model and the microsimulator.

Run with ``python3 demos/01_car_following.py``.
"""
# %% [markdown]
# Every human-driven vehicle follows its leader with the intelligent driver
# model. The desired gap grows with speed and with the closing rate.

# %%
import math

import numpy as np

from topomarl.sim import IdmParams, Kind, Route, ScenarioConfig, World, idm_acceleration, idm_desired_gap

idm = IdmParams()
for v, v_lead in [(0.0, 10.0), (10.0, 10.0), (10.0, 5.0)]:
    print(f"v={v:4.1f} v_lead={v_lead:4.1f} -> desired gap {idm_desired_gap(v, v_lead, idm):7.3f} m")
print("free road, standing start:", idm_acceleration(0.0, 0.0, math.inf, idm), "m/s^2")
print("at desired speed:          ", idm_acceleration(20.0, 20.0, math.inf, idm), "m/s^2")

# %% [markdown]
# A tight platoon of three HDVs at 15 m/s. The leader accelerates towards the
# desired speed; each follower is held back by its gap, so the gaps open up as
# speeds rise and the desired gap grows.

# %%
world = World(ScenarioConfig(lane_count=1, road_length=400.0, flow_rate=0.0), seed=0)
for pos, speed in [(40.0, 15.0), (25.0, 15.0), (10.0, 15.0)]:
    world.add_vehicle(Kind.HDV, 0, pos, speed, Route.STRAIGHT)
for step in range(100):
    world.step({})
    if step % 25 == 24:
        cars = sorted(world.vehicles.values(), key=lambda v: -v.pos)
        gaps = [a.pos - a.length - b.pos for a, b in zip(cars, cars[1:])]
        print(f"t={world.step_index * 0.1:4.1f}s speeds={np.round([c.speed for c in cars], 2)} "
              f"gaps={np.round(gaps, 2)}")

# %% [markdown]
# With random arrivals the simulator spawns traffic at the entrance; vehicles
# leave at the road end or are removed when they stall.

# %%
world = World(ScenarioConfig(flow_rate=1200.0, cav_penetration=0.0), seed=1)
for _ in range(600):
    world.step({})
print(f"spawned {len(world.spawned_log)}, arrived {len(world.arrived_log)}, "
      f"removed {len(world.removed_log)}, on road {len(world.vehicles)}")
