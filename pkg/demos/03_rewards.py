"""The environmental reward and its intrinsic extensions.

Run with ``python3 demos/03_rewards.py``.
"""
# %% [markdown]
# The positional field pulls CAVs towards the road end in their target lane.
# It peaks sigma metres before the goal and is attenuated per lane of offset.

# %%
import numpy as np

from topomarl.reward import RewardConfig, environmental_reward, positional_field, positional_reward_terms
from topomarl.sim import Kind, Route, ScenarioConfig, StepReport, World, encode_action

cfg = RewardConfig()
for x in (100.0, 190.0, 240.0, 250.0):
    row = [positional_field(x, lane, 0, cfg) for lane in range(3)]
    print(f"x={x:5.1f} field by lane offset {np.round(row, 3)}")

# %% [markdown]
# Moving towards the target lane is rewarded and leaving it is penalised.

# %%
print("towards target:", round(positional_reward_terms(0.0, -1, 250.0, 2, 0, cfg), 4))
print("leave target:  ", positional_reward_terms(0.0, 1, 250.0, 1, 1, cfg))
print("stay, 10 m/s, 60 m out:", round(positional_reward_terms(10.0, 0, 190.0, 0, 0, cfg), 2))

# %% [markdown]
# One step of a live world: the breakdown shows every weighted term.

# %%
world = World(ScenarioConfig(lane_count=3, flow_rate=0.0), seed=0)
world.add_vehicle(Kind.CAV, 1, 180.0, 15.0, Route.RIGHT)
world.add_vehicle(Kind.HDV, 0, 120.0, 18.0, Route.STRAIGHT)
report = world.step({0: encode_action(2, 0)})        # right change while accelerating
breakdown = environmental_reward(world, report, cfg)
print(breakdown)
crash = environmental_reward(world, StepReport(step=1, collisions=[(0, 1)], collided=[0, 1]), cfg)
print(f"same state with a two-vehicle collision: env_total {crash.env_total:.2f}")
print("with intrinsic terms:", breakdown.with_intrinsic(0.5, 1.0, cfg).grand_total)
