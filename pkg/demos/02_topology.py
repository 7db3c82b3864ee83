"""From observations to a game topology tensor and a visit count.

Run with ``python3 demos/02_topology.py``.
"""
# %% [markdown]
# Each CAV observes itself, its six neighbour slots and the spawn metadata.
# The topology between two CAVs is the norm of their observation difference
# plus an 8-bit SimHash code of its direction.

# %%
import numpy as np

from topomarl.sim import Kind, Route, ScenarioConfig, World, observe_cavs
from topomarl.topology import (SimHashEncoder, VisitCounter, build_game_topology_tensor, diversity_hasher,
                               obs_difference_descriptor, select_topology_set, topology_visit_key)

world = World(ScenarioConfig(lane_count=3, flow_rate=0.0), seed=0)
for lane, pos, speed in [(0, 50.0, 12.0), (1, 60.0, 15.0), (1, 90.0, 14.0), (2, 140.0, 18.0)]:
    world.add_vehicle(Kind.CAV, lane, pos, speed, Route.STRAIGHT)
observations = observe_cavs(world)
encoder = SimHashEncoder(bits=8, seed=0)
for vid, obs in observations.items():
    print(f"CAV {vid}: first eight features {np.round(obs[:8], 1)}")

# %%
a, b = observations[0], observations[1]
d = obs_difference_descriptor(a, b, encoder)
print(f"0 vs 1: norm {d.norm:.2f}, code {d.angle_code:08b}")
print(f"1 vs 0: norm {obs_difference_descriptor(b, a, encoder).norm:.2f}, "
      f"code {obs_difference_descriptor(b, a, encoder).angle_code:08b}  (bitwise complement)")

# %% [markdown]
# Every CAV attends to its most and least different peers. Stacking those
# descriptors gives a compact tensor of four numbers per agent.

# %%
for vid in observations:
    print(f"CAV {vid} attends to (max, min) = {select_topology_set(observations, vid)}")
tensor = build_game_topology_tensor(observations, encoder)
print(np.round(tensor.as_array(scaled=True), 3))

# %% [markdown]
# A 64-bit hash of the whole tensor keys a visit counter; rarely seen
# topologies earn a larger exploration bonus 1/sqrt(n).

# %%
hasher, counter = diversity_hasher(0), VisitCounter()
key = topology_visit_key(tensor, hasher)
print(f"key {key:016x}:", [round(counter.visit(key), 3) for _ in range(4)])
