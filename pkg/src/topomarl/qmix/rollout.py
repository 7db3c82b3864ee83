"""Episode collection: observe, build topology, act, step, reward, record."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..reward import RewardConfig, environmental_reward
from ..sim.observation import OBS_DIM, observe_cavs
from ..sim.world import N_ACTIONS, World, action_mask
from ..topology import SimHashEncoder, VisitCounter, build_game_topology_tensor, topology_visit_key
from .buffer import EpisodeRecord
from .networks import TOPO_WIDTH, AgentQNet, HiddenRegistry, select_actions, slot_topology

log = logging.getLogger(__name__)

BREAKDOWN_FIELDS = ("action_term", "positional_term", "flow_term", "safety_term", "completion_term")


class EpisodeAborted(RuntimeError):
    """A simulator error stopped the rollout; ``diagnostic`` describes where."""

    def __init__(self, diagnostic: dict):
        super().__init__(f"episode aborted at step {diagnostic.get('step')}: {diagnostic.get('error')}")
        self.diagnostic = diagnostic


@dataclass
class EpisodeResult:
    record: EpisodeRecord
    env_return: float
    shaped_return: float
    collisions: int
    arrivals: int
    successes: int
    n_cavs: int
    trace: list | None = field(default=None)


class SlotTable:
    """Stable slot per tracked CAV for its whole lifetime.

    A CAV first seen while every slot is taken stays untracked for life: it
    still acts, but never enters the replay record.
    """

    def __init__(self, n_max: int):
        self.n_max = n_max
        self.slots: dict[int, int] = {}
        self.untracked: set[int] = set()

    def update(self, live_ids) -> list[int]:
        """Release departed vehicles, place new ones; returns newly placed slots."""
        live = set(live_ids)
        for vid in [v for v in self.slots if v not in live]:
            del self.slots[vid]
        self.untracked &= live
        used = set(self.slots.values())
        placed = []
        for vid in sorted(live):
            if vid in self.slots or vid in self.untracked:
                continue
            free = next((k for k in range(self.n_max) if k not in used), None)
            if free is None:
                self.untracked.add(vid)
                continue
            self.slots[vid] = free
            used.add(free)
            placed.append(free)
        return placed


def run_episode(world: World, agent: AgentQNet, epsilon: float, rng: np.random.Generator,
                counter: VisitCounter, encoder: SimHashEncoder, hasher: SimHashEncoder,
                reward_cfg: RewardConfig, n_max: int, beta_visit: float | None = None,
                record_trace: bool = False) -> EpisodeResult:
    """Roll out ``world.config.episode_length`` steps under masked epsilon-greedy control.

    The environmental return sums only environmental reward terms; the shaped
    return adds the weighted visitation bonus known at collection time. Steps
    without any CAV visit no topology and earn no bonus.
    """
    cfg = world.config
    T = cfg.episode_length
    beta_visit = reward_cfg.beta1 if beta_visit is None else beta_visit
    obs_arr = np.zeros((T + 1, n_max, OBS_DIM))
    alive = np.zeros((T + 1, n_max), dtype=bool)
    fresh = np.zeros((T + 1, n_max), dtype=bool)
    avail = np.zeros((T + 1, n_max, N_ACTIONS), dtype=bool)
    topo = np.zeros((T + 1, n_max, TOPO_WIDTH))
    attention = np.full((T + 1, n_max, 2), -1, dtype=np.int64)
    vehicle_ids = np.full((T + 1, n_max), -1, dtype=np.int64)
    actions_arr = np.zeros((T, n_max), dtype=np.int64)
    env_reward = np.zeros(T)
    visit_reward = np.zeros(T)
    breakdown = np.zeros((T, len(BREAKDOWN_FIELDS)))
    done = np.zeros(T, dtype=bool)
    done[-1] = True

    slots = SlotTable(n_max)
    registry = HiddenRegistry(agent.hidden_dim)
    trace = [] if record_trace else None
    seen_cavs: set[int] = set()
    collisions = arrivals = successes = 0

    def observe(t):
        observations = observe_cavs(world)
        for k in slots.update(observations):
            fresh[t, k] = True
        tensor = build_game_topology_tensor(observations, encoder)
        topo[t] = slot_topology(tensor, slots.slots, n_max)
        for entry in tensor.entries:
            k = slots.slots.get(entry.owner)
            if k is None:
                continue
            attention[t, k] = [slots.slots.get(j, -1) if j is not None else -1 for j in entry.attention_set]
        for vid, k in slots.slots.items():
            obs_arr[t, k] = observations[vid]
            alive[t, k] = True
            vehicle_ids[t, k] = vid
            avail[t, k] = action_mask(world.vehicles[vid].lane, cfg.lane_count)
        return observations, tensor

    observations, tensor = observe(0)
    for t in range(T):
        if len(tensor):
            visit_reward[t] = counter.visit(topology_visit_key(tensor, hasher))
        ids = sorted(observations)
        seen_cavs.update(ids)
        registry.sync(ids)
        if ids:
            q, h = agent.forward(np.stack([observations[v] for v in ids]), registry.gather(ids))
            registry.scatter(ids, h)
            q_values = dict(zip(ids, q))
        else:
            q_values = {}
        masks = {vid: action_mask(world.vehicles[vid].lane, cfg.lane_count) for vid in ids}
        joint = select_actions(q_values, epsilon, masks, rng)
        for vid, a in joint.items():
            k = slots.slots.get(vid)
            if k is not None:
                actions_arr[t, k] = a
        try:
            report = world.step(joint)
        except Exception as exc:  # surfaced with context for the caller
            raise EpisodeAborted({"step": t, "error": repr(exc), "actions": joint,
                                  "vehicles": [v.snapshot() for v in world.vehicles.values()]}) from exc
        bd = environmental_reward(world, report, reward_cfg)
        env_reward[t] = bd.env_total
        breakdown[t] = [getattr(bd, name) for name in BREAKDOWN_FIELDS]
        bd.with_intrinsic(visit_reward[t], 0.0, reward_cfg)
        collisions += len(report.collisions)
        cav_arrivals = [a for a in report.arrivals if a["kind"] == "CAV"]
        arrivals += len(cav_arrivals)
        successes += sum(bool(a["success"]) for a in cav_arrivals)
        if trace is not None:
            trace.append({"record": "step", "t": world.step_index,
                          "vehicles": [v.snapshot() for v in sorted(world.vehicles.values(), key=lambda v: v.id)],
                          "events": report.to_dict(), "reward": bd.to_dict(),
                          "topology": tensor.flat().tolist(), "actions": {str(k): v for k, v in joint.items()}})
        observations, tensor = observe(t + 1)

    record = EpisodeRecord(obs=obs_arr, alive=alive, fresh=fresh, avail=avail, topology=topo,
                           attention=attention, vehicle_ids=vehicle_ids, actions=actions_arr,
                           env_reward=env_reward, visit_reward=visit_reward, done=done, breakdown=breakdown)
    env_return = float(env_reward.sum())
    shaped_return = float((env_reward + beta_visit * visit_reward).sum())
    return EpisodeResult(record, env_return, shaped_return, collisions, arrivals, successes,
                         len(seen_cavs), trace)
