"""Episode records and the timestep-capacity replay buffer."""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpisodeRecord:
    """Slot-aligned arrays of one rollout of T steps.

    Slot k at time t holds the k-th tracked CAV observed before step t acted;
    index T holds the observation after the final step. ``fresh`` marks the first
    step of a vehicle in its slot (recurrent state resets there) and
    ``attention`` stores the slots of the (max-difference, min-difference)
    CAVs, -1 when empty or untracked.
    """

    obs: np.ndarray            # (T+1, N, 42)
    alive: np.ndarray          # (T+1, N) bool
    fresh: np.ndarray          # (T+1, N) bool
    avail: np.ndarray          # (T+1, N, 9) bool
    topology: np.ndarray       # (T+1, N, 4) scaled
    attention: np.ndarray      # (T+1, N, 2) int
    vehicle_ids: np.ndarray    # (T+1, N) int, -1 when empty
    actions: np.ndarray        # (T, N) int
    env_reward: np.ndarray     # (T,)
    visit_reward: np.ndarray   # (T,)
    done: np.ndarray           # (T,) bool
    breakdown: np.ndarray = field(default=None)   # (T, 5) env components

    def __post_init__(self):
        for name in ("obs", "alive", "fresh", "avail", "topology", "attention", "vehicle_ids", "actions",
                     "env_reward", "visit_reward", "done", "breakdown"):
            value = getattr(self, name)
            if value is not None:
                value.setflags(write=False)

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def n_slots(self) -> int:
        return int(self.obs.shape[1])


class BufferWarmup(RuntimeError):
    """Raised when a training step is requested before enough episodes exist."""


class ReplayBuffer:
    """FIFO over whole episodes with a capacity counted in timesteps.

    One writer (collection) and one reader (training) may share the buffer;
    ``add`` and ``sample`` hold an internal lock so a reader never sees a
    partially evicted state.
    """

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.episodes: deque[EpisodeRecord] = deque()
        self.total_steps = 0
        self.evicted = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.episodes)

    def add(self, episode: EpisodeRecord) -> None:
        if episode.length > self.capacity:
            raise ValueError(f"episode of {episode.length} steps exceeds capacity {self.capacity}")
        with self._lock:
            self.episodes.append(episode)
            self.total_steps += episode.length
            while self.total_steps > self.capacity:
                old = self.episodes.popleft()
                self.total_steps -= old.length
                self.evicted += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        with self._lock:
            if len(self.episodes) < n:
                raise BufferWarmup(f"buffer warm-up: {len(self.episodes)} of {n} episodes stored")
            idx = rng.choice(len(self.episodes), size=n, replace=False)
            return [self.episodes[i] for i in idx]
