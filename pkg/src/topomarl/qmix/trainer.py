"""Collection-and-training loop tying the world, learner, buffer and counters together."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..reward import RewardConfig
from ..sim.config import ScenarioConfig
from ..sim.world import World
from ..topology import SimHashEncoder, VisitCounter, diversity_hasher
from ..toponet import TopoNetConfig
from .buffer import BufferWarmup, ReplayBuffer
from .config import TrainConfig
from .learner import QLearner, TrainStats
from .rollout import EpisodeResult, run_episode

log = logging.getLogger(__name__)

RETURNS_HEADER = ("episode", "env_return", "shaped_return", "epsilon", "collisions", "arrivals")


@dataclass
class EpisodeLog:
    episode: int
    env_return: float
    shaped_return: float
    epsilon: float
    collisions: int
    arrivals: int
    successes: int
    env_steps: int
    loss: float | None = None

    def row(self) -> list:
        return [self.episode, repr(self.env_return), repr(self.shaped_return), repr(self.epsilon),
                self.collisions, self.arrivals]


def reward_config_for(scenario: ScenarioConfig, rewards: RewardConfig) -> RewardConfig:
    """Tie the goal position and speed cap of the reward terms to the scenario."""
    return dataclasses.replace(rewards, goal_x=scenario.road_length, v_max=scenario.v_max)


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


class Trainer:
    def __init__(self, scenario: ScenarioConfig, train: TrainConfig = TrainConfig(),
                 rewards: RewardConfig = RewardConfig(), toponet: TopoNetConfig | None = TopoNetConfig(),
                 tpe: bool = True, seed: int = 0):
        self.scenario = scenario
        self.train_config = train
        self.rewards = reward_config_for(scenario, rewards)
        self.seed = seed
        self.learner = QLearner(scenario, train, self.rewards, toponet, tpe=tpe, seed=seed)
        self.buffer = ReplayBuffer(train.buffer_capacity)
        self.counter = VisitCounter()
        self.encoder = SimHashEncoder(bits=8, seed=seed)
        self.hasher = diversity_hasher(seed)
        self.action_rng = np.random.default_rng(np.random.SeedSequence([seed, 1 << 20]))
        self.episodes_done = 0
        self.env_steps = 0
        self.logs: list[EpisodeLog] = []
        self.train_stats: list[TrainStats] = []

    def collect(self, epsilon: float | None = None, record_trace: bool = False,
                world_seed: int | None = None) -> EpisodeResult:
        eps = self.train_config.epsilon(self.env_steps) if epsilon is None else epsilon
        seed = episode_seed(self.seed, self.episodes_done) if world_seed is None else world_seed
        world = World(self.scenario, seed=seed)
        return run_episode(world, self.learner.agent, eps, self.action_rng, self.counter, self.encoder,
                           self.hasher, self.rewards, self.train_config.n_max,
                           beta_visit=self.learner.beta_visit, record_trace=record_trace)

    def train(self, episodes: int, callback=None) -> list[EpisodeLog]:
        """Collect ``episodes`` episodes, each followed by one TD update once the buffer is warm."""
        for _ in range(episodes):
            eps = self.train_config.epsilon(self.env_steps)
            result = self.collect(eps)
            self.buffer.add(result.record)
            self.env_steps += result.record.length
            loss = None
            try:
                stats = self.learner.train_step(self.buffer)
                self.train_stats.append(stats)
                loss = stats.loss
            except BufferWarmup:
                pass
            entry = EpisodeLog(self.episodes_done, result.env_return, result.shaped_return, eps,
                               result.collisions, result.arrivals, result.successes, self.env_steps, loss)
            self.logs.append(entry)
            self.episodes_done += 1
            if callback is not None:
                callback(entry, result)
        return self.logs


def write_returns_csv(logs: list[EpisodeLog], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RETURNS_HEADER)
        for entry in logs:
            writer.writerow(entry.row())
    return path


def write_loss_csv(rows, path, header) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows([[repr(x) if isinstance(x, float) else x for x in row] for row in rows])
    return path
