"""Value-decomposition learner: recurrent agents, monotonic mixer, replay and training loop."""
from .buffer import BufferWarmup, EpisodeRecord, ReplayBuffer
from .config import TrainConfig
from .learner import (ActiveRows, EpisodeBatch, QLearner, TopoSamples, TrainStats, Unrolled, build_topo_samples,
                      greedy_target_values, observation_windows, taken_values, td_error_loss, td_targets,
                      topology_rewards, unroll_agent)
from .networks import (AgentQNet, HiddenRegistry, MixingNet, NoValidAction, agent_q_forward, mixing_state,
                       mixing_state_dim, select_actions, slot_topology)
from .rollout import EpisodeAborted, EpisodeResult, SlotTable, run_episode
from .trainer import EpisodeLog, Trainer, episode_seed, reward_config_for, write_loss_csv, write_returns_csv

__all__ = [
    "ActiveRows", "AgentQNet", "BufferWarmup", "EpisodeAborted", "EpisodeBatch", "EpisodeLog", "EpisodeRecord",
    "EpisodeResult", "HiddenRegistry", "MixingNet", "NoValidAction", "QLearner", "ReplayBuffer",
    "SlotTable", "TopoSamples", "TrainConfig", "TrainStats", "Trainer", "Unrolled", "agent_q_forward",
    "build_topo_samples", "episode_seed", "greedy_target_values", "mixing_state", "mixing_state_dim",
    "observation_windows", "reward_config_for", "run_episode", "select_actions", "slot_topology", "taken_values",
    "td_error_loss", "td_targets", "topology_rewards", "unroll_agent", "write_loss_csv",
    "write_returns_csv",
]
