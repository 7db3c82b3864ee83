"""Training hyperparameters for the value-decomposition learner."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    target_update_interval: int = 200     # train steps
    batch_episodes: int = 32
    buffer_capacity: int = 10_000         # timesteps
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 50_000    # environment steps
    n_max: int = 12
    hidden_dim: int = 64
    mixing_dim: int = 32
    grad_clip: float = 10.0
    reward_scale: float = 1.0
    topo_batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_max < 1 or self.batch_episodes < 1 or self.buffer_capacity < 1:
            raise ValueError("n_max, batch_episodes and buffer_capacity must be >= 1")
        if self.target_update_interval < 1:
            raise ValueError("target_update_interval must be >= 1")

    def epsilon(self, env_steps: int) -> float:
        """Linear schedule from epsilon_start to epsilon_end over the anneal horizon."""
        if self.epsilon_anneal_steps <= 0:
            return self.epsilon_end
        frac = max(0, env_steps) / self.epsilon_anneal_steps
        if frac >= 1.0:
            return self.epsilon_end
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)
