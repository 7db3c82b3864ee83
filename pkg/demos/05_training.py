"""A short QMIX training run with and without the topology extension.

Run with ``python3 demos/05_training.py``. The acceptance suite runs the full
2000-episode version of this comparison.
"""
# %% [markdown]
# The toy scenario has two lanes, a 150 m road and CAV-only traffic. Agents
# share one recurrent Q network; a monotonic mixer combines their values.

# %%
import numpy as np

from topomarl.qmix import TrainConfig, Trainer
from topomarl.sim import ScenarioConfig
from topomarl.toponet import TopoNetConfig

scenario = ScenarioConfig(lane_count=2, road_length=150.0, flow_rate=150.0, cav_penetration=1.0)
train = TrainConfig(n_max=4, batch_episodes=8, epsilon_anneal_steps=3_000, reward_scale=0.01)
episodes = 40

# %%
for tpe in (False, True):
    trainer = Trainer(scenario, train, toponet=TopoNetConfig(update_rule="rmsprop"), tpe=tpe, seed=0)
    trainer.train(episodes)
    returns = np.array([log.env_return for log in trainer.logs])
    blocks = returns.reshape(4, -1).mean(axis=1)
    print(f"tpe={'on ' if tpe else 'off'} env return per 10-episode block {np.round(blocks, 0)} "
          f"train steps {trainer.learner.train_steps}")
    if tpe:
        print("last topology losses (tp, rg, kl):", np.round(trainer.learner.topo_loss_log[-1][1:], 4))

# %% [markdown]
# Greedy evaluation with a recorded trace feeds the metrics module.

# %%
from topomarl.evaluation import EpisodeTrace, compute_metrics, trace_header  # noqa: E402

result = trainer.collect(epsilon=0.0, record_trace=True, world_seed=12345)
report = compute_metrics([EpisodeTrace(trace_header(scenario.to_dict()), result.trace)])
print(report.to_json())
