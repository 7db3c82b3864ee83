"""Train, evaluate, map policy diversity and replay an episode through the CLI.

Run with ``python3 demos/06_cli_pipeline.py``. Artifacts go to a temporary
directory unless ``TOPOMARL_OUTPUT_ROOT`` is set.
"""
# %%
import json
import os
import tempfile
from pathlib import Path

from topomarl.cli import main
from topomarl.topology import read_pgm

root = Path(os.environ.get("TOPOMARL_OUTPUT_ROOT") or tempfile.mkdtemp(prefix="topomarl-demo-"))
os.environ["TOPOMARL_OUTPUT_ROOT"] = str(root)
config = {
    "name": "demo",
    "output_dir": "demo",
    "seeds": [0],
    "episodes": 12,
    "checkpoint_interval": 6,
    "scenario": {"lane_count": 3, "road_length": 200.0, "flow_rate": 900.0, "cav_penetration": 0.5},
    "train": {"n_max": 6, "batch_episodes": 4, "reward_scale": 0.01},
    "toponet": {"update_rule": "rmsprop"},
}
config_path = root / "demo.json"
config_path.write_text(json.dumps(config, indent=2))

# %% [markdown]
# ``train`` writes checkpoints, CSV logs, the visit counter and a manifest.

# %%
assert main(["train", "--config", str(config_path)]) == 0
run = root / "demo" / "seed_0"
print(sorted(p.name for p in run.iterdir()))

# %% [markdown]
# ``evaluate`` runs greedy rollouts on held-out seeds and writes traces plus
# the metrics report.

# %%
assert main(["evaluate", "--config", str(config_path), "--checkpoint", str(run / "checkpoint_ep000012.tpck"),
             "--episodes", "3", "--out", "eval"]) == 0

# %% [markdown]
# ``heatmap`` hashes the recorded topologies every four steps onto a 32 x 32
# grid; ``replay`` flattens one episode into a space-time table.

# %%
assert main(["heatmap", "--traces", str(root / "eval" / "*.jsonl"), "--out", "heatmap"]) == 0
pixels = read_pgm(root / "heatmap" / "heatmap.pgm")
print("occupied heatmap cells:", int((pixels > 0).sum()), "of", pixels.size)
assert main(["replay", "--trace", str(root / "eval" / "traces.jsonl"), "--out", "replay/ep0.csv"]) == 0
print("artifacts under", root)
