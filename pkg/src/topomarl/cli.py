"""Command-line entry point: train, evaluate, heatmap and replay.

Exit codes are 0 on success, 2 for configuration errors and 3 for runtime
errors. Relative output paths are placed under ``$TOPOMARL_OUTPUT_ROOT`` when
that variable is set.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .autodiff import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import (EpisodeTrace, NoData, TraceParseError, compute_metrics, diversity_heatmap,
                         expand_trace_paths, read_traces, spacetime_export, topology_samples, trace_header,
                         write_spacetime_csv, write_trace)
from .qmix import TrainConfig, Trainer, episode_seed, write_loss_csv, write_returns_csv
from .reward import RewardConfig
from .sim.config import ConfigError, ScenarioConfig
from .topology import diversity_hasher, write_heatmap_csv, write_heatmap_pgm
from .toponet import TopoNetConfig

log = logging.getLogger("topomarl")

OUTPUT_ROOT_ENV = "TOPOMARL_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
TD_LOSS_HEADER = ("train_step", "loss", "mean_q_tot", "grad_norm", "mean_topo_reward")
TOPO_LOSS_HEADER = ("train_step", "topology_loss", "reconstruction_loss", "kl_loss")


class RuntimeFailure(RuntimeError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("topomarl").joinpath("schema/experiment.schema.json").read_text())


def validate_config_dict(data: dict) -> None:
    """Raise ConfigError listing every schema violation with its JSON path."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run; ``seeds`` fans out into independent runs."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    toponet: TopoNetConfig = field(default_factory=TopoNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/experiment"
    seeds: tuple = (0,)
    tpe: bool = True
    episodes: int | None = None
    step_budget: int | None = None
    checkpoint_interval: int = 100
    eval_seed_offset: int = 1_000_000
    hash_seed: int = 0
    name: str = "experiment"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        validate_config_dict(data)
        data = dict(data)
        try:
            parts = {
                "scenario": ScenarioConfig.from_dict(data.pop("scenario", {})),
                "rewards": RewardConfig.from_dict(data.pop("rewards", {})),
                "toponet": TopoNetConfig.from_dict(data.pop("toponet", {})),
                "train": TrainConfig.from_dict(data.pop("train", {})),
            }
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        return cls(**parts, **data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "output_dir": self.output_dir, "seeds": list(self.seeds), "tpe": self.tpe,
            "episodes": self.episodes, "step_budget": self.step_budget,
            "checkpoint_interval": self.checkpoint_interval, "eval_seed_offset": self.eval_seed_offset,
            "hash_seed": self.hash_seed, "scenario": self.scenario.to_dict(), "rewards": self.rewards.to_dict(),
            "toponet": self.toponet.to_dict(), "train": self.train.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def trainer(self, seed: int) -> Trainer:
        return Trainer(self.scenario, self.train, self.rewards, self.toponet, tpe=self.tpe, seed=seed)


def resolve_output(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def manifest(config: ExperimentConfig, seed: int, status: str, **extra) -> dict:
    out = {"status": status, "version": __version__, "config_hash": config.config_hash(), "seed": seed,
           "config": config.to_dict(), "python": platform.python_version(), "numpy": np.__version__}
    out.update(extra)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------- commands

def cmd_train(config: ExperimentConfig) -> list[Path]:
    """Train one run per seed; returns the run directories."""
    if config.episodes is None and config.step_budget is None:
        raise ConfigError("train needs 'episodes' or 'step_budget'")
    root = resolve_output(config.output_dir)
    runs = []
    for seed in config.seeds:
        run_dir = root / f"seed_{seed}"
        try:
            runs.append(_train_one(config, seed, run_dir))
        except OSError as exc:
            try:
                _write_json(run_dir / "manifest.json", manifest(config, seed, "partial", error=repr(exc)))
            except OSError:
                pass
            raise RuntimeFailure(f"disk failure while writing {run_dir}: {exc}") from exc
    return runs


def _train_one(config: ExperimentConfig, seed: int, run_dir: Path) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "manifest.json", manifest(config, seed, "partial"))
    trainer = config.trainer(seed)
    checkpoints = []

    def more() -> bool:
        if config.episodes is not None and trainer.episodes_done >= config.episodes:
            return False
        return config.step_budget is None or trainer.env_steps < config.step_budget

    while more():
        entry = trainer.train(1)[-1]
        n = trainer.episodes_done
        if n % 50 == 0:
            log.info("seed %d episode %d env_return %.1f epsilon %.3f", seed, n, entry.env_return, entry.epsilon)
        if config.checkpoint_interval and n % config.checkpoint_interval == 0:
            checkpoints.append(_save(trainer, run_dir / f"checkpoint_ep{n:06d}.tpck", config, seed))
    n = trainer.episodes_done
    if n and not (config.checkpoint_interval and n % config.checkpoint_interval == 0):
        checkpoints.append(_save(trainer, run_dir / f"checkpoint_ep{n:06d}.tpck", config, seed))

    artifacts = [write_returns_csv(trainer.logs, run_dir / "returns.csv"),
                 write_loss_csv([(s.train_step, s.loss, s.mean_q_tot, s.grad_norm, s.mean_topo_reward)
                                 for s in trainer.train_stats], run_dir / "td_loss.csv", TD_LOSS_HEADER),
                 write_loss_csv(trainer.learner.topo_loss_log, run_dir / "topo_loss.csv", TOPO_LOSS_HEADER)]
    if trainer.episodes_done:
        counter = run_dir / "visit_counter.json"
        _write_json(counter, trainer.counter.to_dict())
        artifacts.append(counter)
    latest = checkpoints[-1].name if checkpoints else None
    _write_json(run_dir / "manifest.json", manifest(
        config, seed, "complete", episodes=trainer.episodes_done, env_steps=trainer.env_steps,
        train_steps=trainer.learner.train_steps, latest_checkpoint=latest,
        artifacts=sorted(p.name for p in artifacts + checkpoints)))
    return run_dir


def _save(trainer: Trainer, path: Path, config: ExperimentConfig, seed: int) -> Path:
    return save_checkpoint(path, trainer.learner.tensors(), {
        "episodes": trainer.episodes_done, "env_steps": trainer.env_steps, "config_hash": config.config_hash(),
        "seed": seed, "version": __version__})


def load_trainer(config: ExperimentConfig, checkpoint, seed: int) -> Trainer:
    trainer = config.trainer(seed)
    try:
        tensors = load_checkpoint(checkpoint)
    except FileNotFoundError:
        raise RuntimeFailure(f"checkpoint not found: {checkpoint}") from None
    except CheckpointError as exc:
        raise RuntimeFailure(f"incompatible checkpoint: {exc}") from None
    try:
        trainer.learner.load_tensors(tensors)
    except ValueError as exc:
        raise RuntimeFailure(str(exc)) from None
    return trainer


def evaluation_traces(trainer: Trainer, config: ExperimentConfig, episodes: int, seed: int) -> list[EpisodeTrace]:
    """Greedy rollouts on evaluation world seeds disjoint from the training ones."""
    traces = []
    base = seed + config.eval_seed_offset
    for ep in range(episodes):
        world_seed = episode_seed(base, ep)
        result = trainer.collect(epsilon=0.0, record_trace=True, world_seed=world_seed)
        header = trace_header(config.scenario.to_dict(), episode=ep, seed=world_seed, policy_seed=seed)
        traces.append(EpisodeTrace(header, result.trace))
    return traces


def cmd_evaluate(config: ExperimentConfig, checkpoint, episodes: int, out_dir=None) -> Path:
    if episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    seed = config.seeds[0]
    trainer = load_trainer(config, checkpoint, seed)
    traces = evaluation_traces(trainer, config, episodes, seed)
    out = resolve_output(out_dir) if out_dir else resolve_output(config.output_dir) / f"eval_seed_{seed}"
    write_trace(out / "traces.jsonl", traces)
    report = compute_metrics(traces)
    report.write(out)
    _write_json(out / "manifest.json", manifest(config, seed, "complete", checkpoint=str(checkpoint),
                                                episodes=episodes))
    print(report.to_json())
    return out


def cmd_heatmap(pattern: str, stride: int = 4, hash_seed: int = 0, out_dir=None) -> Path:
    paths = expand_trace_paths(pattern)
    if not paths:
        raise RuntimeFailure(f"no samples: no trace files match {pattern!r}")
    traces = [t for p in paths for t in read_traces(p)]
    samples = topology_samples(traces, stride)
    if not samples:
        raise RuntimeFailure(f"no samples: no topology records in {len(paths)} trace file(s)")
    counts = diversity_heatmap(samples, diversity_hasher(hash_seed))
    out = resolve_output(out_dir or "heatmap")
    write_heatmap_csv(counts, out / "heatmap.csv")
    write_heatmap_pgm(counts, out / "heatmap.pgm")
    _write_json(out / "manifest.json", {"version": __version__, "traces": [str(p) for p in paths],
                                        "stride": stride, "hash_seed": hash_seed, "samples": len(samples)})
    print(f"{len(samples)} samples -> {out / 'heatmap.pgm'}")
    return out


def cmd_replay(trace_path, episode: int = 0, out_path=None) -> Path:
    try:
        traces = read_traces(trace_path)
    except FileNotFoundError:
        raise RuntimeFailure(f"trace not found: {trace_path}") from None
    if not 0 <= episode < len(traces):
        raise RuntimeFailure(f"trace holds {len(traces)} episode(s); episode {episode} requested")
    rows = spacetime_export(traces[episode])
    out = resolve_output(out_path) if out_path else Path(trace_path).with_name(
        f"{Path(trace_path).stem}_ep{episode}_spacetime.csv")
    write_spacetime_csv(rows, out)
    print(f"{len(rows)} rows -> {out}")
    return out


# ----------------------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topomarl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run per configured seed")
    p.add_argument("--config", required=True)

    p = sub.add_parser("evaluate", help="greedy rollouts from a checkpoint, metrics and traces")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--out", default=None, help="output directory (default: <output_dir>/eval_seed_<seed>)")

    p = sub.add_parser("heatmap", help="policy-diversity heatmap from trace files")
    p.add_argument("--traces", required=True, help="glob pattern of JSONL trace files")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: heatmap)")

    p = sub.add_parser("replay", help="space-time table of one recorded episode")
    p.add_argument("--trace", required=True)
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default: next to the trace)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            for run in cmd_train(ExperimentConfig.from_json(args.config)):
                print(run)
        elif args.command == "evaluate":
            cmd_evaluate(ExperimentConfig.from_json(args.config), args.checkpoint, args.episodes, args.out)
        elif args.command == "heatmap":
            if args.stride < 1:
                raise ConfigError("--stride must be >= 1")
            cmd_heatmap(args.traces, args.stride, args.hash_seed, args.out)
        elif args.command == "replay":
            cmd_replay(args.trace, args.episode, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, TraceParseError, NoData, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
