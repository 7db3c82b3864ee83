"""Evaluation metrics, policy-diversity heatmaps and space-time tables from episode traces.

Traces are JSONL: a header record opens each episode and is followed by one
record per simulation step::

    {"record": "header", "format": "topomarl-trace", "version": 1, "episode": 0,
     "seed": 12, "scenario": {...}}
    {"record": "step", "t": 1, "vehicles": [{"id", "kind", "lane", "x", "v", "a", "route"}, ...],
     "events": {...StepReport fields...}, "reward": {...}, "topology": [...], "actions": {...}}

Vehicle snapshots are taken after the step's kinematic update.
"""
from __future__ import annotations

import csv
import glob as globlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .topology import (GRID, SimHashEncoder, diversity_hasher, grid_density, hash64_to_unit_square,
                       topology_visit_key)

log = logging.getLogger(__name__)

TRACE_FORMAT = "topomarl-trace"
TRACE_VERSION = 1
KMH_PER_MS = 3.6


class NoData(ValueError):
    pass


class TraceParseError(ValueError):
    pass


@dataclass
class EpisodeTrace:
    header: dict
    steps: list = field(default_factory=list)

    @property
    def dt(self) -> float:
        return float(self.header.get("scenario", {}).get("sim_dt", 0.1))

    @property
    def road_length(self) -> float:
        return float(self.header.get("scenario", {}).get("road_length", 250.0))

    def validate(self) -> None:
        """Timestamps strictly increase and every lane change names (vehicle, from, to)."""
        last = None
        for rec in self.steps:
            t = rec["t"]
            if last is not None and t <= last:
                raise ValueError(f"non-monotone timestamps: {t} after {last}")
            last = t
            for change in rec.get("events", {}).get("lane_changes", []):
                if not {"id", "from", "to"} <= set(change):
                    raise ValueError(f"incomplete lane-change event at t={t}: {change}")


def trace_header(scenario: dict, episode: int = 0, seed: int | None = None, **extra) -> dict:
    header = {"record": "header", "format": TRACE_FORMAT, "version": TRACE_VERSION, "episode": episode,
              "seed": seed, "scenario": scenario}
    header.update(extra)
    return header


def write_trace(path, traces: Sequence[EpisodeTrace] | EpisodeTrace) -> Path:
    if isinstance(traces, EpisodeTrace):
        traces = [traces]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.header, sort_keys=True) + "\n")
            for rec in trace.steps:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_traces(path) -> list[EpisodeTrace]:
    """Parse a JSONL trace file; malformed content raises TraceParseError with the line number."""
    path = Path(path)
    traces: list[EpisodeTrace] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "record" not in rec:
                raise TraceParseError(f"{path}:{lineno}: missing 'record' field")
            kind = rec["record"]
            if kind == "header":
                if rec.get("format") != TRACE_FORMAT:
                    raise TraceParseError(f"{path}:{lineno}: unknown trace format {rec.get('format')!r}")
                traces.append(EpisodeTrace(rec))
            elif kind == "step":
                if not traces:
                    raise TraceParseError(f"{path}:{lineno}: step record before any header")
                missing = {"t", "vehicles"} - set(rec)
                if missing:
                    raise TraceParseError(f"{path}:{lineno}: step record lacks {sorted(missing)}")
                if traces[-1].steps and rec["t"] <= traces[-1].steps[-1]["t"]:
                    raise TraceParseError(f"{path}:{lineno}: timestamp {rec['t']} is not increasing")
                traces[-1].steps.append(rec)
            else:
                raise TraceParseError(f"{path}:{lineno}: unknown record type {kind!r}")
    return traces


def expand_trace_paths(pattern: str) -> list[Path]:
    return [Path(p) for p in sorted(globlib.glob(pattern))]


# ----------------------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    """Aggregate evaluation metrics; ``counts`` records every denominator.

    Metrics without any eligible sample are reported as 0.0 and the missing
    denominator is visible in ``counts``.
    """

    avg_velocity: float = 0.0          # km/h
    mean_min_ttc: float = 0.0          # s
    mean_lc_interval: float = 0.0      # s
    mean_jerk: float = 0.0             # m/s^3
    velocity_variance: float = 0.0     # (m/s)^2
    success_rate: float = 0.0
    min_headway: float = 0.0           # m
    collision_count: int = 0
    counts: dict = field(default_factory=dict)

    METRICS = ("avg_velocity", "mean_min_ttc", "mean_lc_interval", "mean_jerk", "velocity_variance",
               "success_rate", "min_headway", "collision_count")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> list:
        return [getattr(self, name) for name in self.METRICS]

    def write(self, directory, stem: str = "metrics") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f"{stem}.json"
        json_path.write_text(self.to_json() + "\n")
        csv_path = directory / f"{stem}.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.METRICS)
            writer.writerow([repr(v) if isinstance(v, float) else v for v in self.csv_row()])
        return json_path, csv_path


def _leaders(vehicles: list[dict]) -> dict[int, dict]:
    """Nearest vehicle ahead in the same lane (equal positions: the higher id is ahead)."""
    out = {}
    by_lane: dict[int, list] = {}
    for v in vehicles:
        by_lane.setdefault(v["lane"], []).append(v)
    for members in by_lane.values():
        members.sort(key=lambda v: (v["x"], v["id"]))
        for follower, leader in zip(members, members[1:]):
            out[follower["id"]] = leader
    return out


def _mean(values) -> float:
    """Correctly rounded mean, independent of summation order."""
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def compute_metrics(traces: Sequence[EpisodeTrace], subject: str = "CAV") -> MetricsReport:
    """All metrics over the given traces, pooled across episodes.

    ``subject`` selects the evaluated population by kind ("CAV", "HDV" or
    "all"); minimum headway and collisions always cover every vehicle.
    """
    if not traces or not any(trace.steps for trace in traces):
        raise NoData("no data: no step records in the given traces")

    def is_subject(v) -> bool:
        return subject == "all" or v["kind"] == subject

    step_speeds, step_ttc = [], []
    ttc_excluded = 0
    lc_intervals: list[float] = []
    jerks: list[float] = []
    variances: list[float] = []
    successes = denominator = collisions = 0
    episode_min_headway: list[float] = []
    total_steps = 0

    for trace in traces:
        dt = trace.dt
        speeds: dict[tuple, list] = {}
        accels: dict[tuple, list] = {}
        lane_change_steps: dict[int, list] = {}
        min_headway = None
        for rec in trace.steps:
            total_steps += 1
            vehicles = rec["vehicles"]
            subjects = [v for v in vehicles if is_subject(v)]
            if subjects:
                step_speeds.append(_mean(v["v"] for v in subjects) * KMH_PER_MS)
            leaders = _leaders(vehicles)
            ttc = []
            for v in vehicles:
                leader = leaders.get(v["id"])
                if leader is None:
                    continue
                headway = leader["x"] - v["x"]
                min_headway = headway if min_headway is None else min(min_headway, headway)
                if is_subject(v) and v["v"] > leader["v"]:
                    ttc.append(headway / (v["v"] - leader["v"]))
            if ttc:
                step_ttc.append(min(ttc))
            else:
                ttc_excluded += 1
            for v in subjects:
                speeds.setdefault(v["id"], []).append(v["v"])
                accels.setdefault(v["id"], []).append(v["a"])
            events = rec.get("events", {})
            for change in events.get("lane_changes", []):
                if subject == "all" or change.get("kind", subject) == subject:
                    lane_change_steps.setdefault(change["id"], []).append(rec["t"])
            collisions += len(events.get("collisions", []))
            for arrival in events.get("arrivals", []):
                if subject == "all" or arrival["kind"] == subject:
                    denominator += 1
                    successes += bool(arrival["success"])
            for removal in events.get("removals", []):
                if subject == "all" or removal["kind"] == subject:
                    denominator += 1
        for steps in lane_change_steps.values():
            lc_intervals.extend((b - a) * dt for a, b in zip(steps, steps[1:]))
        for series in accels.values():
            if len(series) >= 2:
                jerks.append(_mean(abs(b - a) / dt for a, b in zip(series, series[1:])))
        for series in speeds.values():
            mean_v = _mean(series)
            variances.append(_mean((v - mean_v) ** 2 for v in series))
        if min_headway is not None:
            episode_min_headway.append(min_headway)

    counts = {"episodes": len(traces), "steps": total_steps, "velocity_steps": len(step_speeds),
              "ttc_steps": len(step_ttc), "ttc_excluded_steps": ttc_excluded,
              "lc_intervals": len(lc_intervals), "jerk_vehicles": len(jerks),
              "variance_vehicles": len(variances), "success_denominator": denominator,
              "headway_episodes": len(episode_min_headway)}
    for name, n in counts.items():
        if n == 0:
            log.info("metric denominator %s is empty; the dependent metric is reported as 0.0", name)
    return MetricsReport(
        avg_velocity=_mean(step_speeds), mean_min_ttc=_mean(step_ttc), mean_lc_interval=_mean(lc_intervals),
        mean_jerk=_mean(jerks), velocity_variance=_mean(variances),
        success_rate=successes / denominator if denominator else 0.0,
        min_headway=_mean(episode_min_headway), collision_count=collisions, counts=counts)


# ----------------------------------------------------------------------------- heatmap

def diversity_heatmap(samples: Iterable[np.ndarray], hasher: SimHashEncoder | None = None,
                      grid: int = GRID) -> np.ndarray:
    """Pad, hash to 64 bits, split into a unit-square point and bin on a grid."""
    hasher = hasher if hasher is not None else diversity_hasher(0)
    points = [hash64_to_unit_square(topology_visit_key(np.asarray(s, dtype=float), hasher)) for s in samples]
    return grid_density(points, grid)


def topology_samples(traces: Sequence[EpisodeTrace], stride: int = 4) -> list[np.ndarray]:
    """Recorded topology vectors at steps whose timestamp is a multiple of ``stride``.

    Steps without any CAV carry no topology and are skipped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = []
    for trace in traces:
        for rec in trace.steps:
            topo = rec.get("topology")
            if topo and rec["t"] % stride == 0:
                out.append(np.asarray(topo, dtype=float))
    return out


# ----------------------------------------------------------------------------- space-time

SPACETIME_HEADER = ("t", "mapped_x", "vehicle_id", "lane", "v")


def spacetime_export(trace: EpisodeTrace) -> list[tuple]:
    """Rows (t, lane * road_length + x, id, lane, v) ordered by (t, mapped_x, id)."""
    road = trace.road_length
    rows = [(rec["t"], v["lane"] * road + v["x"], v["id"], v["lane"], v["v"])
            for rec in trace.steps for v in rec["vehicles"]]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def write_spacetime_csv(rows: Sequence[tuple], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPACETIME_HEADER)
        for t, mapped, vid, lane, v in rows:
            writer.writerow([t, repr(float(mapped)), vid, lane, repr(float(v))])
    return path
