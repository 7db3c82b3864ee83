"""Independent reference implementations used as test oracles.

Each function is written directly from the printed formula, without
importing the package code it checks.
"""
from __future__ import annotations

import math

import numpy as np


# ------------------------------------------------------------------ car following

def desired_gap(v, v_lead, T=1.5, a_max=3.5, b=1.5, d0=2.0):
    return d0 + max(0.0, v * T - v * (v_lead - v) / (2.0 * math.sqrt(a_max * b)))


def idm_accel(v, v_lead, gap, v0=20.0, delta=4.0, T=1.5, a_max=3.5, b=1.5, d0=2.0):
    star = desired_gap(v, v_lead, T, a_max, b, d0)
    return a_max * (1.0 - (v / v0) ** delta - (star / gap) ** 2)


# ------------------------------------------------------------------ rewards

def field(x, y, y_target, goal=250.0, sigma=60.0, zeta=1.0):
    return math.exp(-((goal - x) ** 2) / (2 * sigma ** 2)) / (zeta * abs(y_target - y) + 1)


def positional(v_x, v_y, x, y, y_target, goal=250.0, sigma=60.0, zeta=1.0):
    if y == y_target:
        lateral = -zeta * abs(v_y)
    else:
        toward = 1.0 if (y_target - y) > 0 else -1.0
        lateral = zeta * v_y * toward / (zeta * abs(y_target - y) + 1)
    return (v_x * (goal - x) + lateral) * field(x, y, y_target, goal, sigma, zeta)


def env_total(r_a, r_p, flow, collided, completions, w=(10.0, 2.0, 1.0, -50.0, 8.0)):
    """Per-CAV lists r_a, r_p; flow term; number of collided vehicles; completions."""
    mean_term = (sum(w[0] * a + w[1] * p for a, p in zip(r_a, r_p)) / len(r_a)) if r_a else 0.0
    return mean_term + w[2] * flow + w[3] * collided + w[4] * completions


def td_squared_error(r, gamma, next_max, q_taken, terminal=False):
    y = r + (0.0 if terminal else gamma * next_max)
    return (y - q_taken) ** 2


def kl_diag_gauss(mu, log_var):
    mu, log_var = np.asarray(mu, float), np.asarray(log_var, float)
    return 0.5 * float(np.sum(mu ** 2 + np.exp(log_var) - log_var - 1.0))


# ------------------------------------------------------------------ gradients

def relative_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-12 else float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x: np.ndarray, step: float = 1e-5, max_entries: int | None = None, rng=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place and restored).

    With ``max_entries`` only a random subset of coordinates is probed; the
    returned mask marks them.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
    grad = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        grad[i] = (up - down) / (2 * step)
    mask = np.zeros(flat.size, dtype=bool)
    mask[idx] = True
    return grad.reshape(x.shape), mask.reshape(x.shape)


# ------------------------------------------------------------------ metrics

def brute_metrics(steps, dt, subject="CAV"):
    """Spreadsheet-style recomputation of the eight evaluation metrics for one episode.

    ``steps`` is a list of (t, vehicles, events) with vehicles as dicts of
    id/kind/lane/x/v/a. Builds per-vehicle columns first, then evaluates
    every metric from its definition.
    """
    table = {}
    for t, vehicles, _ in steps:
        for v in vehicles:
            table.setdefault(v["id"], {})[t] = v
    subjects = sorted(vid for vid, col in table.items() if next(iter(col.values()))["kind"] == subject)

    speed_rows = []
    ttc_rows = []
    episode_min_hw = math.inf
    for t, vehicles, _ in steps:
        live = [v for v in vehicles if v["id"] in subjects]
        if live:
            speed_rows.append(3.6 * (math.fsum(v["v"] for v in live) / len(live)))
        candidates = []
        for v in vehicles:
            ahead = [u for u in vehicles if u["lane"] == v["lane"] and u["id"] != v["id"]
                     and (u["x"] > v["x"] or (u["x"] == v["x"] and u["id"] > v["id"]))]
            if not ahead:
                continue
            lead = min(ahead, key=lambda u: (u["x"], u["id"]))
            episode_min_hw = min(episode_min_hw, lead["x"] - v["x"])
            if v["id"] in subjects and v["v"] > lead["v"]:
                candidates.append((lead["x"] - v["x"]) / (v["v"] - lead["v"]))
        if candidates:
            ttc_rows.append(min(candidates))

    intervals = []
    for vid in subjects:
        times = [t for t, _, ev in steps for c in ev.get("lane_changes", []) if c["id"] == vid]
        intervals += [(b - a) * dt for a, b in zip(times, times[1:])]

    jerks, variances = [], []
    for vid in subjects:
        col = [table[vid][t] for t in sorted(table[vid])]
        if len(col) >= 2:
            jerks.append(math.fsum(abs(col[k]["a"] - col[k - 1]["a"]) / dt for k in range(1, len(col))) / (len(col) - 1))
        mean_v = math.fsum(c["v"] for c in col) / len(col)
        variances.append(math.fsum((c["v"] - mean_v) ** 2 for c in col) / len(col))

    ok = total = collisions = 0
    for _, _, ev in steps:
        collisions += len(ev.get("collisions", []))
        for a in ev.get("arrivals", []):
            if a["kind"] == subject:
                total += 1
                ok += int(a["success"])
        total += sum(1 for r in ev.get("removals", []) if r["kind"] == subject)

    def avg(xs):
        return math.fsum(xs) / len(xs) if xs else 0.0

    return {
        "avg_velocity": avg(speed_rows), "mean_min_ttc": avg(ttc_rows), "mean_lc_interval": avg(intervals),
        "mean_jerk": avg(jerks), "velocity_variance": avg(variances), "success_rate": ok / total if total else 0.0,
        "min_headway": 0.0 if episode_min_hw == math.inf else episode_min_hw, "collision_count": collisions,
    }


def slot_neighbours(world, ego_id, radius=100.0):
    """Brute-force neighbour per slot within the observation radius."""
    ego = world.vehicles[ego_id]
    out = []
    for offset in (1, 0, -1):
        lane = ego.lane + offset
        others = [v for v in world.vehicles.values() if v.lane == lane and v.id != ego.id]
        front = [v for v in others if v.pos > ego.pos or (v.pos == ego.pos and (offset != 0 or v.id > ego.id))]
        rear = [v for v in others if v not in front]
        front = [v for v in front if v.pos - ego.pos <= radius]
        rear = [v for v in rear if ego.pos - v.pos <= radius]
        out.append(min(front, key=lambda v: v.pos) if front else None)
        out.append(max(rear, key=lambda v: v.pos) if rear else None)
    return out
