"""TD training of the shared agent network and mixer, plus the topology-network hook."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..reward import RewardConfig
from ..sim.config import ScenarioConfig
from ..sim.observation import feature_scale
from ..toponet import N_SLOTS, TopoBatch, TopoNet, TopoNetConfig
from .buffer import BufferWarmup, EpisodeRecord, ReplayBuffer
from .config import TrainConfig
from .networks import TOPO_WIDTH, AgentQNet, MixingNet, mixing_state_dim

log = logging.getLogger(__name__)


@dataclass
class EpisodeBatch:
    """Episodes stacked along a leading batch axis, padded to the longest one."""

    obs: np.ndarray           # (B, T+1, N, 42)
    alive: np.ndarray         # (B, T+1, N)
    fresh: np.ndarray         # (B, T+1, N)
    avail: np.ndarray         # (B, T+1, N, 9)
    topology: np.ndarray      # (B, T+1, N, 4)
    attention: np.ndarray     # (B, T+1, N, 2)
    actions: np.ndarray       # (B, T, N)
    env_reward: np.ndarray    # (B, T)
    visit_reward: np.ndarray  # (B, T)
    done: np.ndarray          # (B, T)
    step_mask: np.ndarray     # (B, T) 1 for real steps

    @classmethod
    def from_records(cls, records: list[EpisodeRecord]) -> "EpisodeBatch":
        T = max(r.length for r in records)
        B, N = len(records), records[0].n_slots

        def stack(name, steps, fill=0):
            first = getattr(records[0], name)
            out = np.full((B, steps) + first.shape[1:], fill, dtype=first.dtype)
            for b, r in enumerate(records):
                value = getattr(r, name)
                out[b, :value.shape[0]] = value
            return out

        step_mask = np.zeros((B, T))
        for b, r in enumerate(records):
            step_mask[b, :r.length] = 1.0
        return cls(obs=stack("obs", T + 1), alive=stack("alive", T + 1), fresh=stack("fresh", T + 1),
                   avail=stack("avail", T + 1), topology=stack("topology", T + 1),
                   attention=stack("attention", T + 1, fill=-1), actions=stack("actions", T),
                   env_reward=stack("env_reward", T), visit_reward=stack("visit_reward", T),
                   done=stack("done", T, fill=True), step_mask=step_mask)

    @property
    def shape(self) -> tuple[int, int, int]:
        B, T, N = self.actions.shape
        return B, T, N

    def states(self) -> np.ndarray:
        """Mixing states (B, T+1, S); dead slots are zero."""
        B, T1, N, D = self.obs.shape
        alive = self.alive.astype(float)
        obs = (self.obs * alive[..., None]).reshape(B, T1, N * D)
        topo = (self.topology * alive[..., None]).reshape(B, T1, N * TOPO_WIDTH)
        return np.concatenate([obs, topo, alive], axis=-1)


def td_targets(rewards, done, next_q_tot, gamma: float) -> np.ndarray:
    """r + gamma * max Q_target(s', a'), with the bootstrap forced to 0 at terminal steps."""
    done = np.asarray(done, dtype=float)
    return np.asarray(rewards, dtype=float) + gamma * (1.0 - done) * np.asarray(next_q_tot, dtype=float)


def td_error_loss(q_tot, targets, mask=None):
    """Mean squared TD error over the masked steps."""
    targets = np.asarray(targets, dtype=float)
    mask = np.ones_like(targets) if mask is None else np.asarray(mask, dtype=float)
    diff = ad.sub(q_tot, targets)
    return ad.mul(ad.total(ad.mul(ad.mul(diff, diff), mask)), 1.0 / max(mask.sum(), 1.0))


@dataclass
class ActiveRows:
    """Per-step live rows of a (T, B*N) slot grid and their predecessor positions.

    ``prev[t][i]`` is the position of row ``rows[t][i]`` in ``rows[t-1]``, or -1
    when the recurrent state must start from zero (new vehicle in the slot).
    """

    rows: list
    prev: list

    @classmethod
    def build(cls, alive: np.ndarray, fresh: np.ndarray) -> "ActiveRows":
        B, T, N = alive.shape
        flat_alive = np.swapaxes(alive, 0, 1).reshape(T, B * N)
        flat_fresh = np.swapaxes(fresh, 0, 1).reshape(T, B * N)
        position = np.full(B * N, -1, dtype=np.int64)
        rows, prev = [], []
        for t in range(T):
            r = np.flatnonzero(flat_alive[t])
            p = np.where(flat_fresh[t, r], -1, position[r])
            position = np.full(B * N, -1, dtype=np.int64)
            position[r] = np.arange(r.size)
            rows.append(r)
            prev.append(p)
        return cls(rows, prev)


@dataclass
class Unrolled:
    """Q values of every live (step, row) pair, stacked step-major.

    Rows of step t occupy ``q[offsets[t]:offsets[t+1]]`` in ``ActiveRows`` order.
    """

    q: object                 # (total, 9) Var or ndarray
    offsets: np.ndarray       # (T+1,)


def unroll_agent(agent: AgentQNet, obs: np.ndarray, active: ActiveRows, p=None) -> Unrolled:
    """Recurrent pass over (B, T, N, 42) evaluated on live rows only.

    The input and output layers run once over all live rows; only the
    recurrence is stepped in time.
    """
    B, T, N, D = obs.shape
    flat_obs = np.swapaxes(obs, 0, 1).reshape(T, B * N, D)
    sizes = np.array([r.size for r in active.rows[:T]], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    if offsets[-1] == 0:
        return Unrolled(np.zeros((0, agent.n_actions)), offsets)
    live_obs = np.concatenate([flat_obs[t, active.rows[t]] for t in range(T)])
    projected = agent.project(live_obs, p)
    h = None
    hidden = []
    for t in range(T):
        if sizes[t] == 0:
            h = None
            continue
        prev = active.prev[t]
        carried = prev >= 0
        if h is None or not carried.any():
            h_in = agent.initial_hidden(int(sizes[t]))
        else:
            h_in = ad.mul(ad.take(h, np.maximum(prev, 0)), carried[:, None].astype(float))
        h = agent.recur(ad.take(projected, slice(offsets[t], offsets[t + 1])), h_in, p)
        hidden.append(h)
    return Unrolled(agent.head(ad.concat(hidden, axis=0), p), offsets)


def _flat_steps(values: np.ndarray, active: ActiveRows, T: int) -> np.ndarray:
    """Gather a (B, T, N, ...) array at the live rows, step-major."""
    B, _, N = values.shape[:3]
    flat = np.swapaxes(values[:, :T], 0, 1).reshape((T, B * N) + values.shape[3:])
    return np.concatenate([flat[t, active.rows[t]] for t in range(T)])


def taken_values(unrolled: Unrolled, active: ActiveRows, actions: np.ndarray):
    """Chosen-action values scattered back onto the (T*B, N) slot grid; dead slots are 0."""
    B, T, N = actions.shape
    total = int(unrolled.offsets[-1])
    index = np.full((T, B * N), total, dtype=np.int64)
    for t in range(T):
        index[t, active.rows[t]] = np.arange(unrolled.offsets[t], unrolled.offsets[t + 1])
    if total == 0:
        return np.zeros((T * B, N))
    chosen = ad.take_along(unrolled.q, _flat_steps(actions, active, T))
    table = ad.concat([chosen, np.zeros(1)], axis=0)
    return ad.reshape(ad.take(table, index), (T * B, N))


def greedy_target_values(unrolled: Unrolled, active: ActiveRows, avail: np.ndarray) -> np.ndarray:
    """Masked per-agent max over actions on the (T, B*N) grid; dead slots are 0."""
    B, T, N, A = avail.shape
    best = np.zeros((T, B * N))
    if unrolled.offsets[-1] == 0:
        return best
    values = np.where(_flat_steps(avail, active, T), ad.value_of(unrolled.q), -np.inf).max(axis=-1)
    for t in range(T):
        best[t, active.rows[t]] = values[unrolled.offsets[t]:unrolled.offsets[t + 1]]
    return best


# ------------------------------------------------------------------------- topology samples

@dataclass
class TopoSamples:
    """Every (episode, step, slot) whose vehicle survives to the next step.

    Each live (episode, step, slot) contributes one observation row and one
    window of ``window`` row indices (-1 for zero padding before the
    vehicle's first step). ``window_index`` points at the (self, max, min)
    windows of a sample, -1 when the attention slot is empty.
    """

    obs_rows: np.ndarray       # (U, 42)
    row_index: np.ndarray      # (U, L)
    window_index: np.ndarray   # (M, 3)
    targets: np.ndarray        # (M, 4)
    episode: np.ndarray        # (M,)
    step: np.ndarray           # (M,)

    def __len__(self):
        return self.window_index.shape[0]

    @property
    def slot_valid(self) -> np.ndarray:
        return self.window_index >= 0

    def windows(self, which: np.ndarray | None = None) -> np.ndarray:
        """Dense (len(which), L, 42) windows; all of them by default."""
        index = self.row_index if which is None else self.row_index[which]
        if not len(self.obs_rows):
            return np.zeros(index.shape + (self.obs_rows.shape[-1],))
        return self.obs_rows[np.maximum(index, 0)] * (index >= 0)[..., None]

    def topo_batch(self, samples: np.ndarray | None = None) -> TopoBatch:
        index = self.window_index if samples is None else self.window_index[samples]
        targets = self.targets if samples is None else self.targets[samples]
        valid = index >= 0
        windows = self.windows(np.maximum(index, 0)) * valid[..., None, None]
        return TopoBatch(windows=windows, slot_valid=valid, targets=targets)


def _birth_steps(fresh: np.ndarray) -> np.ndarray:
    """Latest step at or before each t where the slot was freshly occupied (0 if never)."""
    steps = np.arange(fresh.shape[0], dtype=np.int64)[:, None]
    return np.maximum.accumulate(np.where(fresh, steps, 0), axis=0)


def observation_windows(obs: np.ndarray, fresh: np.ndarray, times: np.ndarray, slots: np.ndarray,
                        window: int) -> np.ndarray:
    """(M, L, 42) windows ending at ``times`` for ``slots``, zero before each vehicle's first step."""
    T1, N, D = obs.shape
    padded = np.concatenate([np.zeros((window - 1, N, D)), obs])
    offsets = np.arange(window)
    rows = padded[times[:, None] + offsets[None], slots[:, None]]
    source_time = times[:, None] - (window - 1) + offsets[None]
    birth = _birth_steps(fresh)[times, slots]
    return rows * (source_time >= birth[:, None])[..., None]


def build_topo_samples(batch: EpisodeBatch, window: int) -> TopoSamples:
    B, T, N = batch.shape
    D = batch.obs.shape[-1]
    rows, row_index, index, episodes, steps, targets = [], [], [], [], [], []
    offset = 0
    offsets = np.arange(window)
    for b in range(B):
        alive = batch.alive[b]
        real = batch.step_mask[b].astype(bool)
        t_all, k_all = np.nonzero(alive[:T] & real[:, None])
        lookup = np.full((T, N), -1, dtype=np.int64)
        lookup[t_all, k_all] = offset + np.arange(t_all.size)
        rows.append(batch.obs[b, t_all, k_all])
        source = t_all[:, None] - (window - 1) + offsets[None]
        birth = _birth_steps(batch.fresh[b])[t_all, k_all]
        inside = source >= birth[:, None]
        row_index.append(np.where(inside, lookup[np.maximum(source, 0), k_all[:, None]], -1))
        offset += t_all.size
        keep = alive[1:T + 1] & ~batch.fresh[b, 1:T + 1] & alive[:T] & real[:, None]
        t_s, k_s = np.nonzero(keep)
        att = batch.attention[b, t_s, k_s]
        neighbour = np.where(att >= 0, lookup[t_s[:, None], np.maximum(att, 0)], -1)
        index.append(np.column_stack([lookup[t_s, k_s], neighbour]))
        episodes.append(np.full(t_s.size, b))
        steps.append(t_s)
        targets.append(batch.topology[b, t_s + 1, k_s])

    def joined(parts, shape, dtype=float):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(shape, dtype=dtype)

    return TopoSamples(obs_rows=joined(rows, (0, D)), row_index=joined(row_index, (0, window), np.int64),
                       window_index=joined(index, (0, 3), np.int64), targets=joined(targets, (0, TOPO_WIDTH)),
                       episode=joined(episodes, (0,), np.int64), step=joined(steps, (0,), np.int64))


def topology_rewards(net: TopoNet, samples: TopoSamples, shape: tuple[int, int],
                     rng: np.random.Generator) -> np.ndarray:
    """Per-step r_topo (B, T): mean of the (agent, slot) information estimates; 0 without agents."""
    out = np.zeros(shape)
    m = len(samples)
    if m == 0:
        return out
    means = net.posterior_means(samples.obs_rows, samples.row_index)
    valid = samples.slot_valid
    prior = rng.standard_normal((m, N_SLOTS, net.config.latent_dim))
    latents = np.where(valid[..., None], means[np.maximum(samples.window_index, 0)], prior)
    info = net.information_matrix(latents, samples.targets, valid, rng)
    per_agent = info.mean(axis=1)
    sums = np.zeros(shape)
    counts = np.zeros(shape)
    np.add.at(sums, (samples.episode, samples.step), per_agent)
    np.add.at(counts, (samples.episode, samples.step), 1.0)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


# ------------------------------------------------------------------------- learner

@dataclass
class TrainStats:
    loss: float
    train_step: int
    mean_q_tot: float
    mean_topo_reward: float = 0.0
    topo_losses: tuple | None = None
    grad_norm: float = 0.0


class QLearner:
    """Online and target networks, optimiser state and the optional topology network."""

    def __init__(self, scenario: ScenarioConfig, train: TrainConfig = TrainConfig(),
                 rewards: RewardConfig = RewardConfig(), toponet: TopoNetConfig | None = TopoNetConfig(),
                 tpe: bool = True, seed: int = 0):
        self.scenario = scenario
        self.config = train
        self.rewards = rewards
        self.tpe = tpe
        self.rng = np.random.default_rng(seed)
        scale = feature_scale(scenario.road_length, scenario.v_max, scenario.obs_radius, scenario.lane_count)
        n = train.n_max
        state_scale = np.concatenate([np.tile(scale, n), np.ones(n * TOPO_WIDTH), np.ones(n)])
        self.agent = AgentQNet(train.hidden_dim, scale, seed=self.rng)
        self.mixer = MixingNet(n, mixing_state_dim(n), train.mixing_dim, seed=self.rng, state_scale=state_scale)
        self.target_agent = self.agent.params.copy()
        self.target_mixer = self.mixer.params.copy()
        self.topo_net = TopoNet(toponet, scale, seed=int(self.rng.integers(2 ** 31))) \
            if tpe and toponet is not None else None
        self.train_steps = 0
        self.topo_loss_log: list[tuple] = []

    @property
    def beta_visit(self) -> float:
        return self.rewards.beta1 if self.tpe else 0.0

    @property
    def beta_topo(self) -> float:
        return self.rewards.beta2 if self.tpe and self.topo_net is not None else 0.0

    def online_params(self) -> dict:
        return {**self.agent.params.values, **self.mixer.params.values}

    def target_params(self) -> dict:
        return {**self.target_agent.values, **self.target_mixer.values}

    def sync_targets(self) -> None:
        self.target_agent.load_values(self.agent.params.values)
        self.target_mixer.load_values(self.mixer.params.values)

    def step_rewards(self, batch: EpisodeBatch, topo_reward: np.ndarray | None = None) -> np.ndarray:
        r = batch.env_reward + self.beta_visit * batch.visit_reward
        if topo_reward is not None:
            r = r + self.beta_topo * topo_reward
        return self.config.reward_scale * r

    def loss(self, batch: EpisodeBatch, rewards: np.ndarray, p=None):
        """Graph of the masked mean squared TD error; returns (loss, q_tot)."""
        p = self.online_params() if p is None else p
        B, T, N = batch.shape
        states = np.swapaxes(batch.states(), 0, 1)                       # (T+1, B, S)
        active = ActiveRows.build(batch.alive, batch.fresh)
        now = ActiveRows(active.rows[:T], active.prev[:T])
        q_steps = unroll_agent(self.agent, batch.obs[:, :T], now, p)
        q_taken = taken_values(q_steps, now, batch.actions)
        q_tot = self.mixer.mix(q_taken, states[:T].reshape(T * B, -1), p)

        target = self.target_params()
        tq = unroll_agent(self.agent, batch.obs, active, target)
        best = greedy_target_values(tq, active, batch.avail)             # (T+1, B*N)
        next_best = best[1:].reshape(T * B, N)
        next_q_tot = ad.value_of(self.mixer.mix(next_best, states[1:].reshape(T * B, -1), target))
        y = td_targets(rewards.T.reshape(-1), batch.done.T.reshape(-1), next_q_tot, self.config.gamma)
        return td_error_loss(q_tot, y, batch.step_mask.T.reshape(-1)), q_tot

    def train_step(self, buffer: ReplayBuffer) -> TrainStats:
        """One TD update on a sampled batch of whole episodes.

        Raises BufferWarmup while fewer than ``batch_episodes`` episodes are stored.
        """
        records = buffer.sample(self.config.batch_episodes, self.rng)
        batch = EpisodeBatch.from_records(records)
        B, T, _ = batch.shape
        topo_reward = None
        topo_losses = None
        if self.topo_net is not None:
            samples = build_topo_samples(batch, self.topo_net.config.window)
            topo_reward = topology_rewards(self.topo_net, samples, (B, T), self.rng)
            topo_losses = self.train_topo_net(samples)
        rewards = self.step_rewards(batch, topo_reward)

        agent_leaves = self.agent.params.leaves()
        mixer_leaves = self.mixer.params.leaves()
        loss, q_tot = self.loss(batch, rewards, {**agent_leaves, **mixer_leaves})
        ad.backward(loss)
        grads = ad.collect_grads({**agent_leaves, **mixer_leaves})
        norm = ad.clip_grad_norm(grads, self.config.grad_clip)
        ad.rmsprop_update(self.agent.params, {k: grads[k] for k in agent_leaves}, lr=self.config.lr)
        ad.rmsprop_update(self.mixer.params, {k: grads[k] for k in mixer_leaves}, lr=self.config.lr)
        self.train_steps += 1
        if self.train_steps % self.config.target_update_interval == 0:
            self.sync_targets()
        mean_topo = float(topo_reward[batch.step_mask > 0].mean()) if topo_reward is not None else 0.0
        return TrainStats(float(ad.value_of(loss)), self.train_steps, float(ad.value_of(q_tot).mean()),
                          mean_topo, topo_losses, norm)

    def train_topo_net(self, samples: TopoSamples) -> tuple | None:
        m = len(samples)
        if m == 0:
            return None
        pick = self.rng.choice(m, size=min(m, self.config.topo_batch_size), replace=False)
        sub = samples.topo_batch(np.sort(pick))
        losses = self.topo_net.update(sub, self.rng)
        self.topo_loss_log.append((self.train_steps,) + losses)
        return losses

    # ------------------------------------------------------------------ persistence
    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.agent.params.values)
        out.update(self.mixer.params.values)
        out.update({f"target.{k}": v for k, v in self.target_agent.values.items()})
        out.update({f"target.{k}": v for k, v in self.target_mixer.values.items()})
        if self.topo_net is not None:
            out.update({f"topo.{k}": v for k, v in self.topo_net.params.values.items()})
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        """Load parameters saved by :meth:`tensors`; mismatched names or shapes raise ValueError."""
        def part(prefix, names):
            return {n: tensors[prefix + n] for n in names if prefix + n in tensors}

        expected = set(self.tensors())
        if set(tensors) != expected:
            diff = sorted(expected ^ set(tensors))
            raise ValueError(f"incompatible checkpoint: parameter sets differ ({diff[:4]})")
        try:
            self.agent.params.load_values(part("", self.agent.params.names()))
            self.mixer.params.load_values(part("", self.mixer.params.names()))
            self.target_agent.load_values(part("target.", self.target_agent.names()))
            self.target_mixer.load_values(part("target.", self.target_mixer.names()))
            if self.topo_net is not None:
                self.topo_net.params.load_values(part("topo.", self.topo_net.params.names()))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"incompatible checkpoint: {exc}") from None


__all__ = [
    "ActiveRows", "BufferWarmup", "EpisodeBatch", "QLearner", "TopoSamples", "TrainStats", "Unrolled", "build_topo_samples",
    "greedy_target_values", "observation_windows", "td_error_loss", "taken_values", "td_targets",
    "topology_rewards", "unroll_agent",
]
