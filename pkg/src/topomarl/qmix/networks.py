"""Shared recurrent agent network, hypernetwork mixer and masked epsilon-greedy selection."""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .. import autodiff as ad
from ..sim.observation import OBS_DIM
from ..sim.world import N_ACTIONS
from ..topology import GameTopologyTensor

TOPO_WIDTH = 4


class AgentQNet:
    """obs (42) -> affine 64 + ReLU -> GRU 64 -> affine 9, shared by every CAV."""

    def __init__(self, hidden_dim: int = 64, input_scale: np.ndarray | None = None, seed=0,
                 obs_dim: int = OBS_DIM, n_actions: int = N_ACTIONS):
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        self.hidden_dim = hidden_dim
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.input_scale = np.ones(obs_dim) if input_scale is None else np.asarray(input_scale, float)
        self.params = ad.ParamStore()
        p = self.params
        p.add("agent.fc.w", ad.seeded_init((obs_dim, hidden_dim), seed=rng))
        p.add("agent.fc.b", ad.seeded_init((hidden_dim,), seed=rng, fan_in=obs_dim))
        p.add("agent.gru.wi", ad.seeded_init((hidden_dim, 3 * hidden_dim), seed=rng))
        p.add("agent.gru.wh", ad.seeded_init((hidden_dim, 3 * hidden_dim), seed=rng))
        p.add("agent.gru.bi", ad.seeded_init((3 * hidden_dim,), seed=rng, fan_in=hidden_dim))
        p.add("agent.gru.bh", ad.seeded_init((3 * hidden_dim,), seed=rng, fan_in=hidden_dim))
        p.add("agent.out.w", ad.seeded_init((hidden_dim, n_actions), seed=rng))
        p.add("agent.out.b", ad.seeded_init((n_actions,), seed=rng, fan_in=hidden_dim))

    def initial_hidden(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.hidden_dim))

    def project(self, obs, p=None):
        """Input layer and GRU input projection for any batch of observations (..., 42)."""
        p = self.params.values if p is None else p
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise ad.ShapeError("agent_q_forward", f"observation width {obs.shape[-1]} != {self.obs_dim}")
        x = ad.relu(ad.affine(obs / self.input_scale, p["agent.fc.w"], p["agent.fc.b"]))
        return ad.affine(x, p["agent.gru.wi"], p["agent.gru.bi"])

    def recur(self, projected, hidden, p=None):
        p = self.params.values if p is None else p
        return ad.gru_step(projected, hidden, p["agent.gru.wh"], p["agent.gru.bh"])

    def head(self, hidden, p=None):
        p = self.params.values if p is None else p
        return ad.affine(hidden, p["agent.out.w"], p["agent.out.b"])

    def forward(self, obs, hidden, p=None):
        """One recurrent step on (B, 42) observations; returns (q (B, 9), hidden (B, 64))."""
        h = self.recur(self.project(obs, p), hidden, p)
        return self.head(h, p), h


def agent_q_forward(net: AgentQNet, obs: np.ndarray, hidden: np.ndarray):
    """Single-vehicle convenience wrapper: 42-vector and 64-vector in, 9-vector and 64-vector out."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (net.obs_dim,):
        raise ad.ShapeError("agent_q_forward", f"expected ({net.obs_dim},), got {obs.shape}")
    q, h = net.forward(obs[None], np.asarray(hidden, dtype=float)[None])
    return q[0], h[0]


class HiddenRegistry:
    """Recurrent state per live vehicle: zero at spawn, dropped at despawn."""

    def __init__(self, hidden_dim: int):
        self.hidden_dim = hidden_dim
        self.states: dict[int, np.ndarray] = {}

    def sync(self, live_ids: Iterable[int]) -> None:
        live = set(live_ids)
        for vid in [v for v in self.states if v not in live]:
            del self.states[vid]
        for vid in live:
            if vid not in self.states:
                self.states[vid] = np.zeros(self.hidden_dim)

    def gather(self, ids: list[int]) -> np.ndarray:
        if not ids:
            return np.zeros((0, self.hidden_dim))
        return np.stack([self.states[vid] for vid in ids])

    def scatter(self, ids: list[int], hidden: np.ndarray) -> None:
        for vid, h in zip(ids, hidden):
            self.states[vid] = h

    def __contains__(self, vid) -> bool:
        return vid in self.states

    def __len__(self):
        return len(self.states)


def mixing_state_dim(n_max: int, obs_dim: int = OBS_DIM) -> int:
    return n_max * (obs_dim + TOPO_WIDTH + 1)


def mixing_state(obs: np.ndarray, topology: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Global mixing input: padded observations, padded topology rows and the liveness mask.

    ``obs`` is (N_max, 42), ``topology`` (N_max, 4) and ``alive`` (N_max,); dead slots are zeroed.
    """
    alive = np.asarray(alive, dtype=float)
    obs = np.asarray(obs, dtype=float) * alive[:, None]
    topology = np.asarray(topology, dtype=float) * alive[:, None]
    return np.concatenate([obs.ravel(), topology.ravel(), alive])


def slot_topology(tensor: GameTopologyTensor, slots: Mapping[int, int], n_max: int) -> np.ndarray:
    """Scaled topology rows placed at each owner's slot."""
    rows = tensor.as_array(scaled=True)
    out = np.zeros((n_max, TOPO_WIDTH))
    for owner, row in zip(tensor.owners, rows):
        if owner in slots:
            out[slots[owner]] = row
    return out


class MixingNet:
    """Monotonic mixer whose weights come from hypernetworks of the mixing state."""

    def __init__(self, n_agents: int, state_dim: int | None = None, embed_dim: int = 32, seed=0,
                 state_scale: np.ndarray | None = None):
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        self.n_agents = n_agents
        self.state_dim = mixing_state_dim(n_agents) if state_dim is None else state_dim
        self.embed_dim = embed_dim
        self.state_scale = np.ones(self.state_dim) if state_scale is None else np.asarray(state_scale, float)
        s, n, e = self.state_dim, n_agents, embed_dim
        self.params = ad.ParamStore()
        p = self.params
        p.add("mix.w1.w", ad.seeded_init((s, n * e), seed=rng))
        p.add("mix.w1.b", ad.seeded_init((n * e,), seed=rng, fan_in=s))
        p.add("mix.b1.w", ad.seeded_init((s, e), seed=rng))
        p.add("mix.b1.b", ad.seeded_init((e,), seed=rng, fan_in=s))
        p.add("mix.w2.w", ad.seeded_init((s, e), seed=rng))
        p.add("mix.w2.b", ad.seeded_init((e,), seed=rng, fan_in=s))
        p.add("mix.b2.l1.w", ad.seeded_init((s, e), seed=rng))
        p.add("mix.b2.l1.b", ad.seeded_init((e,), seed=rng, fan_in=s))
        p.add("mix.b2.out.w", ad.seeded_init((e, 1), seed=rng))
        p.add("mix.b2.out.b", ad.seeded_init((1,), seed=rng, fan_in=e))

    def hyper_weights(self, state, p=None):
        """Non-negative first- and second-layer mixing weights for (B, S) states."""
        p = self.params.values if p is None else p
        x = np.asarray(state, dtype=float) / self.state_scale
        w1 = ad.absolute(ad.affine(x, p["mix.w1.w"], p["mix.w1.b"]))
        w2 = ad.absolute(ad.affine(x, p["mix.w2.w"], p["mix.w2.b"]))
        return w1, w2

    def mix(self, q_taken, state, p=None):
        """Q_tot of shape (B,) from chosen per-agent values (B, N) and states (B, S)."""
        p = self.params.values if p is None else p
        qv = ad.value_of(q_taken)
        state = np.asarray(state, dtype=float)
        if qv.ndim != 2 or qv.shape[1] != self.n_agents or state.shape != (qv.shape[0], self.state_dim):
            raise ad.ShapeError("mix", f"q {qv.shape}, state {state.shape}")
        b, n, e = qv.shape[0], self.n_agents, self.embed_dim
        x = state / self.state_scale
        w1, w2 = self.hyper_weights(state, p)
        b1 = ad.affine(x, p["mix.b1.w"], p["mix.b1.b"])
        hidden = ad.matmul(ad.reshape(q_taken, (b, 1, n)), ad.reshape(w1, (b, n, e)))
        hidden = ad.elu(ad.add(hidden, ad.reshape(b1, (b, 1, e))))
        b2 = ad.affine(ad.relu(ad.affine(x, p["mix.b2.l1.w"], p["mix.b2.l1.b"])),
                       p["mix.b2.out.w"], p["mix.b2.out.b"])
        out = ad.matmul(hidden, ad.reshape(w2, (b, e, 1)))
        return ad.add(ad.reshape(out, (b,)), ad.reshape(b2, (b,)))


class NoValidAction(RuntimeError):
    pass


def select_actions(q_values: Mapping[int, np.ndarray], epsilon: float, masks: Mapping[int, np.ndarray],
                   rng: np.random.Generator) -> dict[int, int]:
    """Masked epsilon-greedy choice per agent, in ascending id order.

    Greedy ties resolve to the lowest action index.
    """
    actions = {}
    for vid in sorted(q_values):
        mask = np.asarray(masks[vid], dtype=bool)
        valid = np.flatnonzero(mask)
        if valid.size == 0:
            raise NoValidAction(f"vehicle {vid} has no valid action")
        if rng.random() < epsilon:
            actions[vid] = int(valid[rng.integers(valid.size)])
        else:
            q = np.where(mask, np.asarray(q_values[vid], dtype=float), -np.inf)
            actions[vid] = int(np.argmax(q))
    return actions
