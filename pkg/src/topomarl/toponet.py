"""Variational topology network and the conditional mutual-information reward.

The encoder maps an agent's recent observation window to a Gaussian latent.
One decoder predicts the agent's next local topology (4 scaled values) from
the latents of (self, max-difference CAV, min-difference CAV); the other
rebuilds the observation window from the agent's own latent. The information
an attention-set member carries about the next topology is scored as the drop
in decoder log-likelihood when its latent is swapped for prior samples.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .sim.observation import OBS_DIM

N_SLOTS = 3
TOPO_DIM = 4


@dataclass(frozen=True)
class TopoNetConfig:
    window: int = 10
    obs_dim: int = OBS_DIM
    latent_dim: int = 16
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    lambda_gf: float = 0.1
    alpha: float = 5e-4
    mc_samples: int = 4
    update_rule: str = "literal"       # "literal" or "rmsprop"
    lr: float = 5e-4
    batch_size: int = 256

    def __post_init__(self):
        if self.window < 1 or self.latent_dim < 1 or self.mc_samples < 1:
            raise ValueError("window, latent_dim and mc_samples must be >= 1")
        if self.update_rule not in ("literal", "rmsprop"):
            raise ValueError(f"unknown update_rule {self.update_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TopoNetConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown toponet keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LatentPosterior:
    mean: np.ndarray
    log_variance: np.ndarray
    sample: np.ndarray


@dataclass
class TopoBatch:
    """Training samples for the topology network.

    windows:    (B, 3, L, obs_dim) raw observation windows for (self, max, min)
    slot_valid: (B, 3) False where the attention slot is empty
    targets:    (B, 4) scaled next-step local topology of the owner
    """

    windows: np.ndarray
    slot_valid: np.ndarray
    targets: np.ndarray | None = None

    def __len__(self):
        return self.windows.shape[0]


class IncompleteBatch(ValueError):
    pass


def _dense(store: ad.ParamStore, name: str, fan_in: int, fan_out: int, rng) -> None:
    store.add(f"{name}.w", ad.seeded_init((fan_in, fan_out), seed=rng))
    store.add(f"{name}.b", ad.seeded_init((fan_out,), seed=rng, fan_in=fan_in))


def _gru(store: ad.ParamStore, name: str, fan_in: int, hidden: int, rng) -> None:
    store.add(f"{name}.wi", ad.seeded_init((fan_in, 3 * hidden), seed=rng, fan_in=hidden))
    store.add(f"{name}.wh", ad.seeded_init((hidden, 3 * hidden), seed=rng, fan_in=hidden))
    store.add(f"{name}.bi", ad.seeded_init((3 * hidden,), seed=rng, fan_in=hidden))
    store.add(f"{name}.bh", ad.seeded_init((3 * hidden,), seed=rng, fan_in=hidden))


class TopoNet:
    ENCODER = "enc."
    TOPOLOGY = "tp."
    RECONSTRUCTION = "rg."

    def __init__(self, config: TopoNetConfig = TopoNetConfig(), input_scale: np.ndarray | None = None,
                 seed: int = 0):
        self.config = config
        self.input_scale = np.ones(config.obs_dim) if input_scale is None else np.asarray(input_scale, float)
        rng = np.random.default_rng(seed)
        c = config
        self.params = ad.ParamStore()
        _gru(self.params, "enc.gru", c.obs_dim, c.encoder_hidden, rng)
        _dense(self.params, "enc.mu", c.encoder_hidden, c.latent_dim, rng)
        _dense(self.params, "enc.logvar", c.encoder_hidden, c.latent_dim, rng)
        _dense(self.params, "tp.l1", N_SLOTS * c.latent_dim, c.decoder_hidden, rng)
        _dense(self.params, "tp.out", c.decoder_hidden, TOPO_DIM, rng)
        _dense(self.params, "rg.l1", c.latent_dim, c.decoder_hidden, rng)
        _dense(self.params, "rg.out", c.decoder_hidden, c.window * c.obs_dim, rng)

    def _p(self, p):
        return self.params.values if p is None else p

    # ------------------------------------------------------------------ networks
    def encode(self, windows: np.ndarray, p=None, rng: np.random.Generator | None = None):
        """Posterior (mean, log_var, z) for windows of shape (B, L, obs_dim).

        Without ``rng`` the sample equals the mean (evaluation mode).
        """
        p = self._p(p)
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[1:] != (self.config.window, self.config.obs_dim):
            raise ad.ShapeError("encode_trajectory",
                                f"expected (B, {self.config.window}, {self.config.obs_dim}), got {windows.shape}")
        x = windows / self.input_scale
        steps = [ad.affine(x[:, t], p["enc.gru.wi"], p["enc.gru.bi"]) for t in range(x.shape[1])]
        return self._encode_projected(steps, p, rng)

    def encode_indexed(self, rows: np.ndarray, index: np.ndarray, p=None,
                       rng: np.random.Generator | None = None):
        """Encode windows given as (W, L) indices into observation ``rows`` (R, obs_dim).

        Index -1 marks a zero-padded step. Each row is projected once, however
        many windows share it.
        """
        p = self._p(p)
        rows = np.asarray(rows, dtype=float)
        index = np.asarray(index, dtype=np.int64)
        if index.ndim != 2 or index.shape[1] != self.config.window or rows.ndim != 2 \
                or rows.shape[1] != self.config.obs_dim:
            raise ad.ShapeError("encode_trajectory", f"rows {rows.shape}, index {index.shape}")
        projected_rows = ad.affine(rows / self.input_scale, p["enc.gru.wi"], p["enc.gru.bi"])
        padding = ad.reshape(p["enc.gru.bi"], (1, -1))
        table = ad.concat([projected_rows, padding], axis=0)
        gather = np.where(index >= 0, index, rows.shape[0])
        steps = [ad.take(table, gather[:, t]) for t in range(index.shape[1])]
        return self._encode_projected(steps, p, rng)

    def posterior_means(self, rows: np.ndarray, index: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Inference-only posterior means of indexed windows, computed in ``dtype``.

        Same result as ``encode_indexed(...)[0]`` up to rounding; used where no
        gradient is needed and throughput matters (per-step topology rewards).
        """
        names = ("enc.gru.wi", "enc.gru.bi", "enc.gru.wh", "enc.gru.bh", "enc.mu.w", "enc.mu.b")
        p = {n: self.params.values[n].astype(dtype) for n in names}
        rows = (np.asarray(rows, dtype=float) / self.input_scale).astype(dtype)
        index = np.asarray(index, dtype=np.int64)
        table = np.concatenate([rows @ p["enc.gru.wi"] + p["enc.gru.bi"], p["enc.gru.bi"][None]])
        gather = np.where(index >= 0, index, rows.shape[0])
        h = np.zeros((index.shape[0], self.config.encoder_hidden), dtype=dtype)
        for t in range(index.shape[1]):
            h = ad.gru_step(table[gather[:, t]], h, p["enc.gru.wh"], p["enc.gru.bh"])
        return (h @ p["enc.mu.w"] + p["enc.mu.b"]).astype(float)

    def _encode_projected(self, steps: list, p, rng):
        """GRU pass over per-step input projections, then the Gaussian heads."""
        h = np.zeros((ad.value_of(steps[0]).shape[0], self.config.encoder_hidden))
        for projected in steps:
            h = ad.gru_step(projected, h, p["enc.gru.wh"], p["enc.gru.bh"])
        mu = ad.affine(h, p["enc.mu.w"], p["enc.mu.b"])
        log_var = ad.affine(h, p["enc.logvar.w"], p["enc.logvar.b"])
        if rng is None:
            return mu, log_var, mu
        noise = rng.standard_normal(ad.value_of(mu).shape)
        z = mu + ad.exp(0.5 * log_var) * noise
        return mu, log_var, z

    def encode_trajectory(self, window: np.ndarray, rng: np.random.Generator | None = None) -> LatentPosterior:
        mu, log_var, z = self.encode(np.asarray(window)[None], rng=rng)
        return LatentPosterior(mu[0], log_var[0], z[0])

    def predict_topology(self, latents, p=None):
        """Predicted next topology (B, 4) from latents (B, 3, latent_dim) in slot order."""
        p = self._p(p)
        lv = ad.value_of(latents)
        if lv.ndim != 3 or lv.shape[1:] != (N_SLOTS, self.config.latent_dim):
            raise ad.ShapeError("predict_topology", f"latents {lv.shape}")
        flat = ad.reshape(latents, (lv.shape[0], N_SLOTS * self.config.latent_dim))
        hidden = ad.relu(ad.affine(flat, p["tp.l1.w"], p["tp.l1.b"]))
        return ad.affine(hidden, p["tp.out.w"], p["tp.out.b"])

    def reconstruct_trajectory(self, z, p=None):
        """Reconstructed window (B, L, obs_dim) in network (scaled) units."""
        p = self._p(p)
        zv = ad.value_of(z)
        if zv.ndim != 2 or zv.shape[1] != self.config.latent_dim:
            raise ad.ShapeError("reconstruct_trajectory", f"z {zv.shape}")
        hidden = ad.relu(ad.affine(z, p["rg.l1.w"], p["rg.l1.b"]))
        flat = ad.affine(hidden, p["rg.out.w"], p["rg.out.b"])
        return ad.reshape(flat, (zv.shape[0], self.config.window, self.config.obs_dim))

    # ------------------------------------------------------------------ training
    def losses(self, batch: TopoBatch, p=None, rng: np.random.Generator | None = None):
        """(L_TP, L_RG, L_KL) as graph nodes when ``p`` holds leaves."""
        if batch.targets is None:
            raise IncompleteBatch("incomplete batch: next-step topology targets missing")
        p = self._p(p)
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.config
        B = len(batch)
        flat_windows = batch.windows.reshape(B * N_SLOTS, c.window, c.obs_dim)
        valid = batch.slot_valid.reshape(-1).astype(float)
        mu, log_var, z = self.encode(flat_windows, p, rng)
        prior = rng.standard_normal((B * N_SLOTS, c.latent_dim))
        z_used = ad.add(ad.mul(z, valid[:, None]), prior * (1.0 - valid[:, None]))
        latents = ad.reshape(z_used, (B, N_SLOTS, c.latent_dim))
        prediction = self.predict_topology(latents, p)
        l_tp = ad.mse(prediction, batch.targets)
        idx = np.flatnonzero(valid)
        recon = self.reconstruct_trajectory(ad.take(z, idx), p)
        l_rg = ad.mse(recon, flat_windows[idx] / self.input_scale)
        l_kl = ad.mean(ad.kl_std_normal(ad.take(mu, idx), ad.take(log_var, idx)))
        return l_tp, l_rg, l_kl

    def gradients(self, batch: TopoBatch, rng: np.random.Generator | None = None):
        """Per-parameter gradients of the objective each parameter group minimises.

        Encoder: L_TP + L_KL - lambda_gf * L_RG; topology decoder: L_TP;
        reconstruction decoder: L_RG. The decoders only enter their own loss,
        so with lambda_gf != 0 a single backward pass of the encoder objective
        serves all three groups (the reconstruction gradients are rescaled by
        -1 / lambda_gf).
        """
        leaves = self.params.leaves()
        l_tp, l_rg, l_kl = self.losses(batch, leaves, rng)
        lam = self.config.lambda_gf
        encoder_objective = ad.sub(ad.add(l_tp, l_kl), ad.mul(l_rg, lam))
        ad.backward(encoder_objective)
        grads = ad.collect_grads(leaves, self.params.names(self.ENCODER) + self.params.names(self.TOPOLOGY))
        if lam != 0.0:
            grads.update({n: g / -lam for n, g in
                          ad.collect_grads(leaves, self.params.names(self.RECONSTRUCTION)).items()})
        else:
            ad.backward(l_rg)
            grads.update(ad.collect_grads(leaves, self.params.names(self.RECONSTRUCTION)))
        values = tuple(float(ad.value_of(x)) for x in (l_tp, l_rg, l_kl))
        return values, grads

    def apply_update(self, grads: dict, alpha: float | None = None) -> None:
        """Literal rule p <- (1 - alpha) p - alpha g, or RMSProp on the same gradients."""
        if self.config.update_rule == "rmsprop":
            ad.rmsprop_update(self.params, grads, lr=self.config.lr)
            return
        update_topo_net(self.params, grads, self.config.alpha if alpha is None else alpha)

    def update(self, batch: TopoBatch, rng: np.random.Generator | None = None) -> tuple:
        values, grads = self.gradients(batch, rng)
        self.apply_update(grads)
        return values

    def fit_topology_decoder(self, latents: np.ndarray, targets: np.ndarray, lr: float | None = None) -> float:
        """One RMSProp step of the topology decoder alone on given latents."""
        leaves = self.params.leaves()
        loss = ad.mse(self.predict_topology(latents, leaves), targets)
        ad.backward(loss)
        grads = ad.collect_grads(leaves, self.params.names(self.TOPOLOGY))
        ad.rmsprop_update(self.params, grads, lr=self.config.lr if lr is None else lr)
        return float(ad.value_of(loss))

    # ------------------------------------------------------------------ information
    def estimate_conditional_mi(self, latents: np.ndarray, targets: np.ndarray, slot: int,
                                rng: np.random.Generator | None = None, k: int | None = None,
                                replacements: np.ndarray | None = None) -> np.ndarray:
        """Per-sample log p(T | all latents) - mean_k log p(T | slot replaced by sample k).

        ``replacements`` (k, B, latent_dim) overrides the prior draws.
        """
        latents = np.asarray(latents, dtype=float)
        targets = np.asarray(targets, dtype=float)
        full = ad.gaussian_loglik(targets, self.predict_topology(latents))
        if replacements is None:
            k = self.config.mc_samples if k is None else k
            rng = rng if rng is not None else np.random.default_rng(0)
            replacements = rng.standard_normal((k, latents.shape[0], self.config.latent_dim))
        # averaging per-sample differences keeps identical predictions at exactly 0
        gap = np.zeros(latents.shape[0])
        for sample in replacements:
            swapped = latents.copy()
            swapped[:, slot] = sample
            gap += full - ad.gaussian_loglik(targets, self.predict_topology(swapped))
        return gap / len(replacements)

    def information_matrix(self, latents: np.ndarray, targets: np.ndarray, slot_valid: np.ndarray,
                           rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, 3) estimates for every attention slot; empty slots score 0.

        Draws the prior samples slot by slot exactly as successive
        ``estimate_conditional_mi`` calls would, but evaluates the decoder once.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        latents = np.asarray(latents, dtype=float)
        targets = np.asarray(targets, dtype=float)
        b, k = latents.shape[0], self.config.mc_samples
        variants = [latents]
        for slot in range(N_SLOTS):
            for sample in rng.standard_normal((k, b, self.config.latent_dim)):
                swapped = latents.copy()
                swapped[:, slot] = sample
                variants.append(swapped)
        stacked = np.concatenate(variants)
        loglik = ad.gaussian_loglik(np.tile(targets, (len(variants), 1)), self.predict_topology(stacked))
        loglik = loglik.reshape(len(variants), b)
        gaps = (loglik[0][None] - loglik[1:]).reshape(N_SLOTS, k, b).mean(axis=1)
        return gaps.T * slot_valid


def update_topo_net(params: ad.ParamStore, grads: dict, alpha: float) -> None:
    """In-place ``p <- (1 - alpha) * p - alpha * grad`` for every parameter in ``grads``."""
    for name, g in grads.items():
        value = params.values[name]
        value *= (1.0 - alpha)
        value -= alpha * g


def topo_reward(information: np.ndarray) -> float:
    """Mean information over agents and attention slots; 0 with no agents."""
    information = np.asarray(information, dtype=float)
    if information.size == 0:
        return 0.0
    return float(information.mean())
