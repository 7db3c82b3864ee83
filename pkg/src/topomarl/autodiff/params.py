"""Named parameter storage, seeded initialisation and the RMSProp rule."""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .tape import Var, backward, value_of


def seeded_init(shape, scheme: str = "uniform-fan-in", seed=None, fan_in: int | None = None) -> np.ndarray:
    """Deterministic parameter initialisation.

    ``uniform-fan-in`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), with
    ``fan_in`` defaulting to ``shape[0]``. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme != "uniform-fan-in":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_in = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Ordered mapping of parameter name to array, plus RMSProp accumulators."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.accumulators: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        self.values[name] = np.array(value, dtype=float)
        self.accumulators[name] = np.zeros_like(self.values[name])
        return self.values[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def leaves(self) -> dict[str, Var]:
        """Fresh graph leaves wrapping every parameter (values are shared, not copied)."""
        return {name: Var(value) for name, value in self.values.items()}

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, value in self.values.items():
            clone.values[name] = value.copy()
            clone.accumulators[name] = self.accumulators[name].copy()
        return clone

    def load_values(self, other: Mapping[str, np.ndarray]) -> None:
        """Copy values in place from ``other``; names and shapes must match."""
        if set(other) != set(self.values):
            missing = sorted(set(self.values) ^ set(other))
            raise KeyError(f"parameter names differ: {missing[:5]}")
        for name, value in other.items():
            value = np.asarray(value, dtype=float)
            if value.shape != self.values[name].shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {self.values[name].shape}")
            self.values[name][...] = value

    def flat_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(v * v) for v in self.values.values())))


def collect_grads(leaves: Mapping[str, Var], names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Gradients from graph leaves; parameters off the graph get zeros."""
    names = leaves.keys() if names is None else names
    return {n: (np.zeros_like(leaves[n].value) if leaves[n].grad is None else leaves[n].grad)
            for n in names}


def rmsprop_update(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float = 5e-4,
                   decay: float = 0.99, eps: float = 1e-8) -> None:
    """In-place RMSProp: v <- decay*v + (1-decay)*g^2; p <- p - lr*g/sqrt(v+eps)."""
    for name, g in grads.items():
        acc = store.accumulators[name]
        if g.shape != acc.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {acc.shape}")
        acc *= decay
        acc += (1.0 - decay) * g * g
        store.values[name] -= lr * g / np.sqrt(acc + eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def forward_backward(fn, store: ParamStore, *inputs, wrt_inputs: bool = False):
    """Evaluate scalar ``fn(leaves, *inputs)`` and return ``(value, grads)``.

    ``grads`` maps parameter names to gradients; with ``wrt_inputs`` the
    gradients of the inputs are returned as a second element of a pair.
    """
    leaves = store.leaves()
    wrapped = tuple(Var(x) for x in inputs) if wrt_inputs else inputs
    out = fn(leaves, *wrapped)
    if not isinstance(out, Var):
        raise TypeError("fn did not depend on any parameter")
    backward(out)
    grads = collect_grads(leaves)
    if wrt_inputs:
        input_grads = [np.zeros_like(w.value) if w.grad is None else w.grad for w in wrapped]
        return value_of(out), (grads, input_grads)
    return value_of(out), grads
