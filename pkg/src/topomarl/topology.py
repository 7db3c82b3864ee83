"""Game-topology descriptors, SimHash codes, visitation counts and hash heatmaps.

A descriptor summarises the observation difference between two CAVs by its
L2 norm and an m-bit SimHash angle code. Every CAV keeps two descriptors, one
for the other CAV whose observation differs most from its own and one for the
CAV that differs least. The same 64-bit sign hash drives both the visitation
counter and the policy-diversity heatmap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sim.observation import BASE_DIM

ZERO_NORM = 1e-9
PADDED_DIM = 100
HASH_BITS = 64
NORM_SCALE = 1.0 / 100.0
GRID = 32


class SimHashEncoder:
    """Sign-of-random-projection hash of a difference vector into ``bits`` bits.

    ``signs=True`` draws projection entries from {-1, +1} (the 64 x 100
    diversity hash); otherwise entries are standard normal.
    """

    def __init__(self, bits: int = 8, dim: int = BASE_DIM, seed: int = 0, signs: bool = False,
                 projection: np.ndarray | None = None):
        if projection is not None:
            projection = np.array(projection, dtype=float)
            bits, dim = projection.shape
        else:
            rng = np.random.default_rng(seed)
            if signs:
                projection = rng.choice(np.array([-1.0, 1.0]), size=(bits, dim))
            else:
                projection = rng.standard_normal((bits, dim))
        projection.setflags(write=False)
        self.bits = bits
        self.dim = dim
        self.seed = seed
        self.projection = projection
        self._weights = [1 << (bits - 1 - k) for k in range(bits)]

    def hash_bits(self, vector: np.ndarray) -> np.ndarray:
        """Bit k is 1 iff the k-th projection is >= 0."""
        return (self.projection @ vector) >= 0.0

    def pack(self, bits: Sequence[bool]) -> int:
        """Big-endian packing: the first bit is the most significant."""
        return sum(w for w, b in zip(self._weights, bits) if b)

    def code(self, vector: np.ndarray) -> int:
        return self.pack(self.hash_bits(np.asarray(vector, dtype=float)))


@dataclass(frozen=True)
class TopologyDescriptor:
    norm: float = 0.0
    angle_code: int = 0


EMPTY = TopologyDescriptor()


@dataclass(frozen=True)
class LocalTopology:
    owner: int
    attention_set: tuple          # (max-difference id, min-difference id); None marks an empty slot
    descriptors: tuple            # two TopologyDescriptor in attention-set order


@dataclass
class GameTopologyTensor:
    entries: list = field(default_factory=list)
    code_bits: int = 8

    def __len__(self):
        return len(self.entries)

    @property
    def owners(self) -> list[int]:
        return [e.owner for e in self.entries]

    def as_array(self, scaled: bool = True) -> np.ndarray:
        """(n, 4) array of (norm_max, code_max, norm_min, code_min) per agent."""
        out = np.zeros((len(self.entries), 4))
        code_scale = 1.0 / (2 ** self.code_bits - 1) if scaled else 1.0
        norm_scale = NORM_SCALE if scaled else 1.0
        for row, entry in enumerate(self.entries):
            for k, d in enumerate(entry.descriptors):
                out[row, 2 * k] = d.norm * norm_scale
                out[row, 2 * k + 1] = d.angle_code * code_scale
        return out

    def flat(self) -> np.ndarray:
        return self.as_array(scaled=True).ravel()

    def by_owner(self) -> dict[int, LocalTopology]:
        return {e.owner: e for e in self.entries}


def obs_difference_descriptor(o_i: np.ndarray, o_j: np.ndarray, encoder: SimHashEncoder) -> TopologyDescriptor:
    """(||o_i - o_j||, SimHash code of the normalised difference) over the base observation."""
    o_i = np.asarray(o_i, dtype=float)
    o_j = np.asarray(o_j, dtype=float)
    if o_i.shape != o_j.shape:
        raise ValueError(f"dimension mismatch: {o_i.shape} vs {o_j.shape}")
    diff = o_i[:BASE_DIM] - o_j[:BASE_DIM]
    if diff.shape[0] != encoder.dim:
        raise ValueError(f"dimension mismatch: difference has {diff.shape[0]} values, encoder {encoder.dim}")
    norm = float(np.linalg.norm(diff))
    if norm < ZERO_NORM:
        return TopologyDescriptor(0.0, 0)
    return TopologyDescriptor(norm, encoder.code(diff / norm))


def select_topology_set(observations: Mapping[int, np.ndarray], owner_id: int) -> tuple:
    """(argmax, argmin) of observation distance from ``owner_id`` among the other CAVs.

    Ties go to the lower vehicle id. With one other CAV both slots hold it;
    with none both slots are ``None``.
    """
    owner = np.asarray(observations[owner_id])[:BASE_DIM]
    best_max = best_min = None
    for vid in sorted(observations):
        if vid == owner_id:
            continue
        dist = float(np.linalg.norm(owner - np.asarray(observations[vid])[:BASE_DIM]))
        if best_max is None or dist > best_max[0]:
            best_max = (dist, vid)
        if best_min is None or dist < best_min[0]:
            best_min = (dist, vid)
    if best_max is None:
        return (None, None)
    return (best_max[1], best_min[1])


def build_game_topology_tensor(observations: Mapping[int, np.ndarray], encoder: SimHashEncoder) -> GameTopologyTensor:
    """One local topology per CAV in ascending id order."""
    entries = []
    for vid in sorted(observations):
        attention = select_topology_set(observations, vid)
        descriptors = tuple(EMPTY if j is None else
                            obs_difference_descriptor(observations[vid], observations[j], encoder)
                            for j in attention)
        entries.append(LocalTopology(vid, attention, descriptors))
    return GameTopologyTensor(entries, code_bits=encoder.bits)


def pad_vector(values: np.ndarray, dim: int = PADDED_DIM) -> np.ndarray:
    out = np.zeros(dim)
    values = np.asarray(values, dtype=float).ravel()[:dim]
    out[:values.size] = values
    return out


def diversity_hasher(seed: int = 0) -> SimHashEncoder:
    return SimHashEncoder(bits=HASH_BITS, dim=PADDED_DIM, seed=seed, signs=True)


def topology_visit_key(tensor, hasher: SimHashEncoder) -> int:
    """64-bit key of a tensor (or an already flattened vector) via zero padding to 100 values."""
    values = tensor.flat() if isinstance(tensor, GameTopologyTensor) else np.asarray(tensor, dtype=float)
    return hasher.code(pad_vector(values, hasher.dim))


class VisitCounter:
    """Exact visit counts per 64-bit topology key."""

    def __init__(self):
        self.table: dict[int, int] = {}
        self.total_visits = 0

    def count(self, key: int) -> int:
        return self.table.get(key, 0)

    def visit(self, key: int) -> float:
        n = self.table.get(key, 0) + 1
        self.table[key] = n
        self.total_visits += 1
        return 1.0 / math.sqrt(n)

    def to_dict(self) -> dict:
        return {"total_visits": self.total_visits, "table": {str(k): v for k, v in self.table.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "VisitCounter":
        counter = cls()
        counter.table = {int(k): int(v) for k, v in data["table"].items()}
        counter.total_visits = int(data["total_visits"])
        return counter


def visit_reward(counter: VisitCounter, key: int) -> tuple[float, VisitCounter]:
    return counter.visit(key), counter


def hash64_to_unit_square(key: int) -> tuple[float, float]:
    key = int(key)
    if not 0 <= key < 1 << 64:
        raise ValueError("key must be a 64-bit unsigned integer")
    denom = float((1 << 32) - 1)
    return (key >> 32) / denom, (key & 0xFFFFFFFF) / denom


def grid_density(points: Iterable[Sequence[float]], grid: int = GRID) -> np.ndarray:
    """Cell counts on a ``grid`` x ``grid`` partition of the unit square.

    Row index follows x, column index follows y. A coordinate on an interior
    cell boundary belongs to the upper cell; 1.0 belongs to the last cell.
    """
    counts = np.zeros((grid, grid), dtype=np.int64)
    for x, y in points:
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"point ({x}, {y}) out of range")
        i = min(int(math.floor(x * grid)), grid - 1)
        j = min(int(math.floor(y * grid)), grid - 1)
        counts[i, j] += 1
    return counts


def write_heatmap_csv(counts: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(str(int(c)) for c in row) for row in counts]
    path.write_text("\n".join(lines) + "\n")
    return path


def heatmap_pixels(counts: np.ndarray) -> np.ndarray:
    """Min-max normalisation to 0..255: round(255 * (c - min) / (max - min)); flat maps are 0."""
    counts = np.asarray(counts, dtype=float)
    lo, hi = counts.min(), counts.max()
    if hi == lo:
        return np.zeros(counts.shape, dtype=np.uint8)
    return np.rint(255.0 * (counts - lo) / (hi - lo)).astype(np.uint8)


def write_heatmap_pgm(counts: np.ndarray, path) -> Path:
    """Binary PGM (P5, 8-bit, row-major; row = x cell, column = y cell)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = np.asarray(counts)
    pixels = heatmap_pixels(counts)
    header = (f"P5\n# pixel = round(255*(count-min)/(max-min)), min={int(counts.min())} "
              f"max={int(counts.max())}; all zero when max == min\n"
              f"{pixels.shape[1]} {pixels.shape[0]}\n255\n")
    path.write_bytes(header.encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data[pos:pos + width * height], dtype=np.uint8).reshape(height, width)
