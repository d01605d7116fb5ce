"""Fixed-length numeric encodings of (observation, instruction) and (observation, action, instruction)."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .env import Observation, WorldSpec

_TOKEN_RE = re.compile(r"[a-z]+")


@dataclass(frozen=True)
class FeatureConfig:
    instruction_dim: int = 256
    history: bool = True  # multi-hot of executed actions plus a one-hot of the last one
    # "train": every token of the training instructions gets its own input (folded modulo
    # instruction_dim only if there are more tokens than inputs) and unseen tokens are dropped,
    # so they cannot reach input weights that training never touched; "all": hash every token
    vocabulary: str = "train"

    def __post_init__(self):
        if self.instruction_dim < 1:
            raise ValueError("instruction_dim must be positive")
        if self.vocabulary not in ("train", "all"):
            raise ValueError(f"unknown vocabulary mode {self.vocabulary!r}")


@lru_cache(maxsize=65536)
def _token_bucket(token: str, dim: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % dim


def tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def instruction_vector(text: str, dim: int) -> np.ndarray:
    """Bag-of-tokens presence vector with tokens hashed into ``dim`` buckets."""
    v = np.zeros(dim)
    for t in tokens(text):
        v[_token_bucket(t, dim)] = 1.0
    return v


class FeatureEncoder:
    def __init__(self, world: WorldSpec, cfg: FeatureConfig | None = None):
        self.world = world
        self.cfg = cfg or FeatureConfig()
        self.obj_index = {o.id: i for i, o in enumerate(world.objects)}
        self.item_index = dict(world.item_index)
        self.n_obj = len(world.objects)
        self.n_items = len(world.items)
        self.n_actions = world.num_actions
        self.obs_dim = self.n_obj + self.n_items + (2 * self.n_actions if self.cfg.history else 0)
        self.state_dim = self.obs_dim + self.cfg.instruction_dim
        self.action_dim = self.state_dim + self.n_actions
        self._instr_cache: dict[str, list[int]] = {}
        self.vocab: dict[str, int] | None = None
        if self.cfg.vocabulary == "train":
            words = sorted({tok for t in world.tasks for text in (t.train_instructions or (t.id,))
                            for tok in tokens(text)})
            self.vocab = {w: i % self.cfg.instruction_dim for i, w in enumerate(words)}

    # Every feature is binary, so encodings are built as sorted lists of active indices
    # and stacked into sparse matrices for the networks.

    def instruction_indices(self, text: str) -> list[int]:
        hit = self._instr_cache.get(text)
        if hit is None:
            dim = self.cfg.instruction_dim
            if self.vocab is None:
                hit = sorted({_token_bucket(t, dim) for t in tokens(text)})
            else:
                hit = sorted({self.vocab[t] for t in tokens(text) if t in self.vocab})
            self._instr_cache[text] = hit
        return hit

    def observation_indices(self, obs: Observation) -> list[int]:
        idx = [self.obj_index[o] for o in obs.visible]
        off = self.n_obj
        idx += [off + self.item_index[h] for h in obs.held]
        if self.cfg.history:
            off += self.n_items
            idx += [off + a for a in set(obs.history)]
            if obs.history:
                idx.append(off + self.n_actions + obs.history[-1])
        return idx

    def state_indices(self, obs: Observation, instruction: str) -> list[int]:
        """Active features of (o, i), the policy input."""
        return sorted(self.observation_indices(obs) + [self.obs_dim + i for i in self.instruction_indices(instruction)])

    def state_action_indices(self, obs: Observation, action: int, instruction: str) -> list[int]:
        """Active features of (o, l, i), the orchestrator input."""
        return self.state_indices(obs, instruction) + [self.state_dim + action]

    def state(self, obs: Observation, instruction: str) -> np.ndarray:
        return _dense(self.state_indices(obs, instruction), self.state_dim)

    def state_action(self, obs: Observation, action: int, instruction: str) -> np.ndarray:
        return _dense(self.state_action_indices(obs, action, instruction), self.action_dim)


def _dense(idx: list[int], dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[idx] = 1.0
    return v


def stack_rows(rows: list[list[int]], dim: int) -> sparse.csr_matrix:
    """Binary CSR matrix whose i-th row has ones at rows[i]."""
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.fromiter((i for r in rows for i in r), dtype=np.int32, count=int(indptr[-1]))
    data = np.ones(len(indices))
    return sparse.csr_matrix((data, indices, indptr), shape=(len(rows), dim))
