"""Small feedforward networks with hand-written backprop, Adam, and a checkpoint format.

Checkpoints are a 4-byte little-endian header length, a UTF-8 JSON header, then every
parameter array flattened in order as little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = "reward-ensemble-ckpt"


class MLP:
    """ReLU multilayer perceptron; ``sizes`` = (input, hidden..., output)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None, dtype=np.float64):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)  # He-uniform
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            self.params.append(np.zeros(fan_out, dtype=dtype))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "MLP":
        m = MLP.__new__(MLP)
        m.sizes = self.sizes
        m.params = [p.copy() for p in self.params]
        return m

    def forward(self, x: np.ndarray, keep: bool = False):
        """Return outputs, plus the activations needed by ``backward`` when keep=True."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = grad_out
        for i in reversed(range(self.n_layers)):
            inp = acts[i]
            grads[2 * i] = inp.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (acts[i] > 0)
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v: np.ndarray) -> None:
        off = 0
        for p in self.params:
            n = p.size
            p[...] = v[off:off + n].reshape(p.shape)
            off += n

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if not max_norm:
        return grads
    n = global_norm(grads)
    if n > max_norm:
        return [g * (max_norm / n) for g in grads]
    return grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        step = self.lr / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * np.square(g)
            denom = np.sqrt(v)
            denom *= 1.0 / np.sqrt(c2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= step
            p -= denom


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def finite_difference(f, params: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    """Central differences of scalar f() with respect to every entry of every array."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            hi = f()
            p[idx] = old - eps
            lo = f()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, header: dict, arrays: Sequence[np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"magic": CHECKPOINT_MAGIC, "shapes": [list(a.shape) for a in arrays], **header}
    hb = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    (n,) = struct.unpack("<I", data[:4])
    head = json.loads(data[4:4 + n].decode("utf-8"))
    if head.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4 + n
    arrays = []
    for shape in head["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        arrays.append(a.astype(np.float64))
        off += 4 * count
    if off != len(data):
        raise ValueError(f"{path}: payload size does not match header")
    return head, arrays
