"""Conservative offline Q-learning with Double-DQN targets.

loss = mean[(Q(o, a) - y)^2] + alpha_cql * mean[logsumexp_a' Q(o, a') - Q(o, a)]
y    = r + gamma * Q_target(o', argmax_a' Q_online(o', a'))   (y = r on the last step)

With ``ensemble`` > 1, that many independently initialised networks are trained on the
same data and the policy acts greedily on their mean Q.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Trajectory
from .env import Observation, WorldSpec
from .features import FeatureConfig, FeatureEncoder, stack_rows
from .nn import MLP, Adam, clip_by_global_norm, load_checkpoint, logsumexp, save_checkpoint, softmax

log = logging.getLogger(__name__)


@dataclass
class RLConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    tau: float = 0.005
    target_update: str = "soft"  # soft: Polyak every step; hard: copy every hard_interval steps
    hard_interval: int = 250
    alpha_cql: float = 1.0
    batch_size: int = 64
    steps: int = 20000
    hidden: tuple[int, ...] = (128, 128)
    ensemble: int = 1
    grad_clip: float | None = None
    reward: str = "unified"  # unified | sparse (success flag on the last step only)
    log_every: int = 100
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.target_update not in ("soft", "hard"):
            raise ValueError(f"unknown target_update {self.target_update!r}")
        if self.reward not in ("unified", "sparse"):
            raise ValueError(f"unknown reward source {self.reward!r}")
        if self.ensemble < 1:
            raise ValueError("ensemble needs at least one network")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be positive and steps non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Transitions:
    X: object  # CSR (N, D)
    A: np.ndarray
    R: np.ndarray
    Xn: object
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.A)

    def take(self, idx: np.ndarray) -> "Transitions":
        return Transitions(self.X[idx], self.A[idx], self.R[idx], self.Xn[idx], self.done[idx])


def step_rewards(traj: Trajectory, source: str) -> list[float]:
    if source == "sparse":
        return [0.0] * (len(traj.steps) - 1) + [float(traj.f_s)]
    if traj.rewards is None or any(r.unified is None for r in traj.rewards):
        raise ValueError(f"trajectory for {traj.task_id} lacks unified rewards")
    return [float(r.unified) for r in traj.rewards]


def build_transitions(trajectories: Sequence[Trajectory], encoder: FeatureEncoder, source: str) -> Transitions:
    rows, nrows, A, R, done = [], [], [], [], []
    for tr in trajectories:
        rs = step_rewards(tr, source)
        for t, (step, r) in enumerate(zip(tr.steps, rs)):
            rows.append(encoder.state_indices(step.obs, tr.instruction))
            nrows.append(encoder.state_indices(step.next_obs, tr.instruction))
            A.append(step.action)
            R.append(r)
            done.append(t == len(tr.steps) - 1)
    return Transitions(stack_rows(rows, encoder.state_dim), np.asarray(A, dtype=np.int64),
                       np.asarray(R, dtype=float), stack_rows(nrows, encoder.state_dim),
                       np.asarray(done, dtype=bool))


def td_targets(online: MLP, target: MLP, Xn, R: np.ndarray, done: np.ndarray, gamma: float) -> np.ndarray:
    """Double-DQN targets: the online net picks the next action, the target net scores it."""
    a_star = np.argmax(online.forward(Xn), axis=1)
    q_eval = target.forward(Xn)[np.arange(len(R)), a_star]
    return R + gamma * np.where(done, 0.0, q_eval)


def cql_loss(online: MLP, X, A: np.ndarray, y: np.ndarray, alpha_cql: float,
             need_grads: bool = True) -> tuple[float, dict, list[np.ndarray] | None]:
    """Bellman error plus the conservative penalty, with gradients for the online net."""
    q, acts = online.forward(X, keep=True)
    B = len(A)
    rows = np.arange(B)
    qa = q[rows, A]
    err = qa - y
    lse = logsumexp(q)
    bellman = float(np.mean(err ** 2))
    penalty = float(np.mean(lse - qa))
    loss = bellman + alpha_cql * penalty
    stats = {"bellman": bellman, "penalty": penalty, "mean_q": float(np.mean(qa))}
    if not need_grads:
        return loss, stats, None
    dq = alpha_cql * softmax(q) / B
    dq[rows, A] += 2.0 * err / B - alpha_cql / B
    return loss, stats, online.backward(acts, dq)


def update_target(online: MLP, target: MLP, cfg: RLConfig, step: int) -> None:
    if cfg.target_update == "soft":
        for pt, po in zip(target.params, online.params):
            pt *= 1.0 - cfg.tau
            pt += cfg.tau * po
    elif step % cfg.hard_interval == 0:
        for pt, po in zip(target.params, online.params):
            pt[...] = po


def train_q(online: MLP, target: MLP, data: Transitions, cfg: RLConfig, seed: int) -> list[dict]:
    """Fixed-step minibatch training of ``online`` in place; returns the periodic log rows."""
    if len(data) == 0:
        raise ValueError("cannot train a policy on an empty dataset")
    rng = np.random.default_rng([seed, 1])
    opt = Adam(online.params, lr=cfg.lr)
    logs = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        b = data.take(idx)
        y = td_targets(online, target, b.Xn, b.R, b.done, cfg.gamma)
        loss, stats, grads = cql_loss(online, b.X, b.A, y, cfg.alpha_cql)
        opt.step(clip_by_global_norm(grads, cfg.grad_clip))
        update_target(online, target, cfg, step)
        if step % cfg.log_every == 0 or step == cfg.steps:
            if not np.isfinite(loss):
                raise FloatingPointError(f"policy loss diverged at step {step}")
            logs.append({"step": step, "loss": loss, "mean_q": stats["mean_q"], "penalty": stats["penalty"]})
    return logs


class QLearner:
    def __init__(self, world: WorldSpec, cfg: RLConfig | None = None, seed: int = 0):
        self.cfg = cfg or RLConfig()
        self.encoder = FeatureEncoder(world, self.cfg.features)
        self.n_actions = world.num_actions
        self.seed = seed
        sizes = (self.encoder.state_dim, *self.cfg.hidden, self.n_actions)
        self.onlines = [MLP(sizes, np.random.default_rng(self.member_seed(k))) for k in range(self.cfg.ensemble)]
        self.targets = [net.copy() for net in self.onlines]

    def member_seed(self, k: int) -> int:
        return self.seed if k == 0 else self.seed + k

    @property
    def online(self) -> MLP:
        return self.onlines[0]

    @property
    def target(self) -> MLP:
        return self.targets[0]

    # -- policy ---------------------------------------------------------------------

    def q_batch(self, X) -> np.ndarray:
        q = self.onlines[0].forward(X)
        for net in self.onlines[1:]:
            q = q + net.forward(X)
        return q / len(self.onlines)

    def q_values(self, obs: Observation, instruction: str) -> np.ndarray:
        X = stack_rows([self.encoder.state_indices(obs, instruction)], self.encoder.state_dim)
        return self.q_batch(X)[0]

    def act(self, obs: Observation, instruction: str) -> int:
        return act_greedy(self.q_values(obs, instruction))

    __call__ = act

    # -- training -------------------------------------------------------------------

    def update_target(self, step: int) -> None:
        for online, target in zip(self.onlines, self.targets):
            update_target(online, target, self.cfg, step)

    def fit(self, trajectories: Sequence[Trajectory]) -> list[dict]:
        if not trajectories:
            raise ValueError("cannot train a policy on an empty dataset")
        data = build_transitions(trajectories, self.encoder, self.cfg.reward)
        logs = []
        for k, (online, target) in enumerate(zip(self.onlines, self.targets)):
            logs += [{"member": k, **row} for row in train_q(online, target, data, self.cfg, self.member_seed(k))]
        for net in self.onlines + self.targets:
            for p in net.params:
                p[...] = p.astype(np.float32).astype(np.float64)
        return logs

    def dataset_penalty(self, trajectories: Sequence[Trajectory]) -> float:
        """Mean logsumexp_a Q(o, a) - Q(o, a_data) over every step, Q being the ensemble mean."""
        data = build_transitions(trajectories, self.encoder, "sparse")
        q = self.q_batch(data.X)
        return float(np.mean(logsumexp(q) - q[np.arange(len(data)), data.A]))

    # -- persistence ----------------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        header = {"kind": "qmodel", "config": self.cfg.to_json(), "sizes": list(self.online.sizes),
                  "n_online": len(self.online.params), **(meta or {})}
        arrays = [p for online, target in zip(self.onlines, self.targets) for p in online.params + target.params]
        save_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path: str | Path, world: WorldSpec) -> tuple["QLearner", dict]:
        head, arrays = load_checkpoint(path)
        if head.get("kind") != "qmodel":
            raise ValueError(f"{path} is not a policy checkpoint")
        model = cls(world, RLConfig(**head["config"]))
        params = [p for online, target in zip(model.onlines, model.targets) for p in online.params + target.params]
        if len(params) != len(arrays):
            raise ValueError(f"{path} holds {len(arrays)} arrays, expected {len(params)}")
        for p, a in zip(params, arrays):
            p[...] = a
        return model, head


def act_greedy(q: np.ndarray) -> int:
    """Index of the largest value; the lowest index wins ties."""
    return int(np.argmax(q))


def write_log(path: str | Path, logs: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member", "step", "loss", "mean_q", "penalty"])
        for r in logs:
            w.writerow([r.get("member", 0), r["step"], repr(r["loss"]), repr(r["mean_q"]), repr(r["penalty"])])
