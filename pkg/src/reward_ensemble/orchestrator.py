"""Learned weighting of the three consistency rewards.

A small network maps (o, l, i) to softmax weights over the (contextual, structural,
temporal) rewards. It is trained so that each trajectory's discounted unified return,
scaled by 1/(H*K), matches alpha*(+1) for successes and alpha*(-1) for failures.
Fixed average and majority ensembles are available as alternatives.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .consistency import vote
from .dataset import RewardAnnotation, Trajectory
from .env import WorldSpec
from .estimator.personas import K
from .features import FeatureConfig, FeatureEncoder, stack_rows
from .nn import MLP, Adam, clip_by_global_norm, load_checkpoint, save_checkpoint, softmax

log = logging.getLogger(__name__)

CHANNELS = "CST"
MODES = ("learned", "average", "majority")


@dataclass
class OrchestratorConfig:
    mode: str = "learned"
    channels: str = "CST"  # subset of C, S, T the ensemble may use
    hidden: int = 64
    lr: float = 1e-4
    batch_size: int = 16
    grad_clip: float = 3.0
    alpha: float = 1.0
    gamma: float = 0.99
    max_epochs: int = 30
    patience: int = 10
    min_rel_improvement: float = 1e-4
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        if self.mode not in MODES:
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        if not self.channels or set(self.channels) - set(CHANNELS) or len(set(self.channels)) != len(self.channels):
            raise ValueError(f"channels must be a non-empty subset of {CHANNELS}, got {self.channels!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def mask(self) -> np.ndarray:
        return np.array([c in self.channels for c in CHANNELS])

    def to_json(self) -> dict:
        return asdict(self)


def unify(triple: Sequence[float], weights: Sequence[float]) -> float:
    return float(np.dot(np.asarray(triple, dtype=float), np.asarray(weights, dtype=float)))


def majority_of(triple: Sequence[int], mask: np.ndarray | None = None) -> int:
    vals = [v for v, keep in zip(triple, mask if mask is not None else (True,) * 3) if keep]
    return vote(vals)


@dataclass
class TrainingData:
    """Steps of many trajectories flattened into arrays, with per-step return coefficients."""

    X: object  # scipy CSR, one row per step
    triples: np.ndarray  # (S, 3)
    traj_of_step: np.ndarray  # (S,)
    coef: np.ndarray  # gamma^t / (H*K)
    starts: np.ndarray  # first row of each trajectory
    lengths: np.ndarray
    targets: np.ndarray  # alpha * (2 f_s - 1)

    @property
    def n_traj(self) -> int:
        return len(self.starts)

    def rows(self, traj_ids: np.ndarray) -> np.ndarray:
        return np.concatenate([np.arange(self.starts[j], self.starts[j] + self.lengths[j]) for j in traj_ids])


class Orchestrator:
    def __init__(self, world: WorldSpec, cfg: OrchestratorConfig | None = None, seed: int = 0):
        self.cfg = cfg or OrchestratorConfig()
        self.encoder = FeatureEncoder(world, self.cfg.features)
        rng = np.random.default_rng(seed)
        self.net = MLP((self.encoder.action_dim, self.cfg.hidden, 3), rng)

    # -- weights -----------------------------------------------------------------

    def _weights_from_logits(self, z: np.ndarray) -> np.ndarray:
        mask = self.cfg.mask
        if mask.all():
            return softmax(z)
        z = np.where(mask, z, -np.inf)
        return softmax(z)

    def weights_matrix(self, X) -> np.ndarray:
        if self.cfg.mode == "learned":
            return self._weights_from_logits(self.net.forward(X))
        mask = self.cfg.mask.astype(float)
        return np.tile(mask / mask.sum(), (X.shape[0], 1))

    def weights(self, obs, action: int, instruction: str) -> np.ndarray:
        X = stack_rows([self.encoder.state_action_indices(obs, action, instruction)], self.encoder.action_dim)
        return self.weights_matrix(X)[0]

    def unified_rewards(self, X, triples: np.ndarray) -> np.ndarray:
        if self.cfg.mode == "majority":
            mask = self.cfg.mask
            return np.array([majority_of(t, mask) for t in triples.astype(int)], dtype=float)
        return (self.weights_matrix(X) * triples).sum(axis=1)

    # -- data ----------------------------------------------------------------------

    def build_data(self, trajectories: Sequence[Trajectory]) -> TrainingData:
        rows, triples, traj_of_step, coef, starts, lengths, targets = [], [], [], [], [], [], []
        g, alpha = self.cfg.gamma, self.cfg.alpha
        for j, tr in enumerate(trajectories):
            if tr.rewards is None:
                raise ValueError(f"trajectory {j} ({tr.task_id}) has unannotated steps")
            H = len(tr.steps)
            starts.append(len(rows))
            lengths.append(H)
            targets.append(alpha * (2 * tr.f_s - 1))
            for t, (step, r) in enumerate(zip(tr.steps, tr.rewards)):
                rows.append(self.encoder.state_action_indices(step.obs, step.action, tr.instruction))
                triples.append(r.triple())
                traj_of_step.append(j)
                coef.append(g ** t / (H * K))
        return TrainingData(
            X=stack_rows(rows, self.encoder.action_dim),
            triples=np.asarray(triples, dtype=float).reshape(-1, 3),
            traj_of_step=np.asarray(traj_of_step, dtype=np.int64),
            coef=np.asarray(coef),
            starts=np.asarray(starts, dtype=np.int64),
            lengths=np.asarray(lengths, dtype=np.int64),
            targets=np.asarray(targets, dtype=float),
        )

    # -- loss ----------------------------------------------------------------------

    def loss_and_grads(self, data: TrainingData, traj_ids: np.ndarray | None = None,
                       need_grads: bool = True) -> tuple[float, list[np.ndarray] | None]:
        """Mean over trajectories of (normalised discounted return - target)^2."""
        if traj_ids is None:
            traj_ids = np.arange(data.n_traj)
        rows = data.rows(traj_ids)
        local = np.repeat(np.arange(len(traj_ids)), data.lengths[traj_ids])
        X = data.X[rows]
        T = data.triples[rows]
        c = data.coef[rows]
        z, acts = self.net.forward(X, keep=True)
        w = self._weights_from_logits(z)
        rhat = (w * T).sum(axis=1)
        ret = np.bincount(local, weights=c * rhat, minlength=len(traj_ids))
        diff = ret - data.targets[traj_ids]
        B = len(traj_ids)
        loss = float(np.mean(diff ** 2))
        if not need_grads:
            return loss, None
        d_rhat = 2.0 * diff[local] * c / B
        d_z = d_rhat[:, None] * w * (T - rhat[:, None])
        return loss, self.net.backward(acts, d_z)

    def trajectory_loss(self, traj: Trajectory) -> tuple[float, list[np.ndarray]]:
        return self.loss_and_grads(self.build_data([traj]))

    # -- training --------------------------------------------------------------------

    def fit(self, trajectories: Sequence[Trajectory], seed: int = 0) -> list[tuple[int, float]]:
        """Mini-batch training; returns the (epoch, full-data loss) curve, epoch 0 = before training."""
        if self.cfg.mode != "learned":
            return []
        usable = [t for t in trajectories if t.labeled]
        if not usable:
            raise ValueError("no labelled trajectories to train on")
        labels = {t.f_s for t in usable}
        if len(labels) < 2:
            log.warning("all training trajectories share the label f_s=%d", labels.pop())
        data = self.build_data(usable)
        rng = np.random.default_rng(seed)
        opt = Adam(self.net.params, lr=self.cfg.lr)
        curve = [(0, self.loss_and_grads(data, need_grads=False)[0])]
        bs = self.cfg.batch_size
        for epoch in range(1, self.cfg.max_epochs + 1):
            order = rng.permutation(data.n_traj)
            for s in range(0, len(order), bs):
                _, grads = self.loss_and_grads(data, order[s:s + bs])
                opt.step(clip_by_global_norm(grads, self.cfg.grad_clip))
            loss = self.loss_and_grads(data, need_grads=False)[0]
            curve.append((epoch, loss))
            log.debug("orchestrator epoch %d loss %.6f", epoch, loss)
            if not np.isfinite(loss):
                raise FloatingPointError("orchestrator loss diverged")
            if epoch >= self.cfg.patience:
                old = curve[epoch - self.cfg.patience][1]
                if (old - loss) / max(abs(old), 1e-12) < self.cfg.min_rel_improvement:
                    log.info("orchestrator plateaued at epoch %d", epoch)
                    break
        self._round_to_float32()
        return curve

    def _round_to_float32(self) -> None:
        # parameters are stored as float32; keep the in-memory model identical to a reloaded one
        for p in self.net.params:
            p[...] = p.astype(np.float32).astype(np.float64)

    # -- emission -------------------------------------------------------------------

    def emit(self, trajectories: Sequence[Trajectory]) -> list[Trajectory]:
        """Attach the unified reward to every step."""
        if not trajectories:
            return []
        data = self.build_data(trajectories)
        rhat = self.unified_rewards(data.X, data.triples)
        out = []
        for tr, start in zip(trajectories, data.starts):
            u = rhat[start:start + len(tr.steps)]
            rewards = tuple(RewardAnnotation(r.rc, r.rs, r.rt, float(x)) for r, x in zip(tr.rewards, u))
            out.append(replace(tr, rewards=rewards))
        return out

    def mean_weights(self, trajectories: Sequence[Trajectory]) -> np.ndarray:
        data = self.build_data(trajectories)
        return self.weights_matrix(data.X).mean(axis=0)

    # -- persistence ----------------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        header = {"kind": "orchestrator", "config": self.cfg.to_json(), "sizes": list(self.net.sizes),
                  **(meta or {})}
        save_checkpoint(path, header, self.net.params)

    @classmethod
    def load(cls, path: str | Path, world: WorldSpec) -> tuple["Orchestrator", dict]:
        head, arrays = load_checkpoint(path)
        if head.get("kind") != "orchestrator":
            raise ValueError(f"{path} is not an orchestrator checkpoint")
        model = cls(world, OrchestratorConfig(**head["config"]))
        for p, a in zip(model.net.params, arrays):
            p[...] = a
        return model, head


def write_curve(path: str | Path, curve: Sequence[tuple[int, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for e, l in curve:
            w.writerow([e, repr(float(l))])
