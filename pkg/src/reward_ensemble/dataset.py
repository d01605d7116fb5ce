"""Offline trajectory datasets with sparse success labels, plus the object-relevance QA set."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .env import (Observation, TaskSpec, WorldSpec, initial_state, is_success, observe,
                  static_relevant, transition)

log = logging.getLogger(__name__)

DATASET_SCHEMA = 1


@dataclass(frozen=True)
class Step:
    obs: Observation
    action: int
    next_obs: Observation

    def to_json(self) -> dict:
        return {"obs": self.obs.to_json(), "action": self.action, "next_obs": self.next_obs.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "Step":
        return cls(Observation.from_json(d["obs"]), int(d["action"]), Observation.from_json(d["next_obs"]))


@dataclass(frozen=True)
class RewardAnnotation:
    rc: int
    rs: int
    rt: int
    unified: float | None = None

    def triple(self) -> tuple[int, int, int]:
        return (self.rc, self.rs, self.rt)

    def to_json(self) -> dict:
        d = {"rc": self.rc, "rs": self.rs, "rt": self.rt}
        if self.unified is not None:
            d["unified"] = self.unified
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RewardAnnotation":
        u = d.get("unified")
        return cls(int(d["rc"]), int(d["rs"]), int(d["rt"]), None if u is None else float(u))


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    instruction: str
    steps: tuple[Step, ...]
    f_s: int
    rewards: tuple[RewardAnnotation, ...] | None = None
    labeled: bool = True  # False when the sparse label is withheld from reward learning

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory has no steps")
        if self.f_s not in (0, 1):
            raise ValueError(f"f_s must be 0 or 1, got {self.f_s!r}")
        if self.rewards is not None and len(self.rewards) != len(self.steps):
            raise ValueError("reward annotations must cover every step")

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(s.action for s in self.steps)

    @property
    def annotated(self) -> bool:
        return self.rewards is not None

    def to_json(self) -> dict:
        d = {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "steps": [s.to_json() for s in self.steps],
            "f_s": self.f_s,
        }
        if self.rewards is not None:
            d["rewards"] = [r.to_json() for r in self.rewards]
        if not self.labeled:
            d["labeled"] = False
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Trajectory":
        rewards = d.get("rewards")
        return cls(
            task_id=d["task_id"],
            instruction=d["instruction"],
            steps=tuple(Step.from_json(s) for s in d["steps"]),
            f_s=int(d["f_s"]),
            rewards=None if rewards is None else tuple(RewardAnnotation.from_json(r) for r in rewards),
            labeled=bool(d.get("labeled", True)),
        )


@dataclass(frozen=True)
class QAPair:
    task_id: str
    obs: Observation
    query: str
    answer: frozenset[str]

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "obs": self.obs.to_json(), "query": self.query,
                "answer": sorted(self.answer)}

    @classmethod
    def from_json(cls, d: dict) -> "QAPair":
        return cls(d["task_id"], Observation.from_json(d["obs"]), d["query"], frozenset(d["answer"]))


@dataclass
class CorruptionConfig:
    per_task: int = 319  # corrupted trajectories per task
    k_min: int = 1
    k_max: int = 3
    label_mode: str = "all"  # all | pair

    def __post_init__(self):
        if self.per_task < 0:
            raise ValueError("per_task must be non-negative")
        if self.k_min < 0 or self.k_max < self.k_min:
            raise ValueError("need 0 <= k_min <= k_max")
        if self.label_mode not in ("all", "pair"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")


# ---------------------------------------------------------------------------
# forging


def trajectory_from_actions(world: WorldSpec, task: TaskSpec, instruction: str,
                            actions: Sequence[int]) -> Trajectory:
    """Replay an action sequence from the initial state and record what happens."""
    state = initial_state(world)
    hist: list[int] = []
    obs = observe(world, state, hist)
    steps = []
    for a in actions:
        state, _ = transition(world, state, a)
        hist.append(a)
        nxt = observe(world, state, hist)
        steps.append(Step(obs, a, nxt))
        obs = nxt
    return Trajectory(task.id, instruction, tuple(steps), int(is_success(world, state, task)))


def corrupt_actions(actions: Sequence[int], k: int, num_actions: int, rng: random.Random) -> list[int]:
    """Insert k uniformly random actions at uniformly random positions before the final step."""
    seq = list(actions)
    for _ in range(k):
        seq.insert(rng.randrange(len(seq)), rng.randrange(num_actions))
    return seq


def forge_dataset(world: WorldSpec, tasks: Sequence[TaskSpec], cfg: CorruptionConfig,
                  seed: int) -> list[Trajectory]:
    out: list[Trajectory] = []
    for task in tasks:
        if task.stale or not task.expert:
            raise ValueError(f"task {task.id} has no valid expert trajectory")
        rng = random.Random(f"forge:{seed}:{task.id}")
        instructions = task.train_instructions or (task.id,)
        expert = trajectory_from_actions(world, task, rng.choice(instructions), task.expert)
        if expert.f_s != 1:
            raise ValueError(f"expert trajectory of {task.id} does not reach the goal")
        group = [expert]
        for _ in range(cfg.per_task):
            k = rng.randint(cfg.k_min, cfg.k_max)
            acts = corrupt_actions(task.expert, k, world.num_actions, rng)
            group.append(trajectory_from_actions(world, task, rng.choice(instructions), acts))
        if cfg.label_mode == "pair":
            group = _mark_pair(group)
        out.extend(group)
    log.info("forged %d trajectories (%d successful)", len(out), sum(t.f_s for t in out))
    return out


def _mark_pair(group: list[Trajectory]) -> list[Trajectory]:
    """Keep the sparse label on the expert and on the first failure only."""
    first_fail = next((i for i, t in enumerate(group) if t.f_s == 0), None)
    return [t if i in (0, first_fail) else replace(t, labeled=False) for i, t in enumerate(group)]


def replay_success(world: WorldSpec, traj: Trajectory) -> int:
    state = initial_state(world)
    for a in traj.actions:
        state, _ = transition(world, state, a)
    return int(is_success(world, state, world.task_by_id[traj.task_id]))


def relabel(trajectories: Iterable[Trajectory], shifted: WorldSpec,
            refresh_observations: bool = True) -> list[Trajectory]:
    """Recompute success flags (and, by default, observations) by replay in another world.

    Reward annotations are carried over untouched.
    """
    out = []
    for t in trajectories:
        task = shifted.task_by_id[t.task_id]
        fresh = trajectory_from_actions(shifted, task, t.instruction, t.actions)
        steps = fresh.steps if refresh_observations else t.steps
        out.append(Trajectory(t.task_id, t.instruction, steps, fresh.f_s, t.rewards, t.labeled))
    return out


# ---------------------------------------------------------------------------
# QA set


def qa_query(obs: Observation) -> str:
    return (f"Visible objects: {obs.render()}\n"
            "Among the currently visible objects, which ones are relevant to the task?")


def qa_truth(world: WorldSpec, task: TaskSpec, obs: Observation) -> frozenset[str]:
    """Visible objects named by the goals or the expert plan, or where a goal item starts."""
    return frozenset(obs.visible) & static_relevant(world, task)


def build_qa_dataset(trajectories: Sequence[Trajectory], world: WorldSpec) -> list[QAPair]:
    """One QA pair per distinct (task, visible, held) snapshot along expert trajectories."""
    if not trajectories:
        raise ValueError("dataset is empty")
    seen = set()
    out = []
    for t in trajectories:
        task = world.task_by_id[t.task_id]
        if t.f_s != 1 or t.actions != task.expert:
            continue
        for obs in [t.steps[0].obs] + [s.next_obs for s in t.steps]:
            key = (t.task_id, obs.visible, obs.held)
            if key in seen:
                continue
            seen.add(key)
            snap = Observation(obs.visible, obs.held, ())
            out.append(QAPair(t.task_id, snap, qa_query(snap), qa_truth(world, task, snap)))
    out.sort(key=lambda q: (q.task_id, q.obs.visible, q.obs.held))
    return out


# ---------------------------------------------------------------------------
# JSON Lines I/O


def _write_jsonl(path: Path, meta: dict, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            d = json.loads(line)
            if n == 0 and "_meta" in d:
                meta = d["_meta"]
            else:
                rows.append(d)
    return meta, rows


def save_trajectories(path: str | Path, trajectories: Iterable[Trajectory], meta: dict | None = None) -> None:
    m = {"schema": DATASET_SCHEMA, "kind": "trajectories", **(meta or {})}
    _write_jsonl(Path(path), m, (t.to_json() for t in trajectories))


def load_trajectories(path: str | Path) -> tuple[list[Trajectory], dict]:
    meta, rows = _read_jsonl(Path(path))
    if meta.get("schema", DATASET_SCHEMA) != DATASET_SCHEMA:
        raise ValueError(f"{path}: unsupported dataset schema {meta.get('schema')!r}")
    return [Trajectory.from_json(r) for r in rows], meta


def save_qa(path: str | Path, pairs: Iterable[QAPair], meta: dict | None = None) -> None:
    m = {"schema": DATASET_SCHEMA, "kind": "qa", **(meta or {})}
    _write_jsonl(Path(path), m, (q.to_json() for q in pairs))


def load_qa(path: str | Path) -> tuple[list[QAPair], dict]:
    meta, rows = _read_jsonl(Path(path))
    return [QAPair.from_json(r) for r in rows], meta
