"""Policy rollouts and the SR / CGC / Plan metrics."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .env import TaskSpec, WorldSpec, check_goals, initial_state, observe, transition

Policy = Callable[..., int]  # policy(obs, instruction) -> action id


@dataclass(frozen=True)
class Episode:
    actions: tuple[int, ...]
    success: bool
    goals_met: int
    goals_total: int


@dataclass(frozen=True)
class EvalRecord:
    task_id: str
    kind: str  # fine | abstract | train
    instruction: str
    success: bool
    goals_met: int
    goals_total: int
    plan: float
    steps: int


@dataclass
class EvalReport:
    records: list[EvalRecord] = field(default_factory=list)

    def _subset(self, kind: str | None) -> list[EvalRecord]:
        return [r for r in self.records if kind is None or r.kind == kind]

    def sr(self, kind: str | None = None) -> float:
        rs = self._subset(kind)
        return 100.0 * sum(r.success for r in rs) / len(rs) if rs else 0.0

    def cgc(self, kind: str | None = None) -> float:
        rs = self._subset(kind)
        return 100.0 * sum(r.goals_met / r.goals_total for r in rs) / len(rs) if rs else 0.0

    def plan(self, kind: str | None = None) -> float:
        rs = self._subset(kind)
        return 100.0 * sum(r.plan for r in rs) / len(rs) if rs else 0.0

    def summary(self) -> dict:
        out = {"n": len(self.records), "SR": self.sr(), "CGC": self.cgc(), "Plan": self.plan()}
        for kind in sorted({r.kind for r in self.records}):
            out[kind] = {"n": len(self._subset(kind)), "SR": self.sr(kind), "CGC": self.cgc(kind),
                         "Plan": self.plan(kind)}
        return out

    def write(self, csv_path: str | Path, json_path: str | Path, extra: dict | None = None) -> None:
        csv_path, json_path = Path(csv_path), Path(json_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task_id", "kind", "instruction", "success", "goals_met", "goals_total", "plan", "steps"])
            for r in self.records:
                w.writerow([r.task_id, r.kind, r.instruction, int(r.success), r.goals_met, r.goals_total,
                            repr(r.plan), r.steps])
        json_path.write_text(json.dumps({**self.summary(), **(extra or {})}, indent=1, sort_keys=True) + "\n")


def rollout(policy: Policy, world: WorldSpec, task: TaskSpec, instruction: str, max_steps: int) -> Episode:
    """Greedy loop that stops when every goal holds or the step budget runs out."""
    state = initial_state(world)
    hist: list[int] = []
    for _ in range(max_steps):
        if all(check_goals(world, state, task)):
            break
        a = int(policy(observe(world, state, hist), instruction))
        state, _ = transition(world, state, a)
        hist.append(a)
    mask = check_goals(world, state, task)
    return Episode(tuple(hist), all(mask) and bool(mask), sum(mask), len(mask))


def plan_metric(predicted: Sequence[int], expert: Sequence[int]) -> float:
    """Length of the longest common prefix divided by the expert length."""
    if not expert:
        raise ValueError("expert sequence must be non-empty")
    n = 0
    for p, e in zip(predicted, expert):
        if p != e:
            break
        n += 1
    return n / len(expert)


def instruction_set(task: TaskSpec, kinds: Sequence[str] = ("fine", "abstract")) -> list[tuple[str, str]]:
    pools = {"fine": task.fine_instructions, "abstract": task.abstract_instructions,
             "train": task.train_instructions}
    return [(k, text) for k in kinds for text in pools[k]]


def evaluate(policy: Policy, world: WorldSpec, tasks: Sequence[TaskSpec] | None = None,
             kinds: Sequence[str] = ("fine", "abstract"), budget_factor: float = 2.0,
             jobs: int = 1) -> EvalReport:
    tasks = list(world.tasks if tasks is None else tasks)
    jobs_list = [(t, kind, text) for t in tasks for kind, text in instruction_set(t, kinds)]

    def run(item):
        task, kind, text = item
        budget = int(round(budget_factor * len(task.expert)))
        ep = rollout(policy, world, task, text, budget)
        return EvalRecord(task.id, kind, text, ep.success, ep.goals_met, ep.goals_total,
                          plan_metric(ep.actions, task.expert), len(ep.actions))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, jobs_list))
    else:
        records = [run(x) for x in jobs_list]
    return EvalReport(records)
