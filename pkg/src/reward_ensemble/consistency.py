"""Consistency-filtered majority votes over persona rewards.

Three rewards are produced per step:

* contextual: plain vote over every persona's reward;
* structural: vote over personas whose object-relevance answer agrees with the QA set;
* temporal: vote that drops a persona's reward when the action is one of its own
  high-value picks and its high-value sequence failed plan verification.

All votes break ties toward the lowest reward. When a filter removes every persona
the contextual value is used and a fallback flag is raised.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import QAPair, RewardAnnotation, Trajectory
from .env import Observation
from .estimator.base import EstimatorError, EstimatorHub
from .estimator.personas import PersonaSpec

log = logging.getLogger(__name__)

QA_THRESHOLD = 0.5


def vote(values: Iterable[int]) -> int:
    """Most frequent value; ties go to the smallest value."""
    counts = Counter(int(v) for v in values)
    if not counts:
        raise ValueError("cannot vote over an empty multiset")
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def contextual(responses: Sequence[int]) -> int:
    return vote(responses)


def structural(responses: Sequence[int], passed: Sequence[bool]) -> tuple[int, bool]:
    """Return (reward, fallback_used)."""
    if len(responses) != len(passed):
        raise ValueError("one verdict per response required")
    kept = [r for r, ok in zip(responses, passed) if ok]
    if not kept:
        return contextual(responses), True
    return vote(kept), False


def temporal(responses: Sequence[int], in_high_value: Sequence[bool],
             verified: Sequence[bool]) -> tuple[int, bool]:
    """Return (reward, fallback_used)."""
    if not len(responses) == len(in_high_value) == len(verified):
        raise ValueError("one flag pair per response required")
    kept = [r for r, h, v in zip(responses, in_high_value, verified) if not (h and not v)]
    if not kept:
        return contextual(responses), True
    return vote(kept), False


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def qa_verdict(answer: Iterable[str], truth: Iterable[str], threshold: float = QA_THRESHOLD) -> bool:
    return jaccard(answer, truth) >= threshold


@dataclass(frozen=True)
class RewardTriple:
    rc: int
    rs: int
    rt: int
    responses: tuple[int, ...] = ()
    structural_pass: tuple[bool, ...] = ()
    temporal_pass: tuple[bool, ...] = ()
    structural_fallback: bool = False
    temporal_fallback: bool = False

    def annotation(self) -> RewardAnnotation:
        return RewardAnnotation(self.rc, self.rs, self.rt)


def consistent_rewards(responses: Sequence[int], qa_pass: Sequence[bool], in_high_value: Sequence[bool],
                       verified: Sequence[bool]) -> RewardTriple:
    rc = contextual(responses)
    rs, s_fb = structural(responses, qa_pass)
    rt, t_fb = temporal(responses, in_high_value, verified)
    t_pass = tuple(not (h and not v) for h, v in zip(in_high_value, verified))
    return RewardTriple(rc, rs, rt, tuple(responses), tuple(qa_pass), t_pass, s_fb, t_fb)


def high_value_actions(estimates: Sequence[Sequence[int]]) -> tuple[int, ...]:
    """Argmax action per observation; np.argmax already returns the lowest id on ties."""
    return tuple(int(np.argmax(np.asarray(e))) for e in estimates)


class QAIndex:
    """Nearest QA pair lookup: exact (visible, held) match first, else best visible-set Jaccard."""

    def __init__(self, pairs: Sequence[QAPair]):
        self.pairs = list(pairs)
        self._by_task: dict[str, list[int]] = {}
        self._exact: dict[tuple, int] = {}
        for i, q in enumerate(self.pairs):
            self._by_task.setdefault(q.task_id, []).append(i)
            self._exact.setdefault((q.task_id, q.obs.visible, q.obs.held), i)
        self._memo: dict[tuple, int] = {}

    def has_task(self, task_id: str) -> bool:
        return task_id in self._by_task

    def nearest(self, task_id: str, obs: Observation) -> int:
        key = (task_id, obs.visible, obs.held)
        hit = self._exact.get(key)
        if hit is not None:
            return hit
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        cands = self._by_task.get(task_id)
        if not cands:
            raise KeyError(f"no QA pairs for task {task_id}")
        best = max(cands, key=lambda i: (jaccard(self.pairs[i].obs.visible, obs.visible),
                                          jaccard(self.pairs[i].obs.held, obs.held), -i))
        self._memo[key] = best
        return best


@dataclass
class AnnotateResult:
    trajectories: list[Trajectory]
    triples: list[list[RewardTriple]]
    source_index: list[int]  # position of each output trajectory in the input
    dropped: list[tuple[int, str]] = field(default_factory=list)


def annotate_trajectory(traj: Trajectory, hub: EstimatorHub, qa: QAIndex,
                        qa_cache: dict | None = None) -> list[RewardTriple]:
    personas = hub.personas
    qa_cache = {} if qa_cache is None else qa_cache
    estimates = [[hub.estimate_all(p, s.obs, traj.instruction) for s in traj.steps] for p in personas]
    high = [high_value_actions(e) for e in estimates]
    verified = [hub.verify_plan(p, traj.instruction, h) for p, h in zip(personas, high)]
    out = []
    for t, step in enumerate(traj.steps):
        qi = qa.nearest(traj.task_id, step.obs)
        pair = qa.pairs[qi]
        qa_pass = []
        for p in personas:
            key = (p.id, qi, traj.instruction)
            ok = qa_cache.get(key)
            if ok is None:
                ok = qa_verdict(hub.answer_qa(p, pair.query, pair.obs, traj.instruction), pair.answer)
                qa_cache[key] = ok
            qa_pass.append(ok)
        responses = [int(estimates[n][t][step.action]) for n in range(len(personas))]
        in_h = [step.action in high[n] for n in range(len(personas))]
        out.append(consistent_rewards(responses, qa_pass, in_h, verified))
    return out


def annotate_dataset(trajectories: Sequence[Trajectory], hub: EstimatorHub, qa_pairs: Sequence[QAPair],
                     jobs: int = 1) -> AnnotateResult:
    """Attach a reward triple to every step; trajectories that cannot be fully annotated are dropped."""
    qa = QAIndex(qa_pairs)
    qa_cache: dict = {}

    def work(i_traj):
        i, traj = i_traj
        try:
            if not qa.has_task(traj.task_id):
                raise EstimatorError(f"no QA pairs for task {traj.task_id}")
            return i, annotate_trajectory(traj, hub, qa, qa_cache), None
        except EstimatorError as e:
            return i, None, str(e)

    items = list(enumerate(trajectories))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(x) for x in items]

    res = AnnotateResult([], [], [])
    for i, triples, err in results:
        traj = trajectories[i]
        if triples is None or len(triples) != len(traj.steps):
            reason = err or "incomplete annotation"
            log.warning("dropping trajectory %d (%s): %s", i, traj.task_id, reason)
            res.dropped.append((i, reason))
            continue
        rewards = tuple(tr.annotation() for tr in triples)
        res.trajectories.append(Trajectory(traj.task_id, traj.instruction, traj.steps, traj.f_s,
                                           rewards, traj.labeled))
        res.triples.append(triples)
        res.source_index.append(i)
    return res


def write_diagnostics(path: str | Path, result: AnnotateResult, personas: Sequence[PersonaSpec]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = [p.id for p in personas]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "step", "action", "rc", "rs", "rt", "structural_fallback",
                    "temporal_fallback"]
                   + [f"r_{i}" for i in ids] + [f"qa_pass_{i}" for i in ids] + [f"temporal_pass_{i}" for i in ids])
        for src, traj, triples in zip(result.source_index, result.trajectories, result.triples):
            for t, (step, tr) in enumerate(zip(traj.steps, triples)):
                w.writerow([src, t, step.action, tr.rc, tr.rs, tr.rt, int(tr.structural_fallback),
                            int(tr.temporal_fallback)]
                           + list(tr.responses) + [int(x) for x in tr.structural_pass]
                           + [int(x) for x in tr.temporal_pass])
