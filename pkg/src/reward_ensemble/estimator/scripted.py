"""Simulator-backed estimator with per-persona, seeded corruption."""

from __future__ import annotations

import random
from typing import Sequence

from ..dataset import qa_truth
from ..env import (DomainShift, Observation, Planner, WorldSpec, apply_shift, initial_state,
                   is_success, replay)
from .base import EstimatorError, EstimatorHub
from .personas import REWARD_VALUES, PersonaSpec, clamp_reward
from .rubric import Rubric


def _rng(persona: PersonaSpec, *key) -> random.Random:
    # string seeds are hashed with sha512 by random.Random, so streams are stable across runs
    return random.Random("|".join(map(str, (persona.seed, persona.id) + key)))


def corrupt_reward(value: int, persona: PersonaSpec, rng: random.Random) -> int:
    """Flip to a different reward with probability flip_rate, then add the bias and clamp."""
    v = int(value)
    if persona.flip_rate > 0 and rng.random() < persona.flip_rate:
        v = rng.choice([r for r in REWARD_VALUES if r != v])
    return clamp_reward(v + persona.bias)


def perturb_answer(answer: frozenset[str], visible: Sequence[str], rng: random.Random) -> frozenset[str]:
    """Change an object set by exactly one element: drop a member or add a visible non-member."""
    addable = sorted(set(visible) - answer)
    members = sorted(answer)
    options = [("drop", m) for m in members] + [("add", a) for a in addable]
    if not options:
        return answer
    op, obj = rng.choice(options)
    return answer - {obj} if op == "drop" else answer | {obj}


class ScriptedEstimator(EstimatorHub):
    """Rubric oracle playing every persona.

    A persona with a misconception scores actions and answers relevance queries as if
    some items lived elsewhere: its rubric runs in a copy of the world with those items
    moved. Plan verification always replays in the true world.
    """

    def __init__(self, world: WorldSpec, personas: Sequence[PersonaSpec], rubric: Rubric | None = None):
        super().__init__(personas, world.num_actions)
        self.world = world
        self.rubric = rubric or Rubric(world)
        self._by_instruction = {}
        for t in world.tasks:
            for text in t.all_instructions():
                self._by_instruction.setdefault(text, t.id)
        self._believed: dict[tuple, tuple[WorldSpec, Rubric]] = {(): (world, self.rubric)}
        self._cache: dict[tuple, tuple[int, ...]] = {}

    def task_id_for(self, instruction: str) -> str:
        try:
            return self._by_instruction[instruction]
        except KeyError:
            raise EstimatorError(f"instruction not recognised: {instruction!r}") from None

    def _belief(self, persona: PersonaSpec) -> tuple[WorldSpec, Rubric]:
        key = tuple(sorted((persona.misconception or {}).items()))
        hit = self._believed.get(key)
        if hit is None:
            w = apply_shift(self.world, DomainShift(key))
            hit = (w, Rubric(w, Planner(w)))
            self._believed[key] = hit
        return hit

    def rubric_truth(self, persona: PersonaSpec, obs: Observation, instruction: str) -> tuple[int, ...]:
        """Uncorrupted scores in the persona's believed world."""
        world, rubric = self._belief(persona)
        task = world.task_by_id[self.task_id_for(instruction)]
        state = replay(world, obs.history)
        return tuple(int(v) for v in rubric.score_all(task, state))

    def _estimate_all(self, persona, obs, instruction):
        key = (persona.id, persona.seed, obs.history, instruction)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        truth = self.rubric_truth(persona, obs, instruction)
        if persona.flip_rate == 0 and persona.bias == 0:
            out = truth
        else:
            rng = _rng(persona, "reward", instruction, obs.history)
            out = tuple(corrupt_reward(v, persona, rng) for v in truth)
        self._cache[key] = out
        return out

    def believed_visible(self, persona: PersonaSpec, obs: Observation) -> tuple[str, ...]:
        """What a persona with a misconception expects to see given the real observation.

        Items it believes are elsewhere drop out; items it believes sit on a visible
        surface (or an open-topped container) show up.
        """
        moved = persona.misconception or {}
        if not moved:
            return obs.visible
        world, _ = self._belief(persona)
        vis = set(obs.visible)
        for item, home in moved.items():
            if item in obs.held:
                continue
            vis.discard(item)
            if home in vis and "openable" not in world.by_id[home].props:
                vis.add(item)
        return tuple(sorted(vis))

    def _answer_qa(self, persona, query, obs, instruction):
        world, _ = self._belief(persona)
        task = world.task_by_id[self.task_id_for(instruction)]
        seen = Observation(self.believed_visible(persona, obs), obs.held, obs.history)
        answer = qa_truth(world, task, seen)
        if persona.qa_error_rate > 0:
            rng = _rng(persona, "qa", instruction, obs.visible, obs.held)
            if rng.random() < persona.qa_error_rate:
                answer = perturb_answer(answer, obs.visible, rng)
        return answer

    def _verify_plan(self, persona, instruction, actions):
        task = self.world.task_by_id[self.task_id_for(instruction)]
        ok = is_success(self.world, replay(self.world, actions, initial_state(self.world)), task)
        if persona.verify_error_rate > 0:
            rng = _rng(persona, "verify", instruction, actions)
            if rng.random() < persona.verify_error_rate:
                ok = not ok
        return bool(ok)
