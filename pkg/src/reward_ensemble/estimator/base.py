"""Common interface for reward estimators (scripted oracle or remote language model)."""

from __future__ import annotations

import threading
from collections import Counter
from typing import Sequence

from ..env import Observation
from .personas import PersonaSpec


class EstimatorError(RuntimeError):
    """The estimator could not produce a usable answer."""


class EstimatorHub:
    """Answers reward, relevance and plan-verification queries for a set of personas.

    Subclasses implement the ``_estimate_all``, ``_answer_qa`` and ``_verify_plan``
    hooks; this base class adds call counting so callers can check whether (and how
    often) the estimator was consulted.
    """

    def __init__(self, personas: Sequence[PersonaSpec], num_actions: int):
        if not personas:
            raise ValueError("need at least one persona")
        ids = [p.id for p in personas]
        if len(set(ids)) != len(ids):
            raise ValueError("persona ids must be unique")
        self.personas = list(personas)
        self.num_actions = num_actions
        self.calls: Counter = Counter()
        self._lock = threading.Lock()

    def _count(self, what: str) -> None:
        with self._lock:
            self.calls[what] += 1

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def estimate(self, persona: PersonaSpec, obs: Observation, action: int, instruction: str) -> int:
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action id {action} out of range")
        return int(self.estimate_all(persona, obs, instruction)[action])

    def estimate_all(self, persona: PersonaSpec, obs: Observation, instruction: str) -> tuple[int, ...]:
        self._count("estimate")
        return self._estimate_all(persona, obs, instruction)

    def answer_qa(self, persona: PersonaSpec, query: str, obs: Observation, instruction: str) -> frozenset[str]:
        self._count("qa")
        return self._answer_qa(persona, query, obs, instruction)

    def verify_plan(self, persona: PersonaSpec, instruction: str, actions: Sequence[int]) -> bool:
        self._count("verify")
        return self._verify_plan(persona, instruction, tuple(actions))

    def _estimate_all(self, persona, obs, instruction):  # pragma: no cover - interface
        raise NotImplementedError

    def _answer_qa(self, persona, query, obs, instruction):  # pragma: no cover - interface
        raise NotImplementedError

    def _verify_plan(self, persona, instruction, actions):  # pragma: no cover - interface
        raise NotImplementedError
