"""Ground-truth scoring rubric computed from the simulator.

Scores for taking action ``a`` in state ``s`` with ``d(s)`` the shortest remaining plan length:

*  2  feasible and on a shortest plan (d drops by one)
*  1  feasible, keeps d unchanged, and makes some 2-point action of the next state
      available that was not available before
* -1  any other find
* -2  infeasible, or a non-find action that lengthens the remaining plan
*  0  everything else (feasible actions on objects that leave the task untouched)
"""

from __future__ import annotations

import numpy as np

from ..env import Planner, State, TaskSpec, WorldSpec, transition

INF = float("inf")


class Rubric:
    def __init__(self, world: WorldSpec, planner: Planner | None = None):
        self.world = world
        self.planner = planner or Planner(world)
        self._cache: dict[tuple[str, State], np.ndarray] = {}

    def score(self, task: TaskSpec, state: State, action: int) -> int:
        return int(self.score_all(task, state)[action])

    def score_all(self, task: TaskSpec, state: State) -> np.ndarray:
        key = (task.id, state)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        world = self.world
        d0, best = self.planner.search(task, state)
        out = np.zeros(world.num_actions, dtype=np.int8)
        feasible_now = None
        for act in world.actions:
            nxt, ok = transition(world, state, act.id)
            if not ok:
                out[act.id] = -2
                continue
            d1, best_next = self.planner.search(task, nxt)
            if act.id in best or (d0 != INF and d1 == d0 - 1):
                out[act.id] = 2
                continue
            if d1 == d0 and d0 not in (0.0, INF) and best_next:
                if feasible_now is None:
                    feasible_now = {a.id for a in world.actions if transition(world, state, a.id)[1]}
                if any(b not in feasible_now for b in best_next):
                    out[act.id] = 1
                    continue
            if act.behavior == "find":
                out[act.id] = -1
            elif d1 > d0:
                out[act.id] = -2
            else:
                out[act.id] = 0
        out.setflags(write=False)
        self._cache[key] = out
        return out
