"""Symbolic household simulator: a deterministic, partially observable goal-conditioned world.

Objects come in three kinds. Furniture (sofa, fridge, ...) can be found, and
depending on its properties opened, sat on, switched on, or used as a surface or
container. Items (apple, book, ...) can be grabbed and placed. Decor objects only
show up in observations.

``find X`` moves the agent into X's room and makes X the focus; every object in the
agent's room that is not inside a closed container is visible. Interactions with
furniture (open, close, sit, switch_on, put, put_in) act on the focused piece.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

BEHAVIORS = ("find", "grab", "open", "close", "sit", "put", "put_in", "switch_on")
GOAL_KINDS = ("object_at", "object_in", "holding", "sitting_on", "switched_on")
HAND_CAPACITY = 2
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid world, task, or shift definition."""


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    kind: str  # furniture | item | decor
    room: str | None = None  # furniture only
    home: str | None = None  # items and decor: the furniture they start on or in
    props: frozenset[str] = frozenset()

    @property
    def name(self) -> str:
        return self.id.replace("_", " ")


@dataclass(frozen=True)
class Action:
    id: int
    behavior: str
    obj: str

    @property
    def text(self) -> str:
        if self.behavior == "put_in":
            return f"put {self.obj.replace('_', ' ')} in"
        if self.behavior == "switch_on":
            return f"switch on {self.obj.replace('_', ' ')}"
        return f"{self.behavior} {self.obj.replace('_', ' ')}"

    @property
    def key(self) -> str:
        return f"{self.behavior} {self.obj}"


@dataclass(frozen=True)
class GoalCondition:
    kind: str
    args: tuple[str, ...]

    def objects(self) -> tuple[str, ...]:
        return self.args

    def to_json(self) -> list[str]:
        return [self.kind, *self.args]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    goals: tuple[GoalCondition, ...]
    expert: tuple[int, ...]
    train_instructions: tuple[str, ...] = ()
    fine_instructions: tuple[str, ...] = ()
    abstract_instructions: tuple[str, ...] = ()
    stale: bool = False  # expert could not be re-derived after a shift

    def all_instructions(self) -> tuple[str, ...]:
        return self.train_instructions + self.fine_instructions + self.abstract_instructions


@dataclass(frozen=True)
class State:
    room: str
    focus: str | None
    seated: str | None
    held: tuple[str, ...]
    placement: tuple[str | None, ...]  # per item, in world.items order; None while held
    opened: tuple[bool, ...]  # per openable
    switched: tuple[bool, ...]  # per switchable


@dataclass(frozen=True)
class Observation:
    visible: tuple[str, ...]
    held: tuple[str, ...]
    history: tuple[int, ...]

    def render(self) -> str:
        return ", ".join(sorted(v.replace("_", " ") for v in self.visible))

    def key(self) -> tuple:
        return (self.visible, self.held, self.history)

    def to_json(self) -> dict:
        return {"visible": list(self.visible), "held": list(self.held), "history": list(self.history)}

    @classmethod
    def from_json(cls, d: dict) -> "Observation":
        return cls(tuple(d["visible"]), tuple(d["held"]), tuple(int(a) for a in d["history"]))


@dataclass(frozen=True)
class DomainShift:
    moves: tuple[tuple[str, str], ...] = ()  # (item id, new home furniture id)

    @classmethod
    def from_mapping(cls, mapping: dict[str, str] | None) -> "DomainShift":
        return cls(tuple(sorted((mapping or {}).items())))

    def as_dict(self) -> dict[str, str]:
        return dict(self.moves)


class WorldSpec:
    """Static description of the house plus the enumerated action table."""

    def __init__(self, rooms: Sequence[str], objects: Sequence[ObjectSpec], start_room: str,
                 tasks: Sequence[TaskSpec] = ()):
        self.rooms = tuple(rooms)
        self.objects = tuple(objects)
        self.start_room = start_room
        self.by_id = {o.id: o for o in self.objects}
        if len(self.by_id) != len(self.objects):
            raise ConfigError("duplicate object ids")
        if start_room not in self.rooms:
            raise ConfigError(f"unknown start room {start_room!r}")
        self.furniture = tuple(o.id for o in self.objects if o.kind == "furniture")
        self.items = tuple(o.id for o in self.objects if o.kind == "item")
        self.decor = tuple(o.id for o in self.objects if o.kind == "decor")
        self.openables = tuple(f for f in self.furniture if "openable" in self.by_id[f].props)
        self.switchables = tuple(f for f in self.furniture if "switchable" in self.by_id[f].props)
        self.item_index = {k: i for i, k in enumerate(self.items)}
        self.open_index = {k: i for i, k in enumerate(self.openables)}
        self.switch_index = {k: i for i, k in enumerate(self.switchables)}
        self.object_index = {o.id: i for i, o in enumerate(self.objects)}
        self._validate_objects()
        self.actions = tuple(self._enumerate_actions())
        self.action_index = {a.key: a.id for a in self.actions}
        self.tasks = tuple(tasks)
        self.task_by_id = {t.id: t for t in self.tasks}
        self._furniture_room = {f: self.by_id[f].room for f in self.furniture}

    def _validate_objects(self) -> None:
        for o in self.objects:
            if o.kind not in ("furniture", "item", "decor"):
                raise ConfigError(f"{o.id}: unknown kind {o.kind!r}")
            if o.kind == "furniture":
                if o.room not in self.rooms:
                    raise ConfigError(f"{o.id}: unknown room {o.room!r}")
            else:
                home = self.by_id.get(o.home or "")
                if home is None or home.kind != "furniture":
                    raise ConfigError(f"{o.id}: home must be a furniture id, got {o.home!r}")

    def _enumerate_actions(self):
        applicable = {
            "find": lambda o: o.kind == "furniture",
            "grab": lambda o: o.kind == "item",
            "open": lambda o: "openable" in o.props,
            "close": lambda o: "openable" in o.props,
            "sit": lambda o: "sittable" in o.props,
            "put": lambda o: o.kind == "item",
            "put_in": lambda o: o.kind == "item",
            "switch_on": lambda o: "switchable" in o.props,
        }
        n = 0
        for b in BEHAVIORS:
            for o in self.objects:
                if applicable[b](o):
                    yield Action(n, b, o.id)
                    n += 1

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def action_id(self, key: str) -> int:
        try:
            return self.action_index[key]
        except KeyError:
            raise ConfigError(f"unknown action {key!r}") from None

    def room_of(self, obj: str, state: State) -> str | None:
        spec = self.by_id[obj]
        if spec.kind == "furniture":
            return spec.room
        if spec.kind == "decor":
            return self._furniture_room[spec.home]
        loc = state.placement[self.item_index[obj]]
        return state.room if loc is None else self._furniture_room[loc]

    def item_home(self, item: str) -> str:
        return self.by_id[item].home

    def with_tasks(self, tasks: Sequence[TaskSpec]) -> "WorldSpec":
        return WorldSpec(self.rooms, self.objects, self.start_room, tasks)

    def signature(self) -> tuple:
        return (self.rooms, self.start_room, tuple((o.id, o.kind, o.room, o.home, tuple(sorted(o.props)))
                                                   for o in self.objects))


# ---------------------------------------------------------------------------
# dynamics


def initial_state(world: WorldSpec) -> State:
    return State(
        room=world.start_room,
        focus=None,
        seated=None,
        held=(),
        placement=tuple(world.item_home(i) for i in world.items),
        opened=(False,) * len(world.openables),
        switched=(False,) * len(world.switchables),
    )


def _hidden(world: WorldSpec, furniture: str, state: State) -> bool:
    idx = world.open_index.get(furniture)
    return idx is not None and not state.opened[idx]


def visible_objects(world: WorldSpec, state: State) -> tuple[str, ...]:
    room = state.room
    out = []
    for o in world.objects:
        if o.kind == "furniture":
            if o.room == room:
                out.append(o.id)
        elif o.kind == "decor":
            if world._furniture_room[o.home] == room and not _hidden(world, o.home, state):
                out.append(o.id)
        else:
            loc = state.placement[world.item_index[o.id]]
            if loc is None:
                out.append(o.id)
            elif world._furniture_room[loc] == room and not _hidden(world, loc, state):
                out.append(o.id)
    return tuple(sorted(out))


def is_visible(world: WorldSpec, state: State, obj: str) -> bool:
    spec = world.by_id[obj]
    if spec.kind == "furniture":
        return spec.room == state.room
    loc = spec.home if spec.kind == "decor" else state.placement[world.item_index[obj]]
    if loc is None:
        return True
    return world._furniture_room[loc] == state.room and not _hidden(world, loc, state)


def observe(world: WorldSpec, state: State, history: Sequence[int] = ()) -> Observation:
    return Observation(visible_objects(world, state), state.held, tuple(history))


def transition(world: WorldSpec, state: State, action: int) -> tuple[State, bool]:
    """Apply one action. Infeasible actions return the state unchanged and False."""
    act = world.actions[action]
    b, obj = act.behavior, act.obj
    spec = world.by_id[obj]
    if b == "find":
        return replace(state, room=spec.room, focus=obj, seated=None), True
    if b == "grab":
        if obj in state.held or len(state.held) >= HAND_CAPACITY or not is_visible(world, state, obj):
            return state, False
        placement = list(state.placement)
        placement[world.item_index[obj]] = None
        return replace(state, held=tuple(sorted(state.held + (obj,))), placement=tuple(placement)), True
    if b in ("put", "put_in"):
        focus = state.focus
        if obj not in state.held or focus is None:
            return state, False
        fprops = world.by_id[focus].props
        if b == "put" and "surface" not in fprops:
            return state, False
        if b == "put_in" and ("container" not in fprops or _hidden(world, focus, state)):
            return state, False
        placement = list(state.placement)
        placement[world.item_index[obj]] = focus
        held = tuple(h for h in state.held if h != obj)
        return replace(state, held=held, placement=tuple(placement)), True
    if state.focus != obj:
        return state, False
    if b == "open":
        idx = world.open_index[obj]
        if state.opened[idx]:
            return state, False
        opened = list(state.opened)
        opened[idx] = True
        switched = state.switched
        if obj in world.switch_index and switched[world.switch_index[obj]]:
            s = list(switched)
            s[world.switch_index[obj]] = False  # opening a running appliance stops it
            switched = tuple(s)
        return replace(state, opened=tuple(opened), switched=switched), True
    if b == "close":
        idx = world.open_index[obj]
        if not state.opened[idx]:
            return state, False
        opened = list(state.opened)
        opened[idx] = False
        return replace(state, opened=tuple(opened)), True
    if b == "sit":
        if state.seated == obj:
            return state, False
        return replace(state, seated=obj), True
    if b == "switch_on":
        idx = world.switch_index[obj]
        if state.switched[idx] or (obj in world.open_index and state.opened[world.open_index[obj]]):
            return state, False
        switched = list(state.switched)
        switched[idx] = True
        return replace(state, switched=tuple(switched)), True
    raise ConfigError(f"unknown behavior {b!r}")


def step(world: WorldSpec, state: State, action: int, history: Sequence[int] = ()) -> tuple[State, Observation, bool]:
    if not 0 <= action < world.num_actions:
        raise ValueError(f"action id {action} out of range")
    nxt, feasible = transition(world, state, action)
    return nxt, observe(world, nxt, tuple(history) + (action,)), feasible


def replay(world: WorldSpec, actions: Iterable[int], state: State | None = None) -> State:
    s = initial_state(world) if state is None else state
    for a in actions:
        s, _ = transition(world, s, a)
    return s


def rollout_states(world: WorldSpec, actions: Sequence[int]) -> list[tuple[State, Observation]]:
    """Every (state, observation) along an action sequence, starting with the initial one."""
    s = initial_state(world)
    out = [(s, observe(world, s))]
    hist: list[int] = []
    for a in actions:
        s, _ = transition(world, s, a)
        hist.append(a)
        out.append((s, observe(world, s, hist)))
    return out


# ---------------------------------------------------------------------------
# goals


def goal_satisfied(world: WorldSpec, state: State, goal: GoalCondition) -> bool:
    k, args = goal.kind, goal.args
    if k in ("object_at", "object_in"):
        return state.placement[world.item_index[args[0]]] == args[1]
    if k == "holding":
        return args[0] in state.held
    if k == "sitting_on":
        return state.seated == args[0]
    if k == "switched_on":
        return state.switched[world.switch_index[args[0]]]
    raise ConfigError(f"unknown goal predicate {k!r}")


def check_goals(world: WorldSpec, state: State, task: TaskSpec) -> list[bool]:
    return [goal_satisfied(world, state, g) for g in task.goals]


def is_success(world: WorldSpec, state: State, task: TaskSpec) -> bool:
    return all(check_goals(world, state, task))


def validate_goal(world: WorldSpec, goal: GoalCondition) -> None:
    k, args = goal.kind, goal.args

    def need(obj, prop=None, kind=None):
        spec = world.by_id.get(obj)
        if spec is None:
            raise ConfigError(f"goal {goal.to_json()}: unknown object {obj!r}")
        if kind and spec.kind != kind:
            raise ConfigError(f"goal {goal.to_json()}: {obj!r} must be a {kind}")
        if prop and prop not in spec.props:
            raise ConfigError(f"goal {goal.to_json()}: {obj!r} lacks property {prop!r}")

    if k == "object_at":
        need(args[0], kind="item"), need(args[1], "surface")
    elif k == "object_in":
        need(args[0], kind="item"), need(args[1], "container")
    elif k == "holding":
        need(args[0], kind="item")
    elif k == "sitting_on":
        need(args[0], "sittable")
    elif k == "switched_on":
        need(args[0], "switchable")
    else:
        raise ConfigError(f"unknown goal predicate {k!r}")


# ---------------------------------------------------------------------------
# planning over the task-relevant part of the world


def goal_items(task: TaskSpec) -> tuple[str, ...]:
    return tuple(g.args[0] for g in task.goals if g.kind in ("object_at", "object_in", "holding"))


def static_relevant(world: WorldSpec, task: TaskSpec) -> frozenset[str]:
    """Objects named by the goals or the expert plan, plus where goal items start."""
    rel = {o for g in task.goals for o in g.args}
    rel.update(world.actions[a].obj for a in task.expert)
    rel.update(world.item_home(i) for i in goal_items(task))
    return frozenset(rel)


def relevant_objects(world: WorldSpec, task: TaskSpec, state: State) -> frozenset[str]:
    rel = set(static_relevant(world, task))
    for item in goal_items(task):
        loc = state.placement[world.item_index[item]]
        if loc is not None:
            rel.add(loc)
    return frozenset(rel)


class Planner:
    """Breadth-first search restricted to actions on task-relevant or held objects.

    Distances and the set of first actions of shortest plans are cached per state.
    """

    def __init__(self, world: WorldSpec, max_depth: int = 14):
        self.world = world
        self.max_depth = max_depth
        self._cache: dict[tuple[str, State], tuple[float, frozenset[int]]] = {}
        self._action_cache: dict[tuple[str, frozenset, tuple], tuple[int, ...]] = {}

    def _actions(self, task: TaskSpec, rel: frozenset[str], held: tuple[str, ...]) -> tuple[int, ...]:
        key = (task.id, rel, held)
        acts = self._action_cache.get(key)
        if acts is None:
            objs = rel | set(held)
            acts = tuple(a.id for a in self.world.actions if a.obj in objs)
            self._action_cache[key] = acts
        return acts

    def search(self, task: TaskSpec, state: State) -> tuple[float, frozenset[int]]:
        """Return (distance to all goals, first actions of every shortest plan)."""
        key = (task.id, state)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        world = self.world
        if is_success(world, state, task):
            out = (0.0, frozenset())
            self._cache[key] = out
            return out
        acts = self._actions(task, relevant_objects(world, task, state), state.held)
        seen = {state}
        frontier: dict[State, set[int]] = {}
        for a in acts:
            nxt, ok = transition(world, state, a)
            if ok and nxt not in seen:
                frontier.setdefault(nxt, set()).add(a)
        depth = 1
        result = (float("inf"), frozenset())
        while frontier and depth <= self.max_depth:
            winners = set()
            for s, firsts in frontier.items():
                if is_success(world, s, task):
                    winners |= firsts
            if winners:
                result = (float(depth), frozenset(winners))
                break
            seen.update(frontier)
            nxt_frontier: dict[State, set[int]] = {}
            for s, firsts in frontier.items():
                for a in acts:
                    n, ok = transition(world, s, a)
                    if ok and n not in seen:
                        nxt_frontier.setdefault(n, set()).update(firsts)
            frontier = nxt_frontier
            depth += 1
        self._cache[key] = result
        return result

    def distance(self, task: TaskSpec, state: State) -> float:
        return self.search(task, state)[0]

    def plan(self, task: TaskSpec, state: State | None = None) -> list[int] | None:
        """A shortest plan, choosing the lowest action id whenever several are optimal."""
        s = initial_state(self.world) if state is None else state
        out = []
        while True:
            d, firsts = self.search(task, s)
            if d == 0:
                return out
            if d == float("inf"):
                return None
            a = min(firsts)
            out.append(a)
            s, _ = transition(self.world, s, a)


def bfs_plan_length(world: WorldSpec, task: TaskSpec, max_depth: int = 10) -> float:
    """Unrestricted breadth-first search over all actions (slow; used as an oracle)."""
    start = initial_state(world)
    if is_success(world, start, task):
        return 0
    seen = {start}
    q = deque([(start, 0)])
    while q:
        s, d = q.popleft()
        if d >= max_depth:
            continue
        for a in range(world.num_actions):
            n, ok = transition(world, s, a)
            if not ok or n in seen:
                continue
            if is_success(world, n, task):
                return d + 1
            seen.add(n)
            q.append((n, d + 1))
    return float("inf")


# ---------------------------------------------------------------------------
# domain shift


def apply_shift(world: WorldSpec, shift: DomainShift) -> WorldSpec:
    """Relocate items and re-derive expert plans for the tasks they touch."""
    moves = shift.as_dict()
    if not moves:
        return world
    objects = []
    for o in world.objects:
        if o.id in moves:
            objects.append(replace(o, home=moves[o.id]))
        else:
            objects.append(o)
    for item, dest in moves.items():
        spec = world.by_id.get(item)
        if spec is None:
            raise ConfigError(f"shift references unknown object {item!r}")
        if spec.kind != "item":
            raise ConfigError(f"{item!r} cannot be relocated (only items move)")
        d = world.by_id.get(dest)
        if d is None or d.kind != "furniture" or not ({"surface", "container"} & d.props):
            raise ConfigError(f"{dest!r} is not a surface or container")
    shifted = WorldSpec(world.rooms, objects, world.start_room)
    planner = Planner(shifted)
    tasks = []
    for t in world.tasks:
        if not set(moves) & set(goal_items(t)) and not set(moves) & {world.actions[a].obj for a in t.expert}:
            tasks.append(t)
            continue
        probe = replace(t, expert=())
        plan = planner.plan(probe)
        if not plan:
            tasks.append(replace(t, stale=True))
        else:
            tasks.append(replace(t, expert=tuple(plan)))
    return shifted.with_tasks(tasks)


def shift_affected_tasks(world: WorldSpec, shift: DomainShift) -> list[str]:
    moves = set(shift.as_dict())
    return [t.id for t in world.tasks
            if moves & set(goal_items(t)) or moves & {world.actions[a].obj for a in t.expert}]


# ---------------------------------------------------------------------------
# loading


def _parse_task(world: WorldSpec, d: dict) -> TaskSpec:
    goals = tuple(GoalCondition(g[0], tuple(g[1:])) for g in d["goals"])
    for g in goals:
        validate_goal(world, g)
    expert = tuple(world.action_id(k) for k in d["expert"])
    instr = d.get("instructions", {})
    return TaskSpec(
        id=d["id"],
        goals=goals,
        expert=expert,
        train_instructions=tuple(instr.get("train", ())),
        fine_instructions=tuple(instr.get("fine", ())),
        abstract_instructions=tuple(instr.get("abstract", ())),
    )


def world_from_dict(d: dict) -> WorldSpec:
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported world schema {d.get('schema')!r}")
    objects = [
        ObjectSpec(id=o["id"], kind=o["kind"], room=o.get("room"), home=o.get("home"),
                   props=frozenset(o.get("props", ())))
        for o in d["objects"]
    ]
    world = WorldSpec(d["rooms"], objects, d["start_room"])
    tasks = [_parse_task(world, t) for t in d.get("tasks", ())]
    return world.with_tasks(tasks)


def world_to_dict(world: WorldSpec) -> dict:
    objs = []
    for o in world.objects:
        e = {"id": o.id, "kind": o.kind}
        if o.room is not None:
            e["room"] = o.room
        if o.home is not None:
            e["home"] = o.home
        if o.props:
            e["props"] = sorted(o.props)
        objs.append(e)
    return {
        "schema": SCHEMA_VERSION,
        "rooms": list(world.rooms),
        "start_room": world.start_room,
        "objects": objs,
        "tasks": [
            {
                "id": t.id,
                "goals": [g.to_json() for g in t.goals],
                "expert": [world.actions[a].key for a in t.expert],
                "instructions": {
                    "train": list(t.train_instructions),
                    "fine": list(t.fine_instructions),
                    "abstract": list(t.abstract_instructions),
                },
            }
            for t in world.tasks
        ],
    }


def load_world(path: str | Path | None = None) -> WorldSpec:
    if path is None:
        text = resources.files("reward_ensemble").joinpath("data/default_world.json").read_text()
    else:
        text = Path(path).read_text()
    return world_from_dict(json.loads(text))
