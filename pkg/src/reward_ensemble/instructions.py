"""Instruction text generation.

Two styles are produced for every task: step-by-step ("fine") instructions that walk
through the expert plan, and goal-level ("abstract") instructions that only state the
desired end state. Training texts and held-out evaluation texts are drawn from
disjoint phrase pools so evaluation never sees a string used during training.
"""

from __future__ import annotations

import random

from .env import TaskSpec, WorldSpec, initial_state, transition

_STEP_PHRASES = {
    "train": {
        "find": ["find the {o}", "go to the {o}", "walk to the {o}"],
        "grab": ["grab the {o}", "pick up the {o}", "take the {o}"],
        "open": ["open the {o}"],
        "close": ["close the {o}", "shut the {o}"],
        "sit": ["sit on the {o}", "sit down on the {o}"],
        "put": ["put the {o} on the {f}", "place the {o} on the {f}"],
        "put_in": ["put the {o} in the {f}", "place the {o} inside the {f}"],
        "switch_on": ["switch on the {o}", "turn on the {o}"],
    },
    "eval": {
        "find": ["head to the {o}", "move to the {o}", "find the {o}"],
        "grab": ["pick the {o} up", "grab the {o}", "get the {o}"],
        "open": ["open up the {o}", "open the {o}"],
        "close": ["close the {o}", "close up the {o}"],
        "sit": ["take a seat on the {o}", "sit on the {o}"],
        "put": ["set the {o} on the {f}", "put the {o} down on the {f}"],
        "put_in": ["put the {o} into the {f}", "drop the {o} in the {f}"],
        "switch_on": ["turn the {o} on", "switch the {o} on"],
    },
}

_STEP_JOINERS = {
    "train": [", then ", ", and then ", ". Then "],
    "eval": [", after that ", ". Next, ", ", next "],
}

_GOAL_PHRASES = {
    "train": {
        "object_at": ["put the {0} on the {1}", "place the {0} on the {1}", "move the {0} to the {1}"],
        "object_in": ["put the {0} in the {1}", "place the {0} inside the {1}", "store the {0} in the {1}"],
        "holding": ["hold the {0}", "keep the {0} in hand", "carry the {0}"],
        "sitting_on": ["sit on the {0}", "sit down on the {0}"],
        "switched_on": ["turn on the {0}", "switch on the {0}"],
    },
    "eval": {
        "object_at": ["get the {0} onto the {1}", "leave the {0} on the {1}", "have the {0} on the {1}"],
        "object_in": ["get the {0} into the {1}", "leave the {0} in the {1}", "have the {0} in the {1}"],
        "holding": ["be holding the {0}", "have the {0} in hand", "hold the {0}"],
        "sitting_on": ["be seated on the {0}", "take a seat on the {0}"],
        "switched_on": ["have the {0} running", "get the {0} switched on"],
    },
}

_GOAL_WRAPPERS = {
    "train": ["{g}.", "Please {g}.", "Can you {g}?", "I need you to {g}."],
    "eval": ["Your goal: {g}.", "I would like you to {g}.", "Make sure to {g}.", "Could you {g}?"],
}


def _name(obj: str) -> str:
    return obj.replace("_", " ")


def _join_list(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def _step_texts(world: WorldSpec, task: TaskSpec, pool: str, rng: random.Random) -> str:
    phrases = _STEP_PHRASES[pool]
    state = initial_state(world)
    parts = []
    for a in task.expert:
        act = world.actions[a]
        focus = state.focus
        tmpl = rng.choice(phrases[act.behavior])
        parts.append(tmpl.format(o=_name(act.obj), f=_name(focus or "")))
        state, _ = transition(world, state, a)
    out = parts[0]
    for p in parts[1:]:
        out += rng.choice(_STEP_JOINERS[pool]) + p
    return out[0].upper() + out[1:] + "."


def _goal_text(task: TaskSpec, pool: str, rng: random.Random) -> str:
    phrases = _GOAL_PHRASES[pool]
    parts = [rng.choice(phrases[g.kind]).format(*[_name(x) for x in g.args]) for g in task.goals]
    text = rng.choice(_GOAL_WRAPPERS[pool]).format(g=_join_list(parts))
    return text[0].upper() + text[1:]


def _sample_unique(make, n: int, rng: random.Random, exclude: set[str], tries: int = 500) -> list[str]:
    out: list[str] = []
    for _ in range(tries):
        if len(out) == n:
            break
        t = make(rng)
        if t not in exclude and t not in out:
            out.append(t)
    return out


def generate_instructions(world: WorldSpec, task: TaskSpec, seed: int, n_train: int = 10,
                          n_fine: int = 5, n_abstract: int = 5) -> tuple[list[str], list[str], list[str]]:
    """Return (train, held-out fine, held-out abstract) instruction texts for a task.

    Half the training texts are step-by-step and half goal-level. Held-out texts are
    drawn from separate phrase pools and are guaranteed not to repeat a training text.
    """
    rng = random.Random(f"{seed}:{task.id}")
    n_train_fine = n_train // 2
    train = _sample_unique(lambda r: _step_texts(world, task, "train", r), n_train_fine, rng, set())
    train += _sample_unique(lambda r: _goal_text(task, "train", r), n_train - len(train), rng, set(train))
    seen = set(train)
    fine = _sample_unique(lambda r: _step_texts(world, task, "eval", r), n_fine, rng, seen)
    abstract = _sample_unique(lambda r: _goal_text(task, "eval", r), n_abstract, rng, seen | set(fine))
    return train, fine, abstract
