"""Prompt templates for the remote estimator.

Every reward template shares the same scoring scale and differs in framing: a plain
instruction-only prompt, prompts with one to three worked examples, and a
step-by-step reasoning prompt. Slots are filled with ``str.format``.
"""

from __future__ import annotations

_RUBRIC = """Score each proposed action on this scale:
2: the action is the one that should come next after the completed actions.
1: the action helps set up the 2-point action without being it.
0: the action touches a visible object but does nothing for the task.
-1: the action goes looking for something the task does not need.
-2: the action cannot be carried out right now, for example grabbing or placing an object that is not visible, or closing something that was never opened.
Grab, put, open, close, sit and switch on only work on visible objects."""

_QUERY = """Task: {instruction}
Available actions: {action_list}
Completed actions: {history}
Visible objects: {visible}
Holding: {grabbed}
How many points does "{action}" get, and which visible objects matter for the task?"""

_FORMAT = """Reply in exactly this format and nothing else:
Score: <integer>
relevant objects: <comma separated names>"""

_EXAMPLE_1 = """Example
Task: put the cereal in the fridge
Completed actions: find fridge
Visible objects: breadslice, cereal, fridge, kitchen table, microwave, mug, wallshelf
Holding: nothing
How many points does "grab cereal" get?
Score: 2
relevant objects: cereal, fridge, wallshelf"""

_EXAMPLE_2 = """Example
Task: sit on the sofa while holding the book
Completed actions: none
Visible objects: apple, book, bookshelf, coffee table, sofa
Holding: nothing
How many points does "find bathtub" get?
Score: -1
relevant objects: book, bookshelf, sofa"""

_EXAMPLE_3 = """Example
Task: put the salmon on the kitchen table
Completed actions: find fridge
Visible objects: fridge, kitchen table, microwave, sink
Holding: nothing
How many points does "grab salmon" get?
Score: -2
relevant objects: fridge, kitchen table"""

_INTRO = ("You are a household robot. Given a task, rate how much a single action moves the task "
          "forward and name the visible objects that matter for it.")

TEMPLATES = {
    "naive": "\n\n".join([_INTRO, _RUBRIC, _FORMAT, _QUERY]),
    "icl-1": "\n\n".join([_INTRO, _RUBRIC, _EXAMPLE_1, _FORMAT, _QUERY]),
    "icl-2": "\n\n".join([_INTRO, _RUBRIC, _EXAMPLE_1, _EXAMPLE_2, _FORMAT, _QUERY]),
    "icl-3": "\n\n".join([_INTRO, _RUBRIC, _EXAMPLE_1, _EXAMPLE_2, _EXAMPLE_3, _FORMAT, _QUERY]),
    "cot": "\n\n".join([
        _INTRO, _RUBRIC,
        "Before scoring, sort the available actions into: actions the task needs, harmless actions on "
        "visible objects, searches for unrelated objects, actions that would undo progress, and actions "
        "that are impossible right now. Then score the asked action.",
        _EXAMPLE_1, _FORMAT, _QUERY]),
    "extra": "\n\n".join([
        "You advise a home assistant robot on which action to take next.", _RUBRIC, _FORMAT, _QUERY]),
    "qa": """Task: {instruction}
Visible objects: {visible}
Holding: {grabbed}
Which of the visible objects are relevant to the task?
Reply in exactly this format and nothing else:
relevant objects: <comma separated names>""",
    "verify": """Available actions: {action_list}
Someone picked actions from this list to form the sequence: {history}.
Executed in this order from the start, does the sequence accomplish: {instruction}?
Answer with only "possible" or "impossible".""",
}

SLOTS = ("instruction", "action_list", "history", "visible", "grabbed", "action")


def render(template_id: str, slots: dict) -> str:
    try:
        tmpl = TEMPLATES[template_id]
    except KeyError:
        raise ValueError(f"unknown template {template_id!r}") from None
    filled = {k: slots.get(k, "") for k in SLOTS}
    return tmpl.format(**filled)
