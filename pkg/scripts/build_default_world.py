"""Regenerate src/reward_ensemble/data/default_world.json.

The house layout and the task list are written out by hand here; instruction texts
are generated deterministically and frozen into the JSON file.
"""

import json
from pathlib import Path

from reward_ensemble.env import (GoalCondition, ObjectSpec, TaskSpec, WorldSpec, world_to_dict)
from reward_ensemble.instructions import generate_instructions

ROOMS = ["kitchen", "livingroom", "bedroom", "bathroom"]

FURNITURE = [
    ("fridge", "kitchen", {"openable", "container"}),
    ("microwave", "kitchen", {"openable", "container", "switchable"}),
    ("sink", "kitchen", {"container"}),
    ("toaster", "kitchen", {"surface", "switchable"}),
    ("kitchen_table", "kitchen", {"surface"}),
    ("wallshelf", "kitchen", {"surface"}),
    ("sofa", "livingroom", {"surface", "sittable"}),
    ("coffee_table", "livingroom", {"surface"}),
    ("bookshelf", "livingroom", {"surface"}),
    ("bed", "bedroom", {"surface", "sittable"}),
    ("desk", "bedroom", {"surface"}),
    ("nightstand", "bedroom", {"surface"}),
    ("closet_drawer", "bedroom", {"openable", "container"}),
    ("bathtub", "bathroom", {"container"}),
    ("bathroom_counter", "bathroom", {"surface"}),
    ("bathroom_cabinet", "bathroom", {"openable", "container"}),
]

ITEMS = [
    ("apple", "coffee_table"),
    ("bananas", "coffee_table"),
    ("creamybuns", "coffee_table"),
    ("book", "bookshelf"),
    ("cereal", "wallshelf"),
    ("mug", "wallshelf"),
    ("salmon", "fridge"),
    ("breadslice", "toaster"),
    ("cat", "bed"),
    ("toothpaste", "bathroom_counter"),
]

DECOR = [
    ("paper", "wallshelf"), ("crackers", "wallshelf"), ("plate", "kitchen_table"),
    ("milk", "fridge"), ("remote", "coffee_table"), ("pillow", "sofa"),
    ("mouse", "desk"), ("keyboard", "desk"), ("lamp", "nightstand"),
    ("clothes", "closet_drawer"), ("towel", "bathroom_counter"), ("soap", "bathroom_cabinet"),
]

# (goals, expert plan)
TASKS = [
    ([("object_at", "apple", "kitchen_table")],
     ["grab apple", "find kitchen_table", "put apple"]),
    ([("object_in", "apple", "sink"), ("object_in", "bananas", "sink")],
     ["grab apple", "grab bananas", "find sink", "put_in apple", "put_in bananas"]),
    ([("holding", "apple"), ("holding", "bananas"), ("sitting_on", "sofa")],
     ["grab apple", "grab bananas", "find sofa", "sit sofa"]),
    ([("object_in", "cereal", "fridge")],
     ["find fridge", "grab cereal", "open fridge", "put_in cereal"]),
    ([("object_at", "salmon", "kitchen_table")],
     ["find fridge", "open fridge", "grab salmon", "find kitchen_table", "put salmon"]),
    ([("object_in", "salmon", "microwave"), ("switched_on", "microwave")],
     ["find fridge", "open fridge", "grab salmon", "find microwave", "open microwave",
      "put_in salmon", "close microwave", "switch_on microwave"]),
    ([("holding", "book"), ("sitting_on", "sofa")],
     ["grab book", "find sofa", "sit sofa"]),
    ([("object_in", "apple", "fridge")],
     ["grab apple", "find fridge", "open fridge", "put_in apple"]),
    ([("object_in", "bananas", "fridge")],
     ["grab bananas", "find fridge", "open fridge", "put_in bananas"]),
    ([("object_in", "toothpaste", "bathroom_cabinet")],
     ["find bathroom_cabinet", "grab toothpaste", "open bathroom_cabinet", "put_in toothpaste"]),
    ([("object_at", "cat", "desk")],
     ["find desk", "grab cat", "put cat"]),
    ([("object_in", "cat", "bathtub")],
     ["find bed", "grab cat", "find bathtub", "put_in cat"]),
    ([("object_at", "book", "desk")],
     ["grab book", "find desk", "put book"]),
    ([("holding", "book"), ("sitting_on", "bed")],
     ["grab book", "find bed", "sit bed"]),
    ([("object_at", "creamybuns", "kitchen_table")],
     ["grab creamybuns", "find kitchen_table", "put creamybuns"]),
    ([("holding", "creamybuns"), ("sitting_on", "sofa")],
     ["grab creamybuns", "find sofa", "sit sofa"]),
    ([("object_at", "breadslice", "kitchen_table")],
     ["find kitchen_table", "grab breadslice", "put breadslice"]),
    ([("switched_on", "toaster"), ("holding", "mug")],
     ["find toaster", "switch_on toaster", "grab mug"]),
    ([("object_at", "mug", "coffee_table")],
     ["find wallshelf", "grab mug", "find coffee_table", "put mug"]),
    ([("object_at", "cereal", "kitchen_table")],
     ["find kitchen_table", "grab cereal", "put cereal"]),
    ([("object_at", "apple", "kitchen_table"), ("object_at", "breadslice", "kitchen_table")],
     ["grab apple", "find kitchen_table", "grab breadslice", "put apple", "put breadslice"]),
    ([("object_in", "toothpaste", "sink")],
     ["find bathroom_counter", "grab toothpaste", "find sink", "put_in toothpaste"]),
    ([("object_in", "mug", "microwave"), ("switched_on", "microwave")],
     ["find microwave", "grab mug", "open microwave", "put_in mug", "close microwave",
      "switch_on microwave"]),
    ([("object_at", "cat", "sofa")],
     ["find bed", "grab cat", "find sofa", "put cat"]),
    ([("object_in", "book", "closet_drawer")],
     ["grab book", "find closet_drawer", "open closet_drawer", "put_in book"]),
]

INSTRUCTION_SEED = 20240501


def build() -> WorldSpec:
    objects = [ObjectSpec(f, "furniture", room=r, props=frozenset(p)) for f, r, p in FURNITURE]
    objects += [ObjectSpec(i, "item", home=h, props=frozenset({"grabbable"})) for i, h in ITEMS]
    objects += [ObjectSpec(d, "decor", home=h) for d, h in DECOR]
    world = WorldSpec(ROOMS, objects, "livingroom")
    tasks = []
    for n, (goals, plan) in enumerate(TASKS, start=1):
        t = TaskSpec(f"task{n:02d}", tuple(GoalCondition(g[0], tuple(g[1:])) for g in goals),
                     tuple(world.action_id(k) for k in plan))
        train, fine, abstract = generate_instructions(world, t, INSTRUCTION_SEED)
        tasks.append(TaskSpec(t.id, t.goals, t.expert, tuple(train), tuple(fine), tuple(abstract)))
    return world.with_tasks(tasks)


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "reward_ensemble" / "data" / "default_world.json"
    out.write_text(json.dumps(world_to_dict(build()), indent=1) + "\n")
    print(f"wrote {out}")
