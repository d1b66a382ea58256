import random

import pytest

from btstudio.tree import (ACTION_KINDS, CONDITION_KINDS, BehaviorTree, Node,
                           NodeParams, NodeStatus, fallback, leaf, seq)
from btstudio.world import load_scenario


class StubWorld:
    """Scripted world for pure tick-semantics tests: conditions answer from
    a table, actions answer from a per-kind status script.
    """

    def __init__(self, conditions=None, actions=None):
        self.conditions = conditions or {}
        self.actions = actions or {}
        self.action_log = []

    def eval_condition(self, kind, params):
        return self.conditions.get((kind, params.target_object), False)

    def execute_action(self, kind, params):
        self.action_log.append((kind, params.target_object))
        return self.actions.get((kind, params.target_object), NodeStatus.RUNNING)

    def command_for(self, node):
        return {"node_id": node.node_id, "act_kind": node.kind}


@pytest.fixture
def stub_world():
    return StubWorld


@pytest.fixture
def cubes_world():
    return load_scenario("cubes_bowl")


OBJECTS = ("red_cube", "green_cube", "blue_cube", "yellow_cube", "table", "bowl")


def random_leaf(rng: random.Random, idgen) -> Node:
    kind = rng.choice(CONDITION_KINDS + ACTION_KINDS)
    target = rng.choice(OBJECTS[:4])
    relative = rng.choice(OBJECTS)
    offset = None
    if kind in ("at_pos?", "place!"):
        offset = tuple(round(rng.uniform(-1, 1), 3) for _ in range(3))
    elif kind in ("robot_at?", "move_to!"):
        offset = tuple(round(rng.uniform(-1, 1), 3) for _ in range(2))
    angle = round(rng.uniform(-3, 3), 3) if kind in ("at_pos?", "robot_at?", "place!", "move_to!") else None
    return leaf(kind, target=target,
                relative=relative if kind in ("at_pos?", "in?", "place!", "place_in!") else None,
                offset=offset, angle=angle, node_id=idgen(), locked=rng.random() < 0.1)


def random_tree(rng: random.Random, max_depth: int = 4) -> BehaviorTree:
    """Random structurally-sane tree (may violate the three soft constraints)."""
    counter = [0]

    def idgen():
        counter[0] += 1
        return f"r{counter[0]}"

    def grow(depth):
        if depth >= max_depth or rng.random() < 0.4:
            return random_leaf(rng, idgen)
        ctor = seq if rng.random() < 0.5 else fallback
        kids = [grow(depth + 1) for _ in range(rng.randint(1, 4))]
        return ctor(*kids, node_id=idgen(), locked=rng.random() < 0.05)

    root = seq if rng.random() < 0.5 else fallback
    kids = [grow(1) for _ in range(rng.randint(1, 4))]
    return BehaviorTree(root(*kids, node_id=idgen()))
