"""Behavior tree data model: memoryless tick semantics, structural
constraint validation, metrics, and a stable JSON text format.

Trees are immutable after construction; all edits build new trees.
Node ids are opaque strings, unique within a tree. Library code that
creates nodes uses distinct id prefixes ("g" goal parser, "p" planner,
"m" optimizer mutations, "n" ad-hoc construction) so merged trees
stay collision-free.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterator, Optional


class NodeStatus(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"
    NOT_TICKED = "NOT_TICKED"


SEQUENCE = "Sequence"
FALLBACK = "Fallback"
CONTROL_KINDS = (SEQUENCE, FALLBACK)

CONDITION_KINDS = ("at_pos?", "grasped?", "in?", "robot_at?", "robot_near?")
ACTION_KINDS = ("grasp!", "place!", "place_in!", "move_to!", "idle!")
LEAF_KINDS = CONDITION_KINDS + ACTION_KINDS

# offset arity per leaf kind: 3 for object poses, 2 for the robot base
OFFSET_ARITY = {
    "at_pos?": 3,
    "place!": 3,
    "robot_at?": 2,
    "move_to!": 2,
    "robot_near?": 3,  # optional; planner-generated reach checks only
}
# leaf kinds that take a relative/container object
RELATIVE_KINDS = ("at_pos?", "in?", "place!", "place_in!")
# leaf kinds whose relative object must be a container
CONTAINER_KINDS = ("in?", "place_in!")
# leaf kinds carrying an angle parameter
ANGLE_KINDS = ("at_pos?", "robot_at?", "place!", "move_to!")


class StructuralError(ValueError):
    """Malformed tree: wrong arity, unknown kind, or duplicate ids."""


class TreeParseError(ValueError):
    """Text input could not be parsed into a tree."""


_id_counter = itertools.count(1)


def fresh_id(prefix: str = "n") -> str:
    """Ad-hoc node id; deterministic code paths supply their own ids."""
    return f"{prefix}{next(_id_counter)}"


@dataclass(frozen=True)
class NodeParams:
    target_object: Optional[str] = None
    relative_object: Optional[str] = None
    offset: Optional[tuple[float, ...]] = None
    angle: Optional[float] = None

    def __post_init__(self):
        if self.offset is not None:
            object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if self.angle is not None:
            object.__setattr__(self, "angle", float(self.angle))

    def rounded_key(self) -> tuple:
        """Canonical value for leaf-equality checks (floats rounded to 1e-6)."""
        off = tuple(round(v, 6) for v in self.offset) if self.offset is not None else None
        ang = round(self.angle, 6) if self.angle is not None else None
        return (self.target_object, self.relative_object, off, ang)


EMPTY_PARAMS = NodeParams()


@dataclass(frozen=True)
class Node:
    kind: str
    node_id: str
    params: NodeParams = EMPTY_PARAMS
    children: tuple["Node", ...] = ()
    locked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.kind not in CONTROL_KINDS and self.kind not in LEAF_KINDS:
            raise StructuralError(f"unknown node kind {self.kind!r}")
        if self.is_leaf and self.children:
            raise StructuralError(f"leaf {self.kind!r} ({self.node_id}) has children")

    @property
    def is_control(self) -> bool:
        return self.kind in CONTROL_KINDS

    @property
    def is_condition(self) -> bool:
        return self.kind in CONDITION_KINDS

    @property
    def is_action(self) -> bool:
        return self.kind in ACTION_KINDS

    @property
    def is_leaf(self) -> bool:
        return not self.is_control

    def leaf_key(self) -> tuple:
        return (self.kind,) + self.params.rounded_key()


@dataclass(frozen=True)
class BehaviorTree:
    root: Node

    def __post_init__(self):
        seen = set()
        for node in preorder(self.root):
            if node.node_id in seen:
                raise StructuralError(f"duplicate node_id {node.node_id!r}")
            seen.add(node.node_id)

    def node(self, node_id: str) -> Node:
        for n in preorder(self.root):
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def node_ids(self) -> list[str]:
        return [n.node_id for n in preorder(self.root)]


def preorder(node: Node) -> Iterator[Node]:
    yield node
    for child in node.children:
        yield from preorder(child)


def preorder_index(tree: BehaviorTree) -> dict[str, int]:
    """node_id -> depth-first left-to-right position (left-ness order)."""
    return {n.node_id: i for i, n in enumerate(preorder(tree.root))}


# ---------------------------------------------------------------------------
# construction helpers

def seq(*children: Node, node_id: str = None, locked: bool = False) -> Node:
    return Node(SEQUENCE, node_id or fresh_id(), children=tuple(children), locked=locked)


def fallback(*children: Node, node_id: str = None, locked: bool = False) -> Node:
    return Node(FALLBACK, node_id or fresh_id(), children=tuple(children), locked=locked)


def leaf(kind: str, target: str = None, relative: str = None,
         offset=None, angle: float = None, node_id: str = None,
         locked: bool = False) -> Node:
    if kind not in LEAF_KINDS:
        raise StructuralError(f"unknown leaf kind {kind!r}")
    if angle is None and kind in ANGLE_KINDS:
        angle = 0.0
    params = NodeParams(target_object=target, relative_object=relative,
                        offset=tuple(offset) if offset is not None else None,
                        angle=angle)
    return Node(kind, node_id or fresh_id(), params=params, locked=locked)


# ---------------------------------------------------------------------------
# tick semantics

@dataclass
class TickResult:
    root_status: NodeStatus
    statuses: dict[str, NodeStatus]
    issued: list
    failed_actions: int
    running_index: Optional[int]  # preorder index of the RUNNING action, if any


def tick(tree: BehaviorTree, world, index: dict[str, int] = None) -> TickResult:
    """One memoryless evaluation cycle, depth-first left to right.

    Sequence fails/runs at the first child that does; Fallback succeeds/runs
    at the first child that does. A RUNNING action halts the cycle, so at
    most one action advances the world per tick; its motion command (built
    by the world) lands in ``issued``. Callers ticking in a loop can pass a
    precomputed ``preorder_index``.
    """
    if index is None:
        index = preorder_index(tree)
    statuses: dict[str, NodeStatus] = {nid: NodeStatus.NOT_TICKED for nid in index}
    issued: list = []
    failed = 0
    running_index: Optional[int] = None

    def visit(node: Node) -> NodeStatus:
        nonlocal failed, running_index
        if node.is_control:
            if not node.children:
                raise StructuralError(f"control {node.node_id} has no children")
            stop_on = NodeStatus.SUCCESS if node.kind == SEQUENCE else NodeStatus.FAILURE
            status = stop_on
            for child in node.children:
                status = visit(child)
                if status is not stop_on:
                    break
            result = status
        elif node.is_condition:
            ok = world.eval_condition(node.kind, node.params)
            result = NodeStatus.SUCCESS if ok else NodeStatus.FAILURE
        else:
            result = world.execute_action(node.kind, node.params)
            if result is NodeStatus.FAILURE:
                failed += 1
            elif result is NodeStatus.RUNNING:
                running_index = index[node.node_id]
                issued.append(world.command_for(node))
        statuses[node.node_id] = result
        return result

    root_status = visit(tree.root)
    return TickResult(root_status, statuses, issued, failed, running_index)


# ---------------------------------------------------------------------------
# structural constraints

ADJACENT_IDENTICAL_LEAVES = "AdjacentIdenticalLeaves"
NESTED_IDENTICAL_CONTROL = "NestedIdenticalControl"
CONDITION_AFTER_ACTION = "ConditionAfterActionSibling"


@dataclass(frozen=True)
class ConstraintViolation:
    kind: str
    node_ids: tuple[str, ...]


def validate(tree: BehaviorTree) -> list[ConstraintViolation]:
    """All violations of the three structural constraints, in a stable
    preorder traversal order. Valid trees return an empty list.
    """
    violations: list[ConstraintViolation] = []
    for node in preorder(tree.root):
        if not node.is_control:
            continue
        for a, b in zip(node.children, node.children[1:]):
            if a.is_leaf and b.is_leaf and a.leaf_key() == b.leaf_key():
                violations.append(ConstraintViolation(
                    ADJACENT_IDENTICAL_LEAVES, (a.node_id, b.node_id)))
        for child in node.children:
            if child.is_control and child.kind == node.kind:
                violations.append(ConstraintViolation(
                    NESTED_IDENTICAL_CONTROL, (node.node_id, child.node_id)))
        first_action = None
        for child in node.children:
            if child.is_action and first_action is None:
                first_action = child
            elif child.is_condition and first_action is not None:
                violations.append(ConstraintViolation(
                    CONDITION_AFTER_ACTION, (first_action.node_id, child.node_id)))
    return violations


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class TreeMetrics:
    node_count: int
    max_depth: int


def metrics(tree: BehaviorTree) -> TreeMetrics:
    def walk(node: Node) -> tuple[int, int]:
        if not node.children:
            return 1, 1
        counts, depths = zip(*(walk(c) for c in node.children))
        return 1 + sum(counts), 1 + max(depths)

    count, depth = walk(tree.root)
    return TreeMetrics(node_count=count, max_depth=depth)


# ---------------------------------------------------------------------------
# serialization: stable JSON schema (documented in README)
#
# Node object keys, in order: "kind", "id", "locked", then for leaves any of
# "target", "relative", "offset", "angle" that are set, and for controls
# "children". Unset fields are omitted.

def node_to_dict(node: Node) -> dict:
    d: dict = {"kind": node.kind, "id": node.node_id, "locked": node.locked}
    p = node.params
    if p.target_object is not None:
        d["target"] = p.target_object
    if p.relative_object is not None:
        d["relative"] = p.relative_object
    if p.offset is not None:
        d["offset"] = list(p.offset)
    if p.angle is not None:
        d["angle"] = p.angle
    if node.is_control:
        d["children"] = [node_to_dict(c) for c in node.children]
    return d


def tree_to_dict(tree: BehaviorTree) -> dict:
    return node_to_dict(tree.root)


def serialize(tree: BehaviorTree) -> str:
    return json.dumps(tree_to_dict(tree), indent=2)


def node_from_dict(d: dict) -> Node:
    if not isinstance(d, dict):
        raise TreeParseError(f"expected a node object, got {type(d).__name__}")
    kind = d.get("kind")
    if kind not in CONTROL_KINDS and kind not in LEAF_KINDS:
        raise TreeParseError(f"unknown node kind {kind!r}")
    node_id = d.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise TreeParseError(f"node of kind {kind!r} is missing a string id")
    if kind in LEAF_KINDS and d.get("children"):
        raise StructuralError(f"leaf {kind!r} ({node_id}) has children")
    offset = d.get("offset")
    if offset is not None:
        if not isinstance(offset, (list, tuple)) or not all(
                isinstance(v, (int, float)) for v in offset):
            raise TreeParseError(f"bad offset on {node_id}: {offset!r}")
        arity = OFFSET_ARITY.get(kind)
        if arity is not None and kind != "robot_near?" and len(offset) != arity:
            raise TreeParseError(
                f"{kind} expects a {arity}-vector offset, got {len(offset)} on {node_id}")
    params = NodeParams(
        target_object=d.get("target"),
        relative_object=d.get("relative"),
        offset=tuple(offset) if offset is not None else None,
        angle=d.get("angle"),
    )
    children = tuple(node_from_dict(c) for c in d.get("children", ()))
    return Node(kind, node_id, params=params, children=children,
                locked=bool(d.get("locked", False)))


def tree_from_dict(d: dict) -> BehaviorTree:
    return BehaviorTree(node_from_dict(d))


def deserialize(text: str) -> BehaviorTree:
    if not text or not text.strip():
        raise TreeParseError("empty tree text")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeParseError(f"invalid JSON: {exc}") from exc
    return tree_from_dict(data)


# ---------------------------------------------------------------------------
# functional edits (trees are immutable; these rebuild the edited path)

def rewrite(tree: BehaviorTree, fn: Callable[[Node], Optional[Node]]) -> BehaviorTree:
    """Bottom-up rewrite. ``fn`` returns a replacement node, or None to
    delete the node (deleting the root is an error).
    """
    def walk(node: Node) -> Optional[Node]:
        if node.children:
            kids = tuple(c for c in (walk(ch) for ch in node.children) if c is not None)
            node = replace(node, children=kids)
        return fn(node)

    new_root = walk(tree.root)
    if new_root is None:
        raise StructuralError("cannot delete the root node")
    return BehaviorTree(new_root)


def replace_node(tree: BehaviorTree, node_id: str, new_node: Node) -> BehaviorTree:
    return rewrite(tree, lambda n: new_node if n.node_id == node_id else n)


def remove_node(tree: BehaviorTree, node_id: str) -> BehaviorTree:
    return rewrite(tree, lambda n: None if n.node_id == node_id else n)


def insert_child(tree: BehaviorTree, parent_id: str, index: int, child: Node) -> BehaviorTree:
    def fn(n: Node) -> Node:
        if n.node_id != parent_id:
            return n
        if not n.is_control:
            raise StructuralError(f"cannot insert under leaf {parent_id}")
        kids = list(n.children)
        kids.insert(index, child)
        return replace(n, children=tuple(kids))
    return rewrite(tree, fn)


def set_locked(tree: BehaviorTree, node_id: str, locked: bool) -> BehaviorTree:
    return rewrite(tree, lambda n: replace(n, locked=locked)
                   if n.node_id == node_id else n)


def trees_equal(a: BehaviorTree, b: BehaviorTree, ignore_ids: bool = False) -> bool:
    def key(node: Node):
        base = (node.kind, node.params.rounded_key(), node.locked,
                tuple(key(c) for c in node.children))
        return base if ignore_ids else (node.node_id,) + base
    return key(a.root) == key(b.root)
