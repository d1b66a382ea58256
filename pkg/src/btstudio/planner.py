"""Back-chaining task planner: expands unmet goal conditions into
Fallback(condition, Sequence(preconditions..., achieving action)) subtrees,
recursively, then verifies the result by running one simulated episode.

The action domain lives in a declarative file (data/domain.json) so new
behaviors extend the planner without code changes. Failures are returned
as data, carrying enough context for the LLM repair loop to suggest
missing preconditions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .tree import (FALLBACK, SEQUENCE, BehaviorTree, Node, NodeParams,
                   NodeStatus, fallback as make_fallback, preorder, seq as make_seq,
                   tick, validate)
from .world import World, _data_text

MAX_EXPANSION_DEPTH = 10
VERIFY_TICKS = 200


@dataclass(frozen=True)
class ConditionTemplate:
    cond_kind: str
    params: dict

    def instantiate(self, source: NodeParams, standoff: tuple, idgen) -> Node:
        return Node(self.cond_kind, idgen(),
                    params=_bind_params(self.params, source, standoff))


@dataclass(frozen=True)
class ActionTemplate:
    act_kind: str
    achieves: str                       # condition kind its postconditions cover
    params: dict
    preconditions: tuple[ConditionTemplate, ...]

    def instantiate(self, source: NodeParams, standoff: tuple, idgen) -> Node:
        return Node(self.act_kind, idgen(),
                    params=_bind_params(self.params, source, standoff))


def _bind_params(spec: dict, source: NodeParams, standoff: tuple) -> NodeParams:
    def value(v):
        if v == "$target":
            return source.target_object
        if v == "$relative":
            return source.relative_object
        if v == "$offset":
            return source.offset
        if v == "$angle":
            return source.angle if source.angle is not None else 0.0
        if v == "$standoff":
            off = source.offset or (0.0, 0.0)
            return (off[0] + standoff[0], off[1] + standoff[1])
        return v

    resolved = {k: value(v) for k, v in spec.items()}
    offset = resolved.get("offset")
    return NodeParams(
        target_object=resolved.get("target_object"),
        relative_object=resolved.get("relative_object"),
        offset=tuple(offset) if offset is not None else None,
        angle=resolved.get("angle"),
    )


@dataclass(frozen=True)
class Domain:
    templates: tuple[ActionTemplate, ...]
    standoff: tuple[float, float] = (-0.5, 0.0)

    def provider_for(self, cond_kind: str,
                     allowed: Optional[tuple[str, ...]] = None) -> Optional[ActionTemplate]:
        for t in self.templates:
            if t.achieves == cond_kind and (allowed is None or t.act_kind in allowed):
                return t
        return None


def domain_table() -> Domain:
    raw = json.loads(_data_text("domain.json"))
    templates = tuple(
        ActionTemplate(
            act_kind=t["act_kind"],
            achieves=t["achieves"],
            params=t["params"],
            preconditions=tuple(ConditionTemplate(p["cond_kind"], p["params"])
                                for p in t.get("pre", ())),
        )
        for t in raw["templates"])
    return Domain(templates=templates, standoff=tuple(raw.get("standoff", (-0.5, 0.0))))


# failure reasons
NO_PROVIDER = "no_provider"
DEPTH_CAP = "depth_cap"
BLOCKED_PICK = "blocked_pick"
WRONG_HELD = "wrong_held"
NOT_HOLDING = "not_holding"
OUT_OF_REACH = "out_of_reach"
NOT_CONTAINER = "not_container"
UNSOLVED = "unsolved"


@dataclass
class PlanFailure:
    reason: str
    scenario_id: str
    act_kind: Optional[str] = None
    action_params: Optional[NodeParams] = None
    action_node_id: Optional[str] = None
    blocker: Optional[str] = None        # object preventing a blocked pick
    world: Optional[World] = None        # snapshot at the failing tick
    world_summary: str = ""
    partial_tree: Optional[BehaviorTree] = None  # symbolic expansion, if any
    detail: str = ""

    def describe(self) -> str:
        bits = [f"reason: {self.reason}"]
        if self.act_kind:
            p = self.action_params
            args = p.target_object if p else "?"
            if p and p.relative_object:
                args += f", {p.relative_object}"
            bits.append(f"failed action: {self.act_kind}({args})")
        if self.blocker:
            bits.append(f"blocked by: {self.blocker}")
        if self.detail:
            bits.append(self.detail)
        return "; ".join(bits)


PlanOutcome = Union[BehaviorTree, PlanFailure]


class _Expansion(Exception):
    def __init__(self, failure: PlanFailure):
        self.failure = failure


def plan(goal_tree: BehaviorTree, world: World,
         domain: Optional[Domain] = None,
         extra_preconditions: Optional[dict] = None,
         verify: bool = True,
         max_depth: int = MAX_EXPANSION_DEPTH) -> PlanOutcome:
    """Expand every unmet condition leaf of ``goal_tree`` against ``world``.

    ``extra_preconditions`` maps (act_kind, target_object) to condition
    nodes the repair loop has added; they are expanded in front of an
    action's own preconditions. Subtrees that are already guarded (a
    Fallback whose first child is a condition) are left alone, which makes
    a successful plan a fixed point. Locked nodes are never rewritten,
    only wrapped.
    """
    domain = domain or domain_table()
    extras = extra_preconditions or {}
    counter = [0]
    used_ids = set(goal_tree.node_ids())

    def idgen() -> str:
        while True:
            counter[0] += 1
            nid = f"p{counter[0]}"
            if nid not in used_ids:
                used_ids.add(nid)
                return nid

    def expand_condition(cond: Node, depth: int) -> Node:
        if world.eval_condition(cond.kind, cond.params):
            return cond
        if depth <= 0:
            raise _Expansion(PlanFailure(
                DEPTH_CAP, world.scenario_id,
                detail=f"expansion of {cond.kind} exceeded {max_depth} levels"))
        template = domain.provider_for(cond.kind, world.allowed_nodes or None)
        if template is None:
            raise _Expansion(PlanFailure(
                NO_PROVIDER, world.scenario_id,
                detail=f"no available action achieves {cond.kind}"))
        action = template.instantiate(cond.params, domain.standoff, idgen)
        pre_nodes = list(extras.get((action.kind, action.params.target_object), ()))
        pre_nodes = [replace(p, node_id=idgen()) for p in pre_nodes]
        for ct in template.preconditions:
            pre_nodes.append(ct.instantiate(cond.params, domain.standoff, idgen))
        expanded = [expand_condition(p, depth - 1) for p in pre_nodes]
        if not expanded:
            return make_fallback(cond, action, node_id=idgen())
        return make_fallback(cond, make_seq(*expanded, action, node_id=idgen()),
                             node_id=idgen())

    def expand(node: Node, depth: int) -> Node:
        if node.is_action:
            return node
        if node.is_control:
            kids = node.children
            if (node.kind == FALLBACK and len(kids) >= 2
                    and kids[0].is_condition):
                # already back-chained: keep the guard, recurse into the rest
                new = (kids[0],) + tuple(expand(c, depth) for c in kids[1:])
            else:
                new = tuple(expand(c, depth) for c in kids)
            return node if new == kids else replace(node, children=new)
        return expand_condition(node, depth)

    try:
        expanded_root = expand(goal_tree.root, max_depth)
    except _Expansion as exc:
        return exc.failure

    result = BehaviorTree(expanded_root)
    violations = validate(result)
    if violations:  # should be unreachable; expansion preserves the constraints
        raise AssertionError(f"planner produced invalid tree: {violations}")

    if verify:
        failure = _verify(result, world)
        if failure is not None:
            failure.partial_tree = result
            return failure
    return result


def _verify(tree: BehaviorTree, world: World) -> Optional[PlanFailure]:
    """Run one episode; success means the root reached SUCCESS. On failure,
    report the first action that returned FAILURE with a world snapshot.
    """
    w = world.clone()
    nodes = {n.node_id: n for n in preorder(tree.root)}
    first_failure: Optional[PlanFailure] = None
    for _ in range(VERIFY_TICKS):
        w.begin_tick()
        result = tick(tree, w)
        if first_failure is None:
            for node in preorder(tree.root):
                if node.is_action and result.statuses[node.node_id] is NodeStatus.FAILURE:
                    first_failure = _diagnose(node, w)
                    break
        if result.root_status is NodeStatus.SUCCESS:
            return None
        if result.root_status is NodeStatus.FAILURE:
            break
    if first_failure is not None:
        return first_failure
    return PlanFailure(UNSOLVED, world.scenario_id, world=w.clone(),
                       world_summary=w.summary(),
                       detail="episode ended without reaching the goal")


def _diagnose(node: Node, w: World) -> PlanFailure:
    params = node.params
    reason = UNSOLVED
    blocker = None
    if node.kind == "grasp!":
        target = params.target_object
        if w.robot.held_object not in (None, target):
            reason = WRONG_HELD
            blocker = w.robot.held_object
        else:
            on_top = w.supports_something(target)
            if on_top is not None:
                reason = BLOCKED_PICK
                blocker = on_top
            elif not w.near(w.obj(target).pose.position):
                reason = OUT_OF_REACH
            elif not w.obj(target).movable:
                reason = NOT_CONTAINER if w.obj(target).is_container else UNSOLVED
    elif node.kind in ("place!", "place_in!"):
        if w.robot.held_object != params.target_object:
            reason = NOT_HOLDING
        elif (node.kind == "place_in!"
                and not w.obj(params.relative_object).is_container):
            reason = NOT_CONTAINER
        else:
            reason = OUT_OF_REACH
    return PlanFailure(
        reason=reason,
        scenario_id=w.scenario_id,
        act_kind=node.kind,
        action_params=params,
        action_node_id=node.node_id,
        blocker=blocker,
        world=w.clone(),
        world_summary=w.summary(),
    )


def lookup(domain: Domain, cond_kind: str) -> Optional[str]:
    """Action kind whose postconditions cover ``cond_kind``."""
    template = domain.provider_for(cond_kind)
    return template.act_kind if template else None
