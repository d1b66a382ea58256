"""Pluggable text-completion provider plus the two uses it serves:
natural-language goal parsing and missing-precondition repair for planner
failures. Ships a fully deterministic scripted mock; no test or offline
run needs network access.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import httpx

from .planner import PlanFailure
from .tree import (CONDITION_KINDS, BehaviorTree, Node, NodeParams, seq,
                   validate)
from .world import World, _data_text, load_scenario, scenario_names


class CompletionProvider(Protocol):
    def complete(self, prompt: str, temperature: float = 0.0) -> str: ...


class ProviderError(RuntimeError):
    """Transport or provider-side failure."""


class GoalParseError(ValueError):
    def __init__(self, message: str, raw_response: str = ""):
        super().__init__(message)
        self.raw_response = raw_response


# ---------------------------------------------------------------------------
# providers

class HttpCompletionProvider:
    """Minimal remote text-completion client.

    POSTs {"model", "prompt", "temperature"} to ``base_url`` and expects
    {"text": ...} back. Credentials come from an environment variable and
    are redacted from anything passed to ``log_hook``.
    """

    def __init__(self, base_url: str, model: str,
                 api_key_env: str = "BTSTUDIO_LLM_API_KEY",
                 timeout: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None,
                 log_hook: Optional[Callable[[dict], None]] = None):
        self.base_url = base_url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.log_hook = log_hook
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": self.model, "prompt": prompt, "temperature": temperature}
        try:
            response = self._client.post(self.base_url, json=body, headers=headers)
            response.raise_for_status()
            text = response.json()["text"]
        except Exception as exc:
            if self.log_hook:
                self.log_hook({"kind": "provider_error", "error": str(exc)})
            raise ProviderError(str(exc)) from exc
        if self.log_hook:
            self.log_hook({"kind": "provider_call", "model": self.model,
                           "prompt": prompt, "response": text,
                           "authorization": "<redacted>" if key else None})
        return text


class ScriptedMockProvider:
    """Deterministic canned-response provider. Rules are checked in order;
    a rule fires when every required substring appears in the prompt.
    """

    def __init__(self, rules: Sequence[tuple[tuple[str, ...], str]],
                 default: str = "no suggestion"):
        self.rules = list(rules)
        self.default = default
        self.call_count = 0
        self.call_log: list[str] = []

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        self.call_count += 1
        self.call_log.append(prompt)
        for needles, response in self.rules:
            if all(n in prompt for n in needles):
                return response
        return self.default


def render_conditions_block(lines: Sequence[str]) -> str:
    return "```conditions\n" + "\n".join(lines) + "\n```"


def _goal_condition_line(goal) -> str:
    if goal.kind == "containment":
        return f"in? target={goal.target} relative={goal.relative}"
    off = ",".join(repr(v) for v in goal.offset)
    return (f"at_pos? target={goal.target} relative={goal.relative} "
            f"offset={off} angle={goal.angle!r}")


def scripted_provider() -> ScriptedMockProvider:
    """Mock covering every scenario's benchmark goal text and the known
    repair cases, so the whole pipeline runs offline.
    """
    rules: list[tuple[tuple[str, ...], str]] = []
    for name in scenario_names():
        world = load_scenario(name)
        block = render_conditions_block([_goal_condition_line(g) for g in world.goals])
        rules.append(((f"Scenario: {name}", f"Task description: {world.goal_text}"), block))
    # short phrasing used in docs and tests
    rules.append((("Scenario: cubes_bowl", "Task description: put the green cube in the bowl"),
                  render_conditions_block(["in? target=green_cube relative=bowl"])))
    # a grasp blocked by the green cube resting on the target: ask for the
    # blocker to be parked on a free patch of the table first
    rules.append((("Scenario: cubes_bowl", "Failed action: grasp!", "blocked by: green_cube"),
                  render_conditions_block(
                      ["at_pos? target=green_cube relative=table offset=-0.5,-0.8,0.025 angle=0.0"])
                  + "\nthe blocking cube needs a spot of its own before the grasp"))
    return ScriptedMockProvider(rules)


# ---------------------------------------------------------------------------
# response parsing

_BLOCK_RE = re.compile(r"```conditions\s*\n(.*?)```", re.DOTALL)
# accept "at pos?", "at-pos?", missing "?", any case
_KIND_ALIASES: dict[str, str] = {}
for _k in CONDITION_KINDS:
    for variant in (_k, _k.replace("_", " "), _k.replace("_", "-"), _k.rstrip("?")):
        _KIND_ALIASES[variant.lower()] = _k
        _KIND_ALIASES[variant.lower().rstrip("?")] = _k


def _split_kind(line: str) -> tuple[Optional[str], str]:
    low = line.lower()
    for alias in sorted(_KIND_ALIASES, key=len, reverse=True):
        if low.startswith(alias) and (len(line) == len(alias)
                                      or line[len(alias)].isspace()):
            return _KIND_ALIASES[alias], line[len(alias):]
    return None, line


def _parse_condition_line(line: str, world: World, idgen) -> Node:
    kind, rest = _split_kind(line)
    if kind is None:
        raise GoalParseError(f"unknown condition kind in {line.split()[0]!r}")
    tokens = [""] + rest.split()
    if world.allowed_nodes and kind not in world.allowed_nodes:
        raise GoalParseError(f"{kind} is not available in scenario {world.scenario_id}")
    fields: dict[str, str] = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if sep:
            fields[key.strip().lower()] = value.strip()
    target = fields.get("target")
    if target not in world.objects:
        raise GoalParseError(
            f"unknown object {target!r}; valid ids: {', '.join(sorted(world.objects))}")
    relative = fields.get("relative")
    if kind in ("at_pos?", "in?"):
        if relative not in world.objects:
            raise GoalParseError(
                f"{kind} needs a valid relative object; valid ids: "
                f"{', '.join(sorted(world.objects))}")
        if kind == "in?" and not world.objects[relative].is_container:
            raise GoalParseError(
                f"{relative!r} is not a container; containers: "
                f"{', '.join(sorted(world.container_ids()))}")
    offset = None
    if "offset" in fields:
        try:
            offset = tuple(float(v) for v in fields["offset"].split(","))
        except ValueError as exc:
            raise GoalParseError(f"bad offset {fields['offset']!r}") from exc
    if kind == "at_pos?":
        offset = offset or (0.0, 0.0, 0.0)
        if len(offset) == 2:  # tolerate a missing z
            offset = (offset[0], offset[1], 0.0)
        if len(offset) != 3:
            raise GoalParseError(f"at_pos? offset needs 3 values, got {len(offset)}")
    elif kind == "robot_at?":
        offset = offset or (0.0, 0.0)
        offset = offset[:2]
    elif kind not in ("robot_near?",):
        offset = None
    try:
        angle = float(fields.get("angle", 0.0))
    except ValueError as exc:
        raise GoalParseError(f"bad angle {fields.get('angle')!r}") from exc
    params = NodeParams(target_object=target,
                        relative_object=relative if kind in ("at_pos?", "in?") else None,
                        offset=offset,
                        angle=angle if kind in ("at_pos?", "robot_at?") else None)
    return Node(kind, idgen(), params=params)


def parse_condition_block(text: str, world: World, prefix: str = "g") -> list[Node]:
    match = _BLOCK_RE.search(text)
    if not match:
        raise GoalParseError("no ```conditions``` block in response", raw_response=text)
    counter = [0]

    def idgen() -> str:
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    nodes = []
    for line in match.group(1).splitlines():
        line = line.strip()
        if line:
            nodes.append(_parse_condition_line(line, world, idgen))
    if not nodes:
        raise GoalParseError("empty conditions block", raw_response=text)
    return nodes


# ---------------------------------------------------------------------------
# goal parsing

def goal_from_text(text: str, world: World, provider: CompletionProvider) -> BehaviorTree:
    """Natural-language goal -> Sequence of condition nodes. One retry with
    the parse error appended, then the error surfaces with the raw response.
    """
    if not text or not text.strip():
        raise GoalParseError("empty goal description")
    template = _data_text("prompts/goal.txt")
    prompt = template.format(
        scenario_id=world.scenario_id,
        movables=", ".join(sorted(world.movable_ids())),
        objects=", ".join(sorted(world.objects)),
        containers=", ".join(sorted(world.container_ids())) or "none",
        conditions=", ".join(k for k in CONDITION_KINDS
                             if not world.allowed_nodes or k in world.allowed_nodes),
        text=text.strip(),
    )
    last_error: Optional[GoalParseError] = None
    for attempt in range(2):
        ask = prompt if attempt == 0 else (
            f"{prompt}\n\nYour previous response could not be used: {last_error}. "
            "Answer again with one fenced conditions block only.")
        response = provider.complete(ask, temperature=0.0)
        try:
            nodes = parse_condition_block(response, world)
        except GoalParseError as exc:
            last_error = GoalParseError(str(exc), raw_response=response)
            continue
        tree = BehaviorTree(seq(*nodes, node_id="g0"))
        bad = validate(tree)
        if bad:
            last_error = GoalParseError(f"conditions violate tree constraints: {bad}",
                                        raw_response=response)
            continue
        return tree
    raise last_error


# ---------------------------------------------------------------------------
# plan-failure repair

@dataclass(frozen=True)
class RepairSuggestion:
    conditions: tuple[Node, ...]
    act_kind: str
    target_object: Optional[str]
    anchor_node_id: Optional[str]
    rationale: str = ""


@dataclass(frozen=True)
class Unresolved:
    reason: str


def repair_plan_failure(failure: PlanFailure, provider: CompletionProvider,
                        max_calls: int = 2) -> Union[RepairSuggestion, Unresolved]:
    """One repair query (plus at most one reprompt on a malformed answer).
    The planner loop re-runs with the suggestion merged into the action's
    preconditions.
    """
    if failure.world is None or failure.act_kind is None:
        return Unresolved(f"nothing to repair for {failure.reason}")
    world = failure.world
    p = failure.action_params
    extra = ""
    if p is not None and p.relative_object:
        extra = f" relative={p.relative_object}"
    blocked_line = (f"The action is blocked by: {failure.blocker} resting on "
                    f"{p.target_object}" if failure.blocker and p else "")
    template = _data_text("prompts/repair.txt")
    prompt = template.format(
        scenario_id=failure.scenario_id,
        act_kind=failure.act_kind,
        target=p.target_object if p else "?",
        extra=extra,
        reason=failure.reason,
        blocked_line=blocked_line,
        world_summary=failure.world_summary,
        conditions=", ".join(k for k in CONDITION_KINDS
                             if not world.allowed_nodes or k in world.allowed_nodes),
        objects=", ".join(sorted(world.objects)),
    )
    last_error = ""
    for attempt in range(max(1, max_calls)):
        ask = prompt if attempt == 0 else (
            f"{prompt}\n\nYour previous response could not be used: {last_error}. "
            "Answer again with one fenced conditions block only.")
        try:
            response = provider.complete(ask, temperature=0.0)
        except ProviderError as exc:
            return Unresolved(f"provider failure: {exc}")
        if response.strip().lower().startswith("no suggestion"):
            return Unresolved("provider had no suggestion")
        try:
            nodes = parse_condition_block(response, world, prefix="x")
        except GoalParseError as exc:
            last_error = str(exc)
            continue
        rationale = response[response.rfind("```") + 3:].strip()
        return RepairSuggestion(
            conditions=tuple(nodes),
            act_kind=failure.act_kind,
            target_object=p.target_object if p else None,
            anchor_node_id=failure.action_node_id,
            rationale=rationale,
        )
    return Unresolved(f"malformed suggestion: {last_error}")
