"""HTTP + server-sent-events API for the editor front end, with
timestamped per-session experiment logging.

Every state-changing endpoint appends exactly one log record; sessions
become read-only once their clock (started on first goal-editor entry)
runs out.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .assistant import (AssistantSession, Budget, Suggestion, VariantConfig,
                        VariantError, suggestion_payload)
from .llm import GoalParseError, HttpCompletionProvider, scripted_provider
from .scoring import MAX_TICKS, ScoreWeights, TickEvents, normalize, tick_score
from .tree import (BehaviorTree, StructuralError, TreeParseError, metrics,
                   preorder_index, set_locked, tick, tree_from_dict,
                   tree_to_dict, validate)
from .world import (MotionDelta, World, load_scenario, run_episode,
                    scenario_names)

API = "/api/v1"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details=None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details


@dataclass
class LogRecord:
    ts_ms: int
    session_id: str
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "session_id": self.session_id,
                "kind": self.kind, "payload": self.payload}


class SessionLog:
    """Append-only event log with millisecond timestamps that never
    decrease; mirrored to one JSONL file per session when a directory is
    configured.
    """

    def __init__(self, session_id: str, directory: Optional[Path]):
        self.session_id = session_id
        self.records: list[LogRecord] = []
        self._start = time.monotonic_ns()
        self._last_ms = 0
        self._lock = threading.Lock()
        self._path = directory / f"{session_id}.jsonl" if directory else None

    def append(self, kind: str, payload: dict) -> LogRecord:
        with self._lock:
            ms = (time.monotonic_ns() - self._start) // 1_000_000
            ms = max(ms, self._last_ms)
            self._last_ms = ms
            record = LogRecord(int(ms), self.session_id, kind, payload)
            self.records.append(record)
            if self._path is not None:
                with open(self._path, "a") as fh:
                    fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        return record


@dataclass
class Stepper:
    """Tick-by-tick simulation state for the playback window."""
    tree_json: str
    tree: BehaviorTree
    world: World
    last_running: Optional[int] = None
    tick_count: int = 0


@dataclass
class LiveSession:
    session_id: str
    assistant: AssistantSession
    log: SessionLog
    editor_tree: Optional[BehaviorTree] = None
    saved_trees: dict = field(default_factory=dict)
    stepper: Optional[Stepper] = None


@dataclass
class ServiceConfig:
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    provider_kind: str = "mock"          # "mock" | "remote"
    provider_base_url: str = ""
    provider_model: str = ""
    logs_dir: Optional[str] = None
    clock_seconds: float = 900.0
    default_budget_evals: Optional[int] = None
    frontend_dir: Optional[str] = None


class SeedRequest(BaseModel):
    tree: Optional[dict] = None
    synchronous: bool = False


class TreeRequest(BaseModel):
    tree: dict


class GoalTextRequest(BaseModel):
    text: str


class LockRequest(BaseModel):
    node_id: str
    locked: bool


class StructureRequest(BaseModel):
    allowed: bool


class TabRequest(BaseModel):
    tab: str


class StepRequest(BaseModel):
    tree: Optional[dict] = None
    reset: bool = False


class CreateSessionRequest(BaseModel):
    scenario: str
    variant: str = "FULL"
    rng_seed: int = 0
    budget_evals: Optional[int] = None
    clock_seconds: Optional[float] = None


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="btstudio", version="0.1.0")
    sessions: dict[str, LiveSession] = {}
    counter = {"n": 0}
    logs_dir = Path(config.logs_dir) if config.logs_dir else None
    if logs_dir:
        logs_dir.mkdir(parents=True, exist_ok=True)

    def make_provider():
        if config.provider_kind == "remote":
            return HttpCompletionProvider(config.provider_base_url,
                                          config.provider_model)
        return scripted_provider()

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={
            "error": {"code": exc.code, "message": exc.message,
                      "details": exc.details}})

    def get_session(session_id: str) -> LiveSession:
        if session_id not in sessions:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return sessions[session_id]

    def require_live(live: LiveSession) -> None:
        if live.assistant.expired():
            raise ApiError(409, "session_expired",
                           "the session clock has run out; session is read-only")

    def parse_tree(data: Optional[dict]) -> BehaviorTree:
        if not data:
            raise ApiError(422, "invalid_tree", "missing tree")
        try:
            return tree_from_dict(data)
        except (TreeParseError, StructuralError) as exc:
            raise ApiError(422, "invalid_tree", str(exc))

    def session_info(live: LiveSession) -> dict:
        a = live.assistant
        best = a.best_suggestion()
        return {
            "session_id": live.session_id,
            "scenario": a.world.scenario_id,
            "variant": a.variant.name,
            "remaining_seconds": a.remaining_seconds(),
            "expired": a.expired(),
            "structure_allowed": a.structure_allowed,
            "assistant_enabled": a.variant.assistant_enabled,
            "llm_enabled": a.variant.llm_enabled,
            "best_suggestion": suggestion_payload(best) if best else None,
            "counters": {"provider_calls": a.counters.provider_calls,
                         "plan_calls": a.counters.plan_calls,
                         "evaluations": a.counters.evaluations},
        }

    # -- scenarios -------------------------------------------------------------

    @app.get(API + "/scenarios")
    def list_scenarios():
        out = []
        for name in scenario_names():
            world = load_scenario(name)
            out.append({"name": name, "description": world.description,
                        "allowed_nodes": list(world.allowed_nodes)})
        return out

    @app.get(API + "/scenarios/{name}")
    def get_scenario(name: str):
        try:
            world = load_scenario(name)
        except Exception as exc:
            raise ApiError(404, "unknown_scenario", str(exc))
        return {
            "name": name,
            "description": world.description,
            "goal_text": world.goal_text,
            "allowed_nodes": list(world.allowed_nodes),
            "objects": {oid: o.to_dict() for oid, o in world.objects.items()},
            "robot": world.robot.to_dict(),
            "goals": [g.to_dict() for g in world.goals],
        }

    # -- sessions ---------------------------------------------------------------

    @app.post(API + "/sessions")
    def create_session(body: CreateSessionRequest):
        if body.scenario not in scenario_names():
            raise ApiError(404, "unknown_scenario",
                           f"no scenario {body.scenario!r}")
        try:
            variant = VariantConfig.preset(body.variant)
        except VariantError as exc:
            raise ApiError(400, "unknown_variant", str(exc))
        counter["n"] += 1
        session_id = f"s{counter['n']:04d}"
        clock = body.clock_seconds if body.clock_seconds is not None \
            else config.clock_seconds
        evals = body.budget_evals if body.budget_evals is not None \
            else config.default_budget_evals
        budget = Budget(max_evals=evals,
                        max_seconds=None if evals is not None else clock)
        assistant = AssistantSession(
            body.scenario, variant, provider=make_provider(),
            weights=config.weights, rng_seed=body.rng_seed, budget=budget,
            clock_seconds=clock)
        live = LiveSession(session_id=session_id, assistant=assistant,
                           log=SessionLog(session_id, logs_dir))
        sessions[session_id] = live
        live.log.append("session_created",
                        {"scenario": body.scenario, "variant": variant.name})
        return session_info(live)

    @app.get(API + "/sessions/{session_id}")
    def read_session(session_id: str):
        return session_info(get_session(session_id))

    @app.post(API + "/sessions/{session_id}/enter-tab")
    def enter_tab(session_id: str, body: TabRequest):
        live = get_session(session_id)
        require_live(live)
        if body.tab == "goal_editor":
            live.assistant.start_clock()
        live.log.append("tab_change", {"tab": body.tab})
        return session_info(live)

    # -- trees -------------------------------------------------------------------

    @app.post(API + "/validate")
    def validate_tree(body: TreeRequest):
        tree = parse_tree(body.tree)
        return {"violations": [{"kind": v.kind, "node_ids": list(v.node_ids)}
                               for v in validate(tree)],
                "metrics": metrics(tree).__dict__}

    @app.post(API + "/sessions/{session_id}/tree")
    def put_editor_tree(session_id: str, body: TreeRequest):
        live = get_session(session_id)
        require_live(live)
        live.editor_tree = parse_tree(body.tree)
        live.log.append("edit", {"size": metrics(live.editor_tree).node_count})
        return {"violations": [{"kind": v.kind, "node_ids": list(v.node_ids)}
                               for v in validate(live.editor_tree)]}

    @app.post(API + "/sessions/{session_id}/lock")
    def lock_node(session_id: str, body: LockRequest):
        live = get_session(session_id)
        require_live(live)
        if live.editor_tree is None:
            raise ApiError(400, "no_tree", "no editor tree to lock nodes in")
        try:
            live.editor_tree.node(body.node_id)
        except KeyError:
            raise ApiError(404, "unknown_node", f"no node {body.node_id!r}")
        live.editor_tree = set_locked(live.editor_tree, body.node_id, body.locked)
        live.log.append("lock", {"node_id": body.node_id, "locked": body.locked})
        return {"tree": tree_to_dict(live.editor_tree)}

    @app.post(API + "/sessions/{session_id}/trees/{name}")
    def save_tree(session_id: str, name: str, body: TreeRequest):
        live = get_session(session_id)
        require_live(live)
        live.saved_trees[name] = parse_tree(body.tree)
        live.log.append("save_tree", {"name": name})
        return {"saved": name}

    @app.get(API + "/sessions/{session_id}/trees")
    def list_trees(session_id: str):
        return {"names": sorted(get_session(session_id).saved_trees)}

    @app.get(API + "/sessions/{session_id}/trees/{name}")
    def load_tree(session_id: str, name: str):
        live = get_session(session_id)
        if name not in live.saved_trees:
            raise ApiError(404, "unknown_tree", f"no saved tree {name!r}")
        return {"tree": tree_to_dict(live.saved_trees[name])}

    # -- goal text ------------------------------------------------------------------

    @app.post(API + "/sessions/{session_id}/goal-text")
    def goal_text(session_id: str, body: GoalTextRequest):
        live = get_session(session_id)
        require_live(live)
        a = live.assistant
        if not a.variant.llm_enabled or not a.variant.assistant_enabled:
            raise ApiError(403, "variant_disabled",
                           f"goal text parsing is not available in {a.variant.name}")
        a.start_clock()
        from .llm import goal_from_text
        try:
            tree = goal_from_text(body.text, a.world, a.provider)
        except GoalParseError as exc:
            live.log.append("goal_text", {"text": body.text, "error": str(exc)})
            raise ApiError(422, "goal_parse_error", str(exc),
                           details={"raw_response": exc.raw_response})
        a.goal_tree = tree
        live.log.append("goal_text", {"text": body.text,
                                      "conditions": len(tree.root.children)})
        return {"tree": tree_to_dict(tree)}

    # -- simulation --------------------------------------------------------------------

    @app.post(API + "/sessions/{session_id}/simulate")
    def simulate(session_id: str, body: TreeRequest):
        live = get_session(session_id)
        tree = parse_tree(body.tree)
        a = live.assistant
        result = run_episode(tree, a.world, weights=a.weights)
        baseline_raw, best_known = a.baselines
        normalized = None
        if best_known is not None and best_known > baseline_raw:
            normalized = normalize(result.raw_score, baseline_raw, best_known)
        live.log.append("simulate", {
            "size": metrics(tree).node_count,
            "raw_score": result.raw_score,
            "normalized_score": normalized,
            "solved": result.solved,
            "ticks": result.ticks_executed,
        })
        payload = result.to_dict()
        payload["normalized_score"] = normalized
        return payload

    @app.post(API + "/sessions/{session_id}/step")
    def step(session_id: str, body: StepRequest):
        live = get_session(session_id)
        a = live.assistant
        tree = parse_tree(body.tree) if body.tree else \
            (live.stepper.tree if live.stepper else None)
        if tree is None:
            raise ApiError(400, "no_tree", "no tree to step")
        tree_json = json.dumps(tree_to_dict(tree), sort_keys=True)
        if body.reset or live.stepper is None or live.stepper.tree_json != tree_json:
            live.stepper = Stepper(tree_json=tree_json, tree=tree,
                                   world=a.world.clone())
            live.log.append("simulate", {"step": "reset"})
            if body.reset:
                return {"tick_index": 0, "statuses": {},
                        "world": live.stepper.world.state_dict(),
                        "root_status": None, "solved": False}
        stepper = live.stepper
        stepper.world.begin_tick()
        result = tick(tree, stepper.world)
        stepper.tick_count += 1
        backtrack = 0
        if result.running_index is not None:
            if stepper.last_running is not None \
                    and result.running_index < stepper.last_running:
                backtrack = 1
            stepper.last_running = result.running_index
        events = TickEvents(
            timeout=int(stepper.tick_count == MAX_TICKS
                        and result.root_status.value == "RUNNING"),
            tree_failure=int(result.root_status.value == "FAILURE"),
            failed_actions=result.failed_actions,
            backtrack=backtrack,
            holding=int(stepper.world.robot.held_object is not None),
        )
        delta = MotionDelta(stepper.world.tick_arm_dist,
                            stepper.world.tick_base_dist)
        score = tick_score(stepper.world, metrics(tree), events, delta,
                           a.world.goals, a.weights)
        solved = all(g.met(stepper.world, a.weights) for g in a.world.goals)
        live.log.append("simulate", {"step": stepper.tick_count,
                                     "root_status": result.root_status.value})
        return {
            "tick_index": stepper.tick_count,
            "root_status": result.root_status.value,
            "statuses": {nid: s.value for nid, s in result.statuses.items()},
            "world": stepper.world.state_dict(),
            "score": {"goal": score.goal, "tree": score.tree,
                      "energy": score.energy, "total": score.total},
            "commands": [c.to_dict() for c in result.issued],
            "solved": solved,
        }

    # -- assistant ----------------------------------------------------------------------

    @app.post(API + "/sessions/{session_id}/seed", status_code=202)
    def send_seed(session_id: str, body: SeedRequest):
        live = get_session(session_id)
        require_live(live)
        a = live.assistant
        tree = parse_tree(body.tree) if body.tree else live.editor_tree
        if tree is None:
            raise ApiError(400, "no_tree", "no seed tree given or stored")
        if not a.variant.assistant_enabled:
            raise ApiError(403, "variant_disabled",
                           f"variant {a.variant.name} has no AI assistant")
        violations = validate(tree)
        if violations:
            raise ApiError(422, "invalid_tree",
                           "seed tree violates structural constraints",
                           details=[{"kind": v.kind, "node_ids": list(v.node_ids)}
                                    for v in violations])
        a.submit_seed(tree, synchronous=body.synchronous)
        live.log.append("send_seed", {"size": metrics(tree).node_count})
        return {"accepted": True}

    @app.post(API + "/sessions/{session_id}/structure")
    def toggle_structure(session_id: str, body: StructureRequest):
        live = get_session(session_id)
        require_live(live)
        try:
            live.assistant.toggle_structure(body.allowed)
        except VariantError as exc:
            raise ApiError(403, "variant_disabled", str(exc))
        live.log.append("toggle_structure", {"allowed": body.allowed})
        return {"structure_allowed": live.assistant.structure_allowed}

    @app.get(API + "/sessions/{session_id}/suggestion")
    def best_suggestion(session_id: str):
        live = get_session(session_id)
        best = live.assistant.best_suggestion()
        if best is None:
            raise ApiError(404, "no_suggestion", "no suggestion yet")
        return suggestion_payload(best)

    @app.post(API + "/sessions/{session_id}/load-best")
    def load_best(session_id: str):
        live = get_session(session_id)
        require_live(live)
        best = live.assistant.best_suggestion()
        if best is None:
            raise ApiError(404, "no_suggestion", "no suggestion yet")
        live.editor_tree = best.tree
        live.log.append("load_suggestion", {"raw_score": best.raw_score,
                                            "size": best.size})
        return {"tree": tree_to_dict(best.tree)}

    @app.get(API + "/sessions/{session_id}/events")
    def events(session_id: str, max_events: int = 0, timeout: float = 30.0,
               replay: bool = True):
        live = get_session(session_id)
        q = live.assistant.subscribe(replay=replay)

        def stream():
            sent = 0
            deadline = time.monotonic() + timeout
            try:
                while max_events <= 0 or sent < max_events:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    try:
                        event = q.get(timeout=min(remaining, 1.0))
                    except queue.Empty:
                        yield ": heartbeat\n\n"
                        continue
                    yield (f"event: {event.kind}\n"
                           f"data: {json.dumps(event.payload, sort_keys=True)}\n\n")
                    sent += 1
            finally:
                live.assistant.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get(API + "/sessions/{session_id}/log")
    def export_log(session_id: str):
        live = get_session(session_id)
        text = "\n".join(json.dumps(r.to_dict(), sort_keys=True)
                         for r in live.log.records)
        return PlainTextResponse(text, media_type="application/x-ndjson")

    if config.frontend_dir:
        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True),
                  name="frontend")

    return app
