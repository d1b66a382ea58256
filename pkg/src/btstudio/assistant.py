"""Orchestrates the seed -> planner -> LLM-repair -> optimizer pipeline,
publishes strictly-improving suggestions, and enforces variant ablations.

The pipeline core is synchronous and deterministic under a fixed rng and
an evaluation-count budget; AssistantSession wraps it in one background
worker thread per session with queue-based suggestion events.
"""

from __future__ import annotations

import math
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .bo import Surrogate, apply_params, extract_params, observe, suggest_next
from .gp import (GpConfig, Individual, Palette, best_of, evaluate, evolve_step,
                 seed_population)
from .llm import Unresolved, repair_plan_failure, scripted_provider
from .planner import PlanFailure, plan
from .scoring import ScoreWeights, normalize
from .tree import BehaviorTree, metrics, trees_equal, validate
from .world import World, baseline_tree, load_best_known, load_scenario, run_episode

MAX_REPAIR_ROUNDS = 3
EMIT_THRESHOLD = 1e-9
BO_ITERS_PER_CYCLE = 2


class VariantError(ValueError):
    """Operation not available under the session's variant."""


@dataclass(frozen=True)
class VariantConfig:
    name: str
    planner_enabled: bool = True
    llm_enabled: bool = True
    gp_enabled: bool = True
    bo_enabled: bool = True
    assistant_enabled: bool = True

    @classmethod
    def preset(cls, name: str) -> "VariantConfig":
        key = name.upper()
        if key not in PRESETS:
            raise VariantError(
                f"unknown variant {name!r}; expected one of {sorted(PRESETS)}")
        return PRESETS[key]


PRESETS = {
    "FULL": VariantConfig("FULL"),
    "MANUAL_ONLY": VariantConfig("MANUAL_ONLY", planner_enabled=False,
                                 llm_enabled=False, gp_enabled=False,
                                 bo_enabled=False, assistant_enabled=False),
    "NO_BO": VariantConfig("NO_BO", bo_enabled=False),
    "NO_GP": VariantConfig("NO_GP", gp_enabled=False),
    "NO_LLM": VariantConfig("NO_LLM", llm_enabled=False),
    "NO_PLANNER": VariantConfig("NO_PLANNER", planner_enabled=False),
    # headless ablation: the full AI pipeline with no human edits
    "NO_HUMAN": VariantConfig("NO_HUMAN"),
}

VARIANT_NAMES = tuple(PRESETS)


@dataclass(frozen=True)
class Budget:
    max_evals: Optional[int] = None
    max_seconds: Optional[float] = None


@dataclass
class Counters:
    provider_calls: int = 0
    plan_calls: int = 0
    evaluations: int = 0


@dataclass(frozen=True)
class Suggestion:
    tree: BehaviorTree
    raw_score: float
    normalized_score: Optional[float]
    size: int
    solved: bool
    provenance: str          # seed | planner | gp | bo
    timestamp: float


class _CountingProvider:
    def __init__(self, inner, counters: Counters):
        self.inner = inner
        self.counters = counters

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        self.counters.provider_calls += 1
        return self.inner.complete(prompt, temperature)


class _Stop(Exception):
    """Budget exhausted or work cancelled."""


def plan_with_repair(goal_tree: BehaviorTree, world: World, provider,
                     variant: VariantConfig, counters: Counters,
                     max_provider_calls: int = MAX_REPAIR_ROUNDS
                     ) -> tuple[BehaviorTree, str]:
    """Plan; on failure ask the provider for missing preconditions and
    replan, until success, an unresolvable failure, or the provider-call
    budget runs out. An unresolved failure discards the partial expansion:
    the optimizers then start from the seed itself, whose suggestions do
    not solve any subtask.
    """
    if not variant.planner_enabled:
        return goal_tree, "seed"
    counting = _CountingProvider(provider, counters) if provider is not None else None
    extras: dict = {}
    start_calls = counters.provider_calls
    while True:
        counters.plan_calls += 1
        outcome = plan(goal_tree, world, extra_preconditions=extras)
        if isinstance(outcome, BehaviorTree):
            return outcome, "planner"
        failure: PlanFailure = outcome
        used = counters.provider_calls - start_calls
        if not variant.llm_enabled or counting is None or used >= max_provider_calls:
            break
        suggestion = repair_plan_failure(failure, counting,
                                         max_calls=max_provider_calls - used)
        if isinstance(suggestion, Unresolved):
            break
        key = (suggestion.act_kind, suggestion.target_object)
        extras.setdefault(key, []).extend(suggestion.conditions)
    return goal_tree, "seed"


class Pipeline:
    """One assistant run over one seed. Deterministic for a fixed rng when
    budgeted by evaluation count; every strict improvement is emitted.
    """

    def __init__(self, world: World, variant: VariantConfig, provider,
                 rng: random.Random, budget: Budget,
                 weights: Optional[ScoreWeights] = None,
                 gp_config: Optional[GpConfig] = None,
                 structure_allowed: Callable[[], bool] = lambda: True,
                 emit: Callable[[Suggestion], None] = lambda s: None,
                 cancelled: Callable[[], bool] = lambda: False,
                 counters: Optional[Counters] = None,
                 best_floor: float = -math.inf,
                 baselines: Optional[tuple[float, Optional[float]]] = None):
        self.world = world
        self.variant = variant
        self.provider = provider
        self.rng = rng
        self.budget = budget
        self.weights = weights if weights is not None else ScoreWeights()
        self.gp_config = gp_config or GpConfig()
        self.structure_allowed = structure_allowed
        self.emit = emit
        self.cancelled = cancelled
        self.counters = counters if counters is not None else Counters()
        self.best: Optional[Suggestion] = None
        self.best_raw = best_floor
        self.provenance = "seed"
        self.baselines = baselines if baselines is not None else \
            scenario_baselines(world, self.weights)
        self._consumed = 0
        self._deadline = (time.monotonic() + budget.max_seconds
                          if budget.max_seconds is not None else None)

    # -- scoring -------------------------------------------------------------

    def _check_stop(self, consume: bool = False) -> None:
        if self.cancelled():
            raise _Stop
        if self._deadline is not None and time.monotonic() >= self._deadline:
            raise _Stop
        if consume and self.budget.max_evals is not None \
                and self._consumed >= self.budget.max_evals:
            raise _Stop

    def fitness(self, tree: BehaviorTree, free: bool = False) -> tuple[float, bool]:
        self._check_stop(consume=not free)
        if not free:
            self._consumed += 1
        self.counters.evaluations += 1
        result = run_episode(tree, self.world, weights=self.weights,
                             with_trace=False)
        if result.raw_score > self.best_raw + EMIT_THRESHOLD:
            self.best_raw = result.raw_score
            baseline_raw, best_known = self.baselines
            normalized = None
            if best_known is not None and best_known > baseline_raw:
                normalized = normalize(result.raw_score, baseline_raw, best_known)
            self.best = Suggestion(
                tree=tree,
                raw_score=result.raw_score,
                normalized_score=normalized,
                size=metrics(tree).node_count,
                solved=result.solved,
                provenance=self.provenance,
                timestamp=time.time(),
            )
            self.emit(self.best)
        return result.raw_score, result.solved

    # -- phases ---------------------------------------------------------------

    def run(self, seed_tree: BehaviorTree) -> Optional[Suggestion]:
        if self.variant.planner_enabled and self.structure_allowed():
            expanded, self.provenance = plan_with_repair(
                seed_tree, self.world, self.provider, self.variant, self.counters)
        else:
            expanded, self.provenance = seed_tree, "seed"
        try:
            # the starting point is always scored, outside the search budget
            self.fitness(expanded, free=True)
            if self.variant.gp_enabled:
                self._gp_loop(expanded)
            elif self.variant.bo_enabled:
                self.provenance = "bo"
                self._bo_loop(expanded)
        except _Stop:
            pass
        return self.best

    def _gp_loop(self, seed: BehaviorTree) -> None:
        palette = Palette.from_world(self.world)
        cfg = self.gp_config
        self.provenance = "gp"
        population = evaluate(
            seed_population(seed, self._cfg_now(cfg), self.rng, palette),
            self.fitness)
        bo_state: Optional[tuple[BehaviorTree, Surrogate]] = None
        while True:
            self._check_stop()
            population = evolve_step(population, self._cfg_now(cfg), self.rng,
                                     palette, self.fitness)
            if self.variant.bo_enabled:
                bo_state = self._bo_refine(best_of(population).tree, bo_state)

    def _cfg_now(self, cfg: GpConfig) -> GpConfig:
        allowed = self.structure_allowed()
        if cfg.structure_allowed == allowed:
            return cfg
        return GpConfig(**{**cfg.__dict__, "structure_allowed": allowed})

    def _bo_refine(self, structure: BehaviorTree,
                   state: Optional[tuple[BehaviorTree, Surrogate]]
                   ) -> Optional[tuple[BehaviorTree, Surrogate]]:
        """A few BO iterations on the GP's best structure; the surrogate
        restarts whenever that structure changes.
        """
        vector = extract_params(structure)
        if vector.dims == 0:
            return state
        if state is None or not trees_equal(state[0], structure):
            state = (structure, Surrogate(vector.bounds()))
        _, surrogate = state
        saved = self.provenance
        self.provenance = "bo"
        try:
            for _ in range(BO_ITERS_PER_CYCLE):
                self._check_stop()
                candidate = suggest_next(
                    surrogate if surrogate.n_observations() else None,
                    vector.bounds(), self.rng, spec=vector.spec)
                score, _solved = self.fitness(apply_params(structure, candidate))
                observe(surrogate, candidate, score)
        finally:
            self.provenance = saved
        return state

    def _bo_loop(self, structure: BehaviorTree) -> None:
        vector = extract_params(structure)
        if vector.dims == 0:
            return
        surrogate = Surrogate(vector.bounds())
        while True:
            self._check_stop()
            candidate = suggest_next(
                surrogate if surrogate.n_observations() else None,
                vector.bounds(), self.rng, spec=vector.spec)
            score, _solved = self.fitness(apply_params(structure, candidate))
            observe(surrogate, candidate, score)


def scenario_baselines(world: World, weights: ScoreWeights
                       ) -> tuple[float, Optional[float]]:
    """(baseline_raw, best_known_raw) for normalization; best_known comes
    from the shipped artifact and may be absent for custom scenarios.
    """
    base = run_episode(baseline_tree(world), world, weights=weights,
                       with_trace=False).raw_score
    try:
        best_known = load_best_known().get(world.scenario_id)
    except FileNotFoundError:
        best_known = None
    return base, best_known


# ---------------------------------------------------------------------------
# headless ablation mode

@dataclass(frozen=True)
class HeadlessResult:
    seed: int
    best_tree: Optional[BehaviorTree]
    raw_score: Optional[float]
    normalized_score: Optional[float]
    solved: bool
    evaluations: int
    wall_seconds: float


def run_headless(scenario: str, goal_tree: BehaviorTree, budget: Budget,
                 seeds: Sequence[int],
                 variant: VariantConfig = PRESETS["NO_HUMAN"],
                 provider=None,
                 weights: Optional[ScoreWeights] = None,
                 gp_config: Optional[GpConfig] = None) -> list[HeadlessResult]:
    """The full pipeline run once per seed with no human edits. With an
    evaluation-count budget the results are bit-reproducible.
    """
    if budget.max_evals is None and budget.max_seconds is None:
        raise ValueError("budget must bound evaluations or wall time")
    provider = provider if provider is not None else scripted_provider()
    weights = weights if weights is not None else ScoreWeights()
    results = []
    for seed in seeds:
        world = load_scenario(scenario)
        counters = Counters()
        start = time.monotonic()
        pipeline = Pipeline(world, variant, provider, random.Random(seed),
                            budget, weights=weights, gp_config=gp_config,
                            counters=counters)
        best = pipeline.run(goal_tree)
        results.append(HeadlessResult(
            seed=seed,
            best_tree=best.tree if best else None,
            raw_score=best.raw_score if best else None,
            normalized_score=best.normalized_score if best else None,
            solved=best.solved if best else False,
            evaluations=counters.evaluations,
            wall_seconds=time.monotonic() - start,
        ))
    return results


# ---------------------------------------------------------------------------
# live session (background worker + event stream)

@dataclass
class SessionEvent:
    kind: str                 # "suggestion" | "status"
    payload: dict


class AssistantSession:
    """Mutable human/AI shared state for one editing session. Seed
    submissions cancel in-flight work; suggestions from a superseded seed
    are dropped before publication.
    """

    def __init__(self, scenario: str, variant: str | VariantConfig,
                 provider=None, weights: Optional[ScoreWeights] = None,
                 rng_seed: int = 0, budget: Optional[Budget] = None,
                 gp_config: Optional[GpConfig] = None,
                 clock_seconds: float = 900.0):
        self.world = load_scenario(scenario)
        self.variant = (variant if isinstance(variant, VariantConfig)
                        else VariantConfig.preset(variant))
        self.provider = provider if provider is not None else scripted_provider()
        self.weights = weights if weights is not None else ScoreWeights()
        self.budget = budget if budget is not None else Budget(max_seconds=clock_seconds)
        self.gp_config = gp_config
        self.rng_seed = rng_seed
        self.clock_seconds = clock_seconds
        self.clock_started_at: Optional[float] = None
        self.goal_tree: Optional[BehaviorTree] = None
        self.seed_tree: Optional[BehaviorTree] = None
        self.structure_allowed = True
        self.counters = Counters()
        self.suggestions: list[Suggestion] = []
        self.best: Optional[Suggestion] = None
        self.baselines = scenario_baselines(self.world, self.weights)
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self._generation = 0
        self._cancel = threading.Event()
        self._worker: Optional[threading.Thread] = None

    # -- clock ---------------------------------------------------------------

    def start_clock(self) -> None:
        if self.clock_started_at is None:
            self.clock_started_at = time.monotonic()

    def remaining_seconds(self) -> float:
        if self.clock_started_at is None:
            return self.clock_seconds
        return max(0.0, self.clock_seconds - (time.monotonic() - self.clock_started_at))

    def expired(self) -> bool:
        return self.clock_started_at is not None and self.remaining_seconds() <= 0.0

    # -- events ---------------------------------------------------------------

    def subscribe(self, replay: bool = False) -> queue.Queue:
        """New event queue; with ``replay`` the suggestions so far are
        queued first, in emission order, with no duplicates or gaps.
        """
        q: queue.Queue = queue.Queue()
        with self._lock:
            if replay:
                for s in self.suggestions:
                    q.put(SessionEvent("suggestion", suggestion_payload(s)))
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish(self, event: SessionEvent) -> None:
        with self._lock:
            for q in self._subscribers:
                q.put(event)

    # -- assistant control ------------------------------------------------------

    def submit_seed(self, tree: BehaviorTree, synchronous: bool = False) -> None:
        """Cancel in-flight optimization and start the pipeline on a new
        seed. ``synchronous`` runs inline (tests, headless-style use).
        """
        if not self.variant.assistant_enabled:
            raise VariantError(f"variant {self.variant.name} has no AI assistant")
        violations = validate(tree)
        if violations:
            raise ValueError(f"seed tree violates constraints: {violations}")
        self.cancel()
        with self._lock:
            self._generation += 1
            generation = self._generation
            self.seed_tree = tree
            self._cancel = threading.Event()
            cancel = self._cancel
        suggestion_floor = self.best.raw_score if self.best else -math.inf

        def emit(suggestion: Suggestion) -> None:
            with self._lock:
                if generation != self._generation:
                    return
                self.suggestions.append(suggestion)
                self.best = suggestion
            self._publish(SessionEvent("suggestion", suggestion_payload(suggestion)))

        def work() -> None:
            pipeline = Pipeline(
                self.world, self.variant, self.provider,
                random.Random(self.rng_seed + generation),
                self.budget, weights=self.weights, gp_config=self.gp_config,
                structure_allowed=lambda: self.structure_allowed,
                emit=emit, cancelled=cancel.is_set, counters=self.counters,
                best_floor=suggestion_floor, baselines=self.baselines)
            pipeline.run(tree)
            self._publish(SessionEvent("status", {
                "state": "idle", "generation": generation,
                "evaluations": self.counters.evaluations}))

        if synchronous:
            work()
        else:
            self._worker = threading.Thread(target=work, daemon=True)
            self._worker.start()

    def toggle_structure(self, allowed: bool) -> None:
        if not self.variant.assistant_enabled:
            raise VariantError(f"variant {self.variant.name} has no AI assistant")
        self.structure_allowed = bool(allowed)

    def cancel(self) -> None:
        self._cancel.set()
        worker = self._worker
        if worker is not None and worker.is_alive():
            worker.join(timeout=10.0)

    def best_suggestion(self) -> Optional[Suggestion]:
        with self._lock:
            return self.best

    def wait_idle(self, timeout: float = 60.0) -> None:
        worker = self._worker
        if worker is not None:
            worker.join(timeout=timeout)


def suggestion_payload(s: Suggestion) -> dict:
    from .tree import tree_to_dict
    return {
        "tree": tree_to_dict(s.tree),
        "raw_score": s.raw_score,
        "normalized_score": s.normalized_score,
        "size": s.size,
        "solved": s.solved,
        "provenance": s.provenance,
        "timestamp": s.timestamp,
    }
