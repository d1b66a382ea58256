import random
import time

import pytest

from btstudio.assistant import (PRESETS, AssistantSession, Budget, Counters,
                                Pipeline, Suggestion, VariantConfig,
                                VariantError, plan_with_repair, run_headless,
                                scenario_baselines)
from btstudio.gp import GpConfig
from btstudio.llm import scripted_provider
from btstudio.scoring import ScoreWeights
from btstudio.tree import (BehaviorTree, leaf, metrics, preorder, seq,
                           serialize, set_locked, validate)
from btstudio.world import goal_condition_tree, load_scenario, load_solution


def cubes_goal():
    return goal_condition_tree(load_scenario("cubes_bowl"))


# -- variants -----------------------------------------------------------------

def test_presets_disable_exactly_their_component():
    full = PRESETS["FULL"]
    assert all([full.planner_enabled, full.llm_enabled, full.gp_enabled,
                full.bo_enabled, full.assistant_enabled])
    for name, flag in (("NO_BO", "bo_enabled"), ("NO_GP", "gp_enabled"),
                       ("NO_LLM", "llm_enabled"), ("NO_PLANNER", "planner_enabled")):
        preset = PRESETS[name]
        assert getattr(preset, flag) is False
        others = {"planner_enabled", "llm_enabled", "gp_enabled",
                  "bo_enabled", "assistant_enabled"} - {flag}
        assert all(getattr(preset, o) for o in others), name
    manual = PRESETS["MANUAL_ONLY"]
    assert not manual.assistant_enabled


def test_unknown_variant_rejected():
    with pytest.raises(VariantError):
        VariantConfig.preset("NO_EVERYTHING")


# -- plan + repair ------------------------------------------------------------

def test_full_repair_loop_solves_cubes_within_call_budget():
    world = load_scenario("cubes_bowl")
    mock = scripted_provider()
    counters = Counters()
    tree, provenance = plan_with_repair(cubes_goal(), world, mock,
                                        PRESETS["FULL"], counters)
    assert provenance == "planner"
    assert counters.provider_calls <= 3
    assert counters.plan_calls >= 2
    from btstudio.world import run_episode
    assert run_episode(tree, world).solved


def test_no_llm_discards_partial_expansion_and_calls_no_provider():
    world = load_scenario("cubes_bowl")
    mock = scripted_provider()
    counters = Counters()
    goal = cubes_goal()
    tree, provenance = plan_with_repair(goal, world, mock,
                                        PRESETS["NO_LLM"], counters)
    assert provenance == "seed"
    assert serialize(tree) == serialize(goal)
    assert counters.provider_calls == 0
    assert mock.call_count == 0


def test_no_planner_never_calls_plan():
    world = load_scenario("cubes_bowl")
    counters = Counters()
    goal = cubes_goal()
    tree, provenance = plan_with_repair(goal, world, scripted_provider(),
                                        PRESETS["NO_PLANNER"], counters)
    assert provenance == "seed"
    assert counters.plan_calls == 0


# -- pipeline -----------------------------------------------------------------

def run_pipeline_once(variant_name, budget_evals, rng_seed=1, scenario="cubes_bowl",
                      structure_allowed=True, goal=None):
    world = load_scenario(scenario)
    suggestions = []
    pipeline = Pipeline(world, PRESETS[variant_name], scripted_provider(),
                        random.Random(rng_seed), Budget(max_evals=budget_evals),
                        structure_allowed=lambda: structure_allowed,
                        emit=suggestions.append)
    best = pipeline.run(goal if goal is not None else goal_condition_tree(world))
    return best, suggestions, pipeline


def test_full_pipeline_emits_improving_suggestions_and_solves():
    best, suggestions, pipeline = run_pipeline_once("FULL", 60)
    assert suggestions, "at least the planner tree must be emitted"
    raws = [s.raw_score for s in suggestions]
    assert raws == sorted(raws)
    assert all(b > a for a, b in zip(raws, raws[1:]))  # strictly improving
    assert best.solved
    assert best is suggestions[-1]
    assert {s.provenance for s in suggestions} <= {"seed", "planner", "gp", "bo"}
    assert all(validate(s.tree) == [] for s in suggestions)


def test_zero_budget_returns_planner_output_only():
    best, suggestions, _ = run_pipeline_once("FULL", 0)
    assert len(suggestions) == 1
    assert suggestions[0].provenance == "planner"
    assert best.solved  # the repaired planner tree already solves cubes


def test_no_planner_initial_suggestion_solves_nothing():
    best, suggestions, _ = run_pipeline_once("NO_PLANNER", 0)
    assert len(suggestions) == 1
    assert not suggestions[0].solved
    assert suggestions[0].normalized_score == pytest.approx(0.0, abs=1.0)


def test_ablation_soundness_counters():
    _, _, p_nollm = run_pipeline_once("NO_LLM", 10)
    assert p_nollm.counters.provider_calls == 0
    _, _, p_noplan = run_pipeline_once("NO_PLANNER", 10)
    assert p_noplan.counters.plan_calls == 0


def test_structure_disallowed_freezes_shape_no_bo():
    seed = load_solution("cubes_bowl")
    world = load_scenario("cubes_bowl")
    suggestions = []
    pipeline = Pipeline(world, PRESETS["NO_BO"], scripted_provider(),
                        random.Random(3), Budget(max_evals=40),
                        structure_allowed=lambda: False,
                        emit=suggestions.append)
    pipeline.run(seed)
    m = metrics(seed)
    assert all(metrics(s.tree) == m for s in suggestions)


def test_structure_disallowed_skips_planner_entirely():
    # unchecking the structure box leaves only parameter search; the
    # planner cannot restructure the seed either
    world = load_scenario("cubes_bowl")
    counters = Counters()
    pipeline = Pipeline(world, PRESETS["NO_GP"], scripted_provider(),
                        random.Random(3), Budget(max_evals=5),
                        structure_allowed=lambda: False, counters=counters)
    pipeline.run(goal_condition_tree(world))
    assert counters.plan_calls == 0


# -- headless -----------------------------------------------------------------

def test_run_headless_row_per_seed():
    results = run_headless("demo", goal_condition_tree(load_scenario("demo")),
                           Budget(max_evals=10), seeds=[7, 8, 9, 10, 11])
    assert len(results) == 5
    assert [r.seed for r in results] == [7, 8, 9, 10, 11]
    assert all(r.best_tree is not None for r in results)


def test_run_headless_reproducible_bit_for_bit():
    goal = cubes_goal()
    a = run_headless("cubes_bowl", goal, Budget(max_evals=40), seeds=[5],
                     provider=scripted_provider())
    b = run_headless("cubes_bowl", goal, Budget(max_evals=40), seeds=[5],
                     provider=scripted_provider())
    assert serialize(a[0].best_tree) == serialize(b[0].best_tree)
    assert a[0].raw_score == b[0].raw_score
    assert a[0].evaluations == b[0].evaluations


def test_run_headless_requires_a_bound():
    with pytest.raises(ValueError):
        run_headless("demo", goal_condition_tree(load_scenario("demo")),
                     Budget(), seeds=[1])


# -- live session ---------------------------------------------------------------

def test_manual_only_rejects_seed_submission():
    session = AssistantSession("cubes_bowl", "MANUAL_ONLY")
    with pytest.raises(VariantError):
        session.submit_seed(cubes_goal())
    with pytest.raises(VariantError):
        session.toggle_structure(False)


def test_invalid_seed_rejected_with_violations():
    session = AssistantSession("cubes_bowl", "FULL",
                               budget=Budget(max_evals=1))
    bad = BehaviorTree(seq(leaf("grasp!", target="red_cube", node_id="a"),
                           leaf("grasp!", target="red_cube", node_id="b"),
                           node_id="root"))
    with pytest.raises(ValueError):
        session.submit_seed(bad)


def test_session_clock_starts_on_demand():
    session = AssistantSession("cubes_bowl", "FULL", clock_seconds=900.0)
    assert session.remaining_seconds() == 900.0
    assert not session.expired()
    session.start_clock()
    time.sleep(0.01)
    assert session.remaining_seconds() < 900.0


def test_session_best_monotone_and_synchronous_submit():
    session = AssistantSession("cubes_bowl", "FULL",
                               provider=scripted_provider(),
                               budget=Budget(max_evals=30), rng_seed=2)
    session.submit_seed(cubes_goal(), synchronous=True)
    assert session.best is not None and session.best.solved
    raws = [s.raw_score for s in session.suggestions]
    assert raws == sorted(raws)


def test_new_seed_cancels_and_supersedes_old_suggestions():
    session = AssistantSession("cubes_bowl", "NO_PLANNER",
                               provider=scripted_provider(),
                               budget=Budget(max_seconds=2.5), rng_seed=4)
    marked_goal = BehaviorTree(seq(
        leaf("in?", target="green_cube", relative="bowl", node_id="markA",
             locked=True),
        node_id="rootA"))
    session.submit_seed(marked_goal)  # keeps working in the background
    deadline = time.monotonic() + 20
    while not session.suggestions and time.monotonic() < deadline:
        time.sleep(0.01)
    assert session.suggestions, "first seed produced no suggestion"
    better = set_locked(load_solution("cubes_bowl"), "s1", True)
    session.submit_seed(better)  # cancels the first run
    session.wait_idle(timeout=30)
    # suggestions from the superseded seed must all precede the new seed's;
    # none may interleave after the resubmission
    flavors = []
    for suggestion in session.suggestions:
        ids = {n.node_id for n in preorder(suggestion.tree.root)}
        assert ("markA" in ids) != ("s1" in ids)
        flavors.append("old" if "markA" in ids else "new")
    assert "new" in flavors, "the better seed must beat the old best and emit"
    first_new = flavors.index("new")
    assert all(f == "new" for f in flavors[first_new:])
    raws = [s.raw_score for s in session.suggestions]
    assert raws == sorted(raws)


def test_suggestion_events_published_in_order():
    session = AssistantSession("cubes_bowl", "FULL",
                               provider=scripted_provider(),
                               budget=Budget(max_evals=20), rng_seed=6)
    q = session.subscribe()
    session.submit_seed(cubes_goal(), synchronous=True)
    seen = []
    while not q.empty():
        seen.append(q.get_nowait())
    suggestions = [e for e in seen if e.kind == "suggestion"]
    raws = [e.payload["raw_score"] for e in suggestions]
    assert raws == sorted(raws)
    assert len(raws) == len(session.suggestions)
