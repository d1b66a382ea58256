import pytest

from btstudio.planner import (BLOCKED_PICK, DEPTH_CAP, NO_PROVIDER,
                              ActionTemplate, ConditionTemplate, Domain,
                              PlanFailure, domain_table, lookup, plan)
from btstudio.tree import (BehaviorTree, fallback, leaf, preorder, seq,
                           serialize, trees_equal, validate)
from btstudio.world import load_scenario, run_episode


def goal(*leaves):
    return BehaviorTree(seq(*leaves, node_id="g0"))


def test_domain_lookups_are_unique_providers():
    dom = domain_table()
    assert lookup(dom, "at_pos?") == "place!"
    assert lookup(dom, "in?") == "place_in!"
    assert lookup(dom, "grasped?") == "grasp!"
    assert lookup(dom, "robot_at?") == "move_to!"
    assert lookup(dom, "robot_near?") == "move_to!"
    assert lookup(dom, "bogus?") is None


def test_expansion_shape_for_unmet_grasp_goal():
    w = load_scenario("cubes_bowl")  # robot starts out of reach
    out = plan(goal(leaf("grasped?", target="red_cube", node_id="g1")), w, verify=False)
    assert isinstance(out, BehaviorTree)
    expected = goal(fallback(
        leaf("grasped?", target="red_cube"),
        seq(fallback(leaf("robot_near?", target="red_cube"),
                     leaf("move_to!", target="red_cube", offset=(-0.5, 0.0), angle=0.0)),
            leaf("grasp!", target="red_cube"))))
    assert trees_equal(out, expected, ignore_ids=True)


def test_satisfied_goal_returned_unchanged():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    g = goal(leaf("robot_near?", target="blue_cube", node_id="g1"))
    out = plan(g, w, verify=False)
    assert trees_equal(out, g)  # including node ids


def test_blocked_pick_reported_with_blocker():
    w = load_scenario("cubes_bowl")
    out = plan(goal(leaf("grasped?", target="blue_cube", node_id="g1")), w)
    assert isinstance(out, PlanFailure)
    assert out.reason == BLOCKED_PICK
    assert out.act_kind == "grasp!"
    assert out.blocker == "green_cube"
    assert out.world is not None and out.partial_tree is not None
    assert "blue_cube" in out.describe()


def test_no_provider_when_scenario_excludes_the_action():
    w = load_scenario("cubes_bowl")
    w.allowed_nodes = tuple(k for k in w.allowed_nodes if k != "place_in!")
    out = plan(goal(leaf("in?", target="green_cube", relative="bowl", node_id="g1")),
               w, verify=False)
    assert isinstance(out, PlanFailure)
    assert out.reason == NO_PROVIDER


def test_depth_cap_on_cyclic_domain():
    w = load_scenario("cubes_bowl")
    cyclic = Domain(templates=(
        ActionTemplate("grasp!", "grasped?", {"target_object": "$target"},
                       (ConditionTemplate("grasped?", {"target_object": "$target"}),)),))
    out = plan(goal(leaf("grasped?", target="red_cube", node_id="g1")), w,
               domain=cyclic, verify=False)
    assert isinstance(out, PlanFailure)
    assert out.reason == DEPTH_CAP


def test_planned_trees_pass_validation_and_solve_simple_scenarios():
    for name in ("demo", "tableware", "trashpicking"):
        w = load_scenario(name)
        g = BehaviorTree(seq(*[
            leaf("in?", target=x.target, relative=x.relative, node_id=f"g{i + 1}")
            if x.kind == "containment" else
            leaf("at_pos?", target=x.target, relative=x.relative,
                 offset=x.offset, angle=x.angle, node_id=f"g{i + 1}")
            for i, x in enumerate(w.goals)], node_id="g0"))
        out = plan(g, w)
        assert isinstance(out, BehaviorTree), (name, out)
        assert validate(out) == []
        res = run_episode(out, w)
        assert res.solved and res.ticks_executed < 200, name


def test_plan_is_idempotent_on_success():
    w = load_scenario("trashpicking")
    g = goal(leaf("in?", target="paper", relative="blue_bin", node_id="g1"))
    first = plan(g, w)
    assert isinstance(first, BehaviorTree)
    second = plan(first, w)
    assert isinstance(second, BehaviorTree)
    assert trees_equal(first, second)


def test_extra_preconditions_inserted_and_expanded():
    w = load_scenario("cubes_bowl")
    g = goal(leaf("grasped?", target="blue_cube", node_id="g1"))
    park = leaf("at_pos?", target="green_cube", relative="table",
                offset=(-0.5, -0.8, 0.025), node_id="x1")
    out = plan(g, w, extra_preconditions={("grasp!", "blue_cube"): [park]})
    assert isinstance(out, BehaviorTree)
    kinds = [n.kind for n in preorder(out.root)]
    assert "place!" in kinds  # the parking condition was itself expanded
    res = run_episode(out, w, goals=[])
    assert res.root_status == "SUCCESS"


def test_no_two_grasps_without_intervening_place():
    w = load_scenario("trashpicking")
    g = BehaviorTree(seq(*[leaf("in?", target=x.target, relative=x.relative,
                                node_id=f"g{i + 1}") for i, x in enumerate(w.goals)],
                         node_id="g0"))
    out = plan(g, w)
    assert isinstance(out, BehaviorTree)
    actions = [n.kind for n in preorder(out.root) if n.is_action]
    last = None
    for kind in actions:
        if kind == "grasp!":
            assert last != "grasp!", actions
        if kind in ("grasp!", "place!", "place_in!"):
            last = kind


def test_locked_goal_conditions_survive_expansion_verbatim():
    w = load_scenario("cubes_bowl")
    g = goal(leaf("in?", target="green_cube", relative="bowl", node_id="g1", locked=True))
    out = plan(g, w)
    assert isinstance(out, BehaviorTree)
    kept = out.node("g1")
    assert kept.locked and kept.kind == "in?"
