import math

import pytest

from btstudio.scoring import ScoreWeights
from btstudio.tree import (BehaviorTree, NodeParams, NodeStatus, fallback,
                           leaf, seq, tick)
from btstudio.world import (NEAR_DIST, WorldError, baseline_tree,
                            load_scenario, load_solution, run_episode,
                            scenario_names)

P = NodeParams


def test_scenario_initial_relations():
    w = load_scenario("cubes_bowl")
    assert w.objects["green_cube"].supported_by == "blue_cube"
    d = load_scenario("demo")
    movables = d.movable_ids()
    assert sorted(movables) == ["blue_ball", "red_ball", "yellow_ball"]
    assert d.objects["goal_area"].is_container and not d.objects["goal_area"].movable


def test_tableware_palette_excludes_containment_nodes():
    w = load_scenario("tableware")
    assert "in?" not in w.allowed_nodes
    assert "place_in!" not in w.allowed_nodes
    assert "in?" in load_scenario("cubes_bowl").allowed_nodes


def test_unknown_scenario_rejected():
    with pytest.raises(WorldError):
        load_scenario("warehouse")


def test_reset_restores_initial_state_exactly():
    w = load_scenario("cubes_bowl")
    fresh = w.clone()
    tree = load_solution("cubes_bowl")
    for _ in range(50):
        w.begin_tick()
        tick(tree, w)
    assert w.robot.base_pose.position != fresh.robot.base_pose.position
    w.reset()
    assert w.state_dict() == fresh.state_dict()


# -- conditions ----------------------------------------------------------------

def test_robot_near_thresholds():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.5 - 0.89, 0.0, 0.0)
    assert w.eval_condition("robot_near?", P(target_object="blue_cube"))
    w.robot.base_pose.position = (1.5 - 0.91, 0.0, 0.0)
    assert not w.eval_condition("robot_near?", P(target_object="blue_cube"))


def test_at_pos_exact_and_beyond_tolerance():
    w = load_scenario("cubes_bowl")
    p = P(target_object="green_cube", relative_object="blue_cube",
          offset=(0.0, 0.0, 0.05), angle=0.0)
    assert w.eval_condition("at_pos?", p)  # starts exactly stacked
    w.objects["green_cube"].pose.position = (1.5, 0.025, 0.075)
    assert not w.eval_condition("at_pos?", p)  # 0.025 m error > 2 cm


def test_at_pos_orientation_tolerance():
    w = load_scenario("cubes_bowl")
    p = P(target_object="green_cube", relative_object="blue_cube",
          offset=(0.0, 0.0, 0.05), angle=0.0)
    w.objects["green_cube"].pose.yaw = 0.19
    assert w.eval_condition("at_pos?", p)
    w.objects["green_cube"].pose.yaw = 0.21
    assert not w.eval_condition("at_pos?", p)


def test_offsets_rotate_with_reference_yaw():
    w = load_scenario("cubes_bowl")
    w.objects["table"].pose.yaw = math.pi / 2
    p = P(target_object="green_cube", relative_object="table",
          offset=(0.25, 0.0, 0.075), angle=0.0)
    # goal = table pos rotated offset: (1.25, 0) + R(90deg)(0.25, 0) = (1.25, 0.25)
    w.objects["green_cube"].pose.position = (1.25, 0.25, 0.075)
    w.objects["green_cube"].pose.yaw = math.pi / 2
    assert w.eval_condition("at_pos?", p)


def test_robot_at_uses_tolerances():
    w = load_scenario("cubes_bowl")
    p = P(target_object="table", offset=(-0.5, 0.0), angle=0.0)
    w.robot.base_pose.position = (0.75 + 0.09, 0.0, 0.0)
    assert w.eval_condition("robot_at?", p)
    w.robot.base_pose.position = (0.75 + 0.11, 0.0, 0.0)
    assert not w.eval_condition("robot_at?", p)
    w.robot.base_pose.position = (0.75, 0.0, 0.0)
    w.robot.base_pose.yaw = 0.11
    assert not w.eval_condition("robot_at?", p)


def test_in_requires_container_relative():
    w = load_scenario("cubes_bowl")
    with pytest.raises(WorldError):
        w.eval_condition("in?", P(target_object="green_cube", relative_object="table"))
    assert not w.eval_condition("in?", P(target_object="green_cube", relative_object="bowl"))


def test_unknown_object_rejected():
    w = load_scenario("cubes_bowl")
    with pytest.raises(WorldError):
        w.eval_condition("grasped?", P(target_object="purple_cube"))


# -- actions ---------------------------------------------------------------------

def grasp_ticks(world, target):
    """RUNNING ticks before grasp! reports SUCCESS, stepping one world."""
    statuses = []
    for _ in range(50):
        world.begin_tick()
        s = world.execute_action("grasp!", P(target_object=target))
        statuses.append(s)
        if s is not NodeStatus.RUNNING:
            break
    return statuses


def test_grasp_running_then_success_after_ceil_dist_over_speed():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    w.robot.arm_tip = (1.0, 0.0, 0.5)
    target = w.objects["green_cube"].pose.position
    dist = math.dist(w.robot.arm_tip, target)
    expected_running = math.ceil(dist / w.arm_speed)
    statuses = grasp_ticks(w, "green_cube")
    assert statuses == [NodeStatus.RUNNING] * expected_running + [NodeStatus.SUCCESS]
    assert w.robot.held_object == "green_cube"
    assert w.objects["green_cube"].supported_by is None


def test_grasp_blocked_by_supported_object():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    w.begin_tick()
    assert w.execute_action("grasp!", P(target_object="blue_cube")) is NodeStatus.FAILURE


def test_grasp_wrong_object_held_fails():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    w.robot.held_object = "red_cube"
    w.begin_tick()
    assert w.execute_action("grasp!", P(target_object="green_cube")) is NodeStatus.FAILURE
    w.begin_tick()
    assert w.execute_action("grasp!", P(target_object="red_cube")) is NodeStatus.SUCCESS


def test_grasp_out_of_reach_fails():
    w = load_scenario("cubes_bowl")  # robot starts 1.5 m from the green cube
    w.begin_tick()
    assert w.execute_action("grasp!", P(target_object="green_cube")) is NodeStatus.FAILURE


def test_grasp_static_object_fails():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    w.begin_tick()
    assert w.execute_action("grasp!", P(target_object="table")) is NodeStatus.FAILURE


def test_place_preconditions_already_met_succeeds_without_holding():
    w = load_scenario("cubes_bowl")
    p = P(target_object="green_cube", relative_object="blue_cube",
          offset=(0.0, 0.0, 0.05), angle=0.0)
    w.begin_tick()
    assert w.execute_action("place!", p) is NodeStatus.SUCCESS
    assert w.tick_arm_dist == 0.0


def test_place_requires_holding_target():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.5, 0.0)
    p = P(target_object="red_cube", relative_object="yellow_cube",
          offset=(0.0, 0.0, 0.05), angle=0.0)
    w.begin_tick()
    assert w.execute_action("place!", p) is NodeStatus.FAILURE


def test_place_sets_support_and_detaches():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (1.0, 0.0, 0.0)
    w.robot.held_object = "red_cube"
    w.objects["red_cube"].pose.position = w.robot.arm_tip = (1.0, 0.0, 0.5)
    p = P(target_object="red_cube", relative_object="yellow_cube",
          offset=(0.0, 0.0, 0.05), angle=0.0)
    for _ in range(20):
        w.begin_tick()
        s = w.execute_action("place!", p)
        if s is not NodeStatus.RUNNING:
            break
    assert s is NodeStatus.SUCCESS
    assert w.robot.held_object is None
    assert w.objects["red_cube"].supported_by == "yellow_cube"
    assert w.objects["red_cube"].pose.position == pytest.approx((1.0, 0.5, 0.075))


def test_place_into_container_region_sets_containment():
    w = load_scenario("demo")
    w.robot.base_pose.position = (0.0, 1.5, 0.0)
    w.robot.held_object = "red_ball"
    w.objects["red_ball"].pose.position = w.robot.arm_tip = (0.0, 1.5, 0.3)
    p = P(target_object="red_ball", relative_object="goal_area",
          offset=(0.1, 0.0, 0.05), angle=0.0)
    for _ in range(20):
        w.begin_tick()
        s = w.execute_action("place!", p)
        if s is not NodeStatus.RUNNING:
            break
    assert s is NodeStatus.SUCCESS
    assert w.objects["red_ball"].container == "goal_area"


def test_place_in_assigns_containment_and_slot():
    w = load_scenario("cubes_bowl")
    w.robot.base_pose.position = (0.5, 0.8, 0.0)
    w.robot.held_object = "green_cube"
    w.objects["green_cube"].pose.position = w.robot.arm_tip = (0.5, 0.8, 0.3)
    p = P(target_object="green_cube", relative_object="bowl")
    for _ in range(20):
        w.begin_tick()
        s = w.execute_action("place_in!", p)
        if s is not NodeStatus.RUNNING:
            break
    assert s is NodeStatus.SUCCESS
    assert w.objects["green_cube"].container == "bowl"
    assert w.eval_condition("in?", p)
    w.begin_tick()
    assert w.execute_action("place_in!", p) is NodeStatus.SUCCESS  # idempotent


def test_place_in_non_container_fails():
    w = load_scenario("cubes_bowl")
    w.robot.held_object = "green_cube"
    w.begin_tick()
    p = P(target_object="green_cube", relative_object="table")
    assert w.execute_action("place_in!", p) is NodeStatus.FAILURE


def test_move_to_translates_and_rotates_base():
    w = load_scenario("cubes_bowl")
    p = P(target_object="table", offset=(-0.5, 0.0), angle=1.0)
    statuses = []
    for _ in range(30):
        w.begin_tick()
        s = w.execute_action("move_to!", p)
        statuses.append(s)
        if s is NodeStatus.SUCCESS:
            break
    assert statuses[-1] is NodeStatus.SUCCESS
    assert all(x is NodeStatus.RUNNING for x in statuses[:-1])
    assert math.dist(w.robot.base_pose.position[:2], (0.75, 0.0)) <= 0.10
    assert abs(w.robot.base_pose.yaw - 1.0) <= 0.1


def test_arm_rides_on_moving_base():
    w = load_scenario("cubes_bowl")
    before = w.robot.arm_tip
    w.begin_tick()
    w.execute_action("move_to!", P(target_object="blue_cube", offset=(-0.5, 0.0), angle=0.0))
    after = w.robot.arm_tip
    assert after[0] == pytest.approx(before[0] + 0.5)
    assert w.tick_base_dist == pytest.approx(0.5)
    assert w.tick_arm_dist == 0.0  # base-induced motion is not arm energy


def test_held_object_tracks_arm_through_base_motion():
    w = load_scenario("cubes_bowl")
    w.robot.held_object = "green_cube"
    w.objects["green_cube"].pose.position = w.robot.arm_tip
    w.begin_tick()
    w.execute_action("move_to!", P(target_object="bowl", offset=(-0.5, 0.0), angle=0.0))
    assert w.objects["green_cube"].pose.position == w.robot.arm_tip


def test_idle_always_running():
    w = load_scenario("demo")
    for _ in range(3):
        w.begin_tick()
        assert w.execute_action("idle!", P()) is NodeStatus.RUNNING


# -- episodes ---------------------------------------------------------------------

def test_immediately_failing_tree_extrapolates_tick_one():
    w = load_scenario("cubes_bowl")
    res = run_episode(baseline_tree(w), w)
    assert res.ticks_executed == 1
    assert res.ended_early and res.root_status == "FAILURE"
    assert res.raw_score == 200 * res.trace[0].score.total


def test_episode_is_reproducible_byte_for_byte():
    w = load_scenario("cubes_bowl")
    tree = load_solution("cubes_bowl")
    a = run_episode(tree, w, weights=ScoreWeights())
    b = run_episode(tree, w, weights=ScoreWeights())
    assert a.to_json() == b.to_json()


def test_episode_leaves_caller_world_untouched():
    w = load_scenario("cubes_bowl")
    before = w.state_dict()
    run_episode(load_solution("cubes_bowl"), w)
    assert w.state_dict() == before


def test_reference_solutions_solve_all_scenarios():
    for name in scenario_names():
        w = load_scenario(name)
        res = run_episode(load_solution(name), w)
        assert res.solved, name
        assert res.root_status == "SUCCESS"
        assert res.ticks_executed < 200


def test_object_ids_conserved_and_exclusivity_held():
    w = load_scenario("cubes_bowl")
    ids = set(w.objects)
    tree = load_solution("cubes_bowl")
    res = run_episode(tree, w)
    for rec in res.trace:
        assert set(rec.objects) == ids
        held = rec.robot["held_object"]
        if held is not None:
            assert rec.objects[held]["container"] is None
            assert rec.objects[held]["supported_by"] is None
        assert sum(1 for o in rec.objects.values()
                   if rec.robot["held_object"] == o["id"]) <= 1


def test_motion_continuity_budgets():
    w = load_scenario("cubes_bowl")
    tree = load_solution("cubes_bowl")
    sim = w.clone()
    for _ in range(60):
        sim.begin_tick()
        result = tick(tree, sim)
        assert sim.tick_arm_dist <= sim.arm_speed + 1e-9
        assert sim.tick_base_dist <= sim.base_speed + 1e-9
        if result.root_status is not NodeStatus.RUNNING:
            break


def test_exactly_zero_or_one_running_action_per_tick():
    w = load_scenario("cubes_bowl")
    res = run_episode(load_solution("cubes_bowl"), w)
    for rec in res.trace:
        running = [nid for nid, s in rec.statuses.items() if s == "RUNNING"
                   and not rec.statuses.get(nid) is None]
        assert len(rec.commands) <= 1
