import math

import pytest

from btstudio.scoring import (GoalCondition, ScoreWeights, TickEvents,
                              accumulate, normalize, tick_score)
from btstudio.tree import TreeMetrics
from btstudio.world import MotionDelta, ObjectState, Pose

W = ScoreWeights()


class SceneStub:
    def __init__(self, objects):
        self.objects = objects


def scene(**positions):
    objs = {}
    for oid, pos in positions.items():
        yaw = 0.0
        if isinstance(pos, tuple) and len(pos) == 2:
            pos, yaw = pos
        objs[oid] = ObjectState(id=oid, pose=Pose(pos, yaw))
    return SceneStub(objs)


def test_all_goals_met_leaves_only_size_and_depth():
    world = scene(a=[1.0, 0.0, 0.0], b=[1.0, 0.0, 0.05])
    goals = [GoalCondition("pose", target="b", relative="a", offset=(0, 0, 0.05))]
    s = tick_score(world, TreeMetrics(1, 1), TickEvents(), MotionDelta(), goals, W)
    assert s.goal == 0.0
    assert s.total == -(W.node_penalty + W.depth_penalty)


def test_goal_term_linear_beyond_deadband():
    # exactly 1 m + deadband away, no angle error -> goal term is -pos_weight
    world = scene(a=[0.0, 0.0, 0.0], b=[1.0 + W.pos_deadband, 0.0, 0.0])
    goals = [GoalCondition("pose", target="b", relative="a")]
    s = tick_score(world, TreeMetrics(1, 1), TickEvents(), MotionDelta(), goals, W)
    assert s.goal == pytest.approx(-W.pos_weight)


def test_orientation_term_beyond_deadband():
    world = scene(a=[0.0, 0.0, 0.0], b=([0.0, 0.0, 0.0], W.rot_deadband + 0.5))
    goals = [GoalCondition("pose", target="b", relative="a")]
    s = tick_score(world, TreeMetrics(1, 1), TickEvents(), MotionDelta(), goals, W)
    assert s.goal == pytest.approx(-W.rot_weight * 0.5)


def test_unmet_containment_counts_as_one_meter():
    world = scene(a=[0.0, 0.0, 0.0], c=[1.0, 1.0, 0.0])
    world.objects["c"].is_container = True
    goals = [GoalCondition("containment", target="a", relative="c")]
    s = tick_score(world, TreeMetrics(1, 1), TickEvents(), MotionDelta(), goals, W)
    assert s.goal == pytest.approx(-W.pos_weight * (1.0 - W.pos_deadband))
    world.objects["a"].container = "c"
    s2 = tick_score(world, TreeMetrics(1, 1), TickEvents(), MotionDelta(), goals, W)
    assert s2.goal == 0.0


def test_energy_base_motion_ten_times_arm():
    s = tick_score(scene(), TreeMetrics(1, 1), TickEvents(),
                   MotionDelta(arm_dist=0.0, base_dist=0.1), [], W)
    assert s.energy == pytest.approx(-W.energy_weight)
    s2 = tick_score(scene(), TreeMetrics(1, 1), TickEvents(),
                    MotionDelta(arm_dist=1.0, base_dist=0.0), [], W)
    assert s2.energy == pytest.approx(-W.energy_weight)


def test_event_penalties_all_negative():
    events = TickEvents(timeout=1, tree_failure=1, failed_actions=2,
                        backtrack=1, holding=1)
    s = tick_score(scene(), TreeMetrics(5, 3), events, MotionDelta(), [], W)
    expected = -(W.node_penalty * 5 + W.depth_penalty * 3 + W.timeout_penalty
                 + W.failure_penalty + W.action_fail_penalty * 2
                 + W.backtrack_penalty + W.holding_penalty)
    assert s.tree == pytest.approx(expected)
    assert s.total <= 0


def test_accumulate_full_run_is_plain_sum():
    totals = [-1.5] * 200
    assert accumulate(totals, 200, ended_early=False) == pytest.approx(-300.0)


def test_accumulate_tick_one_is_exactly_200x():
    s = -1234.56789
    assert accumulate([s], 1, ended_early=True) == 200 * s


def test_accumulate_tick_200_early_end_has_no_extrapolation():
    totals = [-1.0] * 200
    assert accumulate(totals, 200, ended_early=True) == accumulate(
        totals, 200, ended_early=False)


def test_accumulate_mid_episode_extrapolation():
    totals = [-1.0, -2.0, -3.0]
    # two full ticks plus the final tick counted over the remaining 198
    assert accumulate(totals, 3, ended_early=True) == pytest.approx(-1 - 2 - 3 * 198)


def test_accumulate_rejects_inconsistent_counts():
    with pytest.raises(ValueError):
        accumulate([-1.0], 2, ended_early=False)


def test_normalize_endpoints_and_midpoint():
    assert normalize(-500.0, -500.0, -100.0) == 0.0
    assert normalize(-100.0, -500.0, -100.0) == 100.0
    assert normalize(-300.0, -500.0, -100.0) == 50.0
    assert normalize(-700.0, -500.0, -100.0) == -50.0  # below baseline is valid


def test_normalize_degenerate_span_rejected():
    with pytest.raises(ValueError):
        normalize(-1.0, -1.0, -1.0)


def test_weights_file_round_trip(tmp_path):
    w = ScoreWeights(pos_weight=42.0, timeout_penalty=7.0)
    path = tmp_path / "weights.cfg"
    w.to_file(path)
    assert ScoreWeights.from_file(path) == w


def test_weights_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "weights.cfg"
    path.write_text("bogus = 1.0\n")
    with pytest.raises(ValueError):
        ScoreWeights.from_file(path)
