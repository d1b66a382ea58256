"""Regenerate the shipped reference solutions and best-known raw scores.

Run from the repo root:  python3 tools/make_artifacts.py
The benchmark CLI (btstudio benchmark --update-baselines) refreshes
best_known.json when a run beats these scores.
"""

import json
import pathlib

from btstudio.tree import BehaviorTree, fallback, leaf, seq, serialize, validate
from btstudio.world import SCENARIO_NAMES, load_scenario, run_episode

DATA = pathlib.Path(__file__).resolve().parent.parent / "src" / "btstudio" / "data"

_counter = 0


def _nid() -> str:
    global _counter
    _counter += 1
    return f"s{_counter}"


def subtask_pose(t, rel, off):
    return fallback(
        leaf("at_pos?", target=t, relative=rel, offset=off, node_id=_nid()),
        seq(
            fallback(
                leaf("grasped?", target=t, node_id=_nid()),
                seq(leaf("move_to!", target=t, offset=(-0.5, 0.0), node_id=_nid()),
                    leaf("grasp!", target=t, node_id=_nid()), node_id=_nid()),
                node_id=_nid()),
            leaf("move_to!", target=rel, offset=(-0.5, 0.0), node_id=_nid()),
            leaf("place!", target=t, relative=rel, offset=off, node_id=_nid()),
            node_id=_nid()),
        node_id=_nid())


def subtask_in(t, c):
    return fallback(
        leaf("in?", target=t, relative=c, node_id=_nid()),
        seq(
            fallback(
                leaf("grasped?", target=t, node_id=_nid()),
                seq(leaf("move_to!", target=t, offset=(-0.5, 0.0), node_id=_nid()),
                    leaf("grasp!", target=t, node_id=_nid()), node_id=_nid()),
                node_id=_nid()),
            leaf("move_to!", target=c, offset=(-0.5, 0.0), node_id=_nid()),
            leaf("place_in!", target=t, relative=c, node_id=_nid()),
            node_id=_nid()),
        node_id=_nid())


def build_solutions() -> dict[str, BehaviorTree]:
    global _counter
    sols = {}
    _counter = 0
    sols["demo"] = BehaviorTree(subtask_in("red_ball", "goal_area"))
    _counter = 0
    sols["cubes_bowl"] = BehaviorTree(seq(
        subtask_in("green_cube", "bowl"),
        subtask_pose("red_cube", "yellow_cube", (0.0, 0.0, 0.05)),
        subtask_pose("blue_cube", "red_cube", (0.0, 0.0, 0.05)),
        node_id=_nid()))
    _counter = 0
    sols["tableware"] = BehaviorTree(seq(
        subtask_pose("fork", "plate", (-0.2, 0.0, 0.0)),
        subtask_pose("knife", "plate", (0.2, 0.0, 0.0)),
        subtask_pose("glass", "plate", (0.0, 0.25, 0.0)),
        node_id=_nid()))
    _counter = 0
    sols["trashpicking"] = BehaviorTree(seq(
        subtask_in("paper", "blue_bin"),
        subtask_in("banana", "green_bin"),
        subtask_in("can", "grey_bin"),
        node_id=_nid()))
    return sols


def main():
    (DATA / "solutions").mkdir(parents=True, exist_ok=True)
    best = {}
    for name, sol in build_solutions().items():
        assert validate(sol) == [], name
        world = load_scenario(name)
        result = run_episode(sol, world)
        assert result.solved, f"{name} reference solution does not solve"
        (DATA / "solutions" / f"{name}.json").write_text(serialize(sol) + "\n")
        best[name] = result.raw_score
        print(f"{name}: solved in {result.ticks_executed} ticks, raw {result.raw_score:.3f}")
    (DATA / "best_known.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    assert set(best) == set(SCENARIO_NAMES)


if __name__ == "__main__":
    main()
