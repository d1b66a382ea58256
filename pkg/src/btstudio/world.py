"""Deterministic kinematic simulation of a mobile manipulator and scene
objects. Replaces physics with rigid attachment, discrete support and
containment relations, and fixed per-tick motion budgets, so every episode
is exactly reproducible.

Scenario layouts are declarative JSON files under ``data/scenarios``; they
are the ground truth for object ids, poses, and benchmark goals.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from .geom import angle_dist, dist2, dist3, norm_angle, offset_point, rotate_xy
from .scoring import (MAX_TICKS, EpisodeResult, GoalCondition, ScoreWeights,
                      TickEvents, TickRecord, TickScore, accumulate,
                      tick_score)
from .tree import (BehaviorTree, Node, NodeParams, NodeStatus, metrics,
                   preorder, preorder_index, tick)

# condition tolerances
AT_POS_TOL = 0.02          # m
AT_POS_ANGLE_TOL = 0.2     # rad
ROBOT_AT_TOL = 0.10        # m
ROBOT_AT_ANGLE_TOL = 0.1   # rad
NEAR_DIST = 0.9            # m, also the reach gate for arm actions

# placement relations
SUPPORT_Z_WINDOW = 0.2     # m above the supporter that still counts as "on"
CONTAIN_Z_WINDOW = 0.3     # m above a container that still counts as "in"
CONTAINER_SLOT_Z = 0.05    # m, internal drop height for place_in!
ARRIVE_EPS = 1e-9

SCENARIO_NAMES = ("demo", "cubes_bowl", "tableware", "trashpicking")


class WorldError(ValueError):
    """Bad references into the world: unknown object, wrong object role."""


@dataclass
class Pose:
    position: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        self.position = tuple(float(v) for v in self.position)
        self.yaw = norm_angle(float(self.yaw))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "yaw": self.yaw}


@dataclass
class ObjectState:
    id: str
    pose: Pose
    movable: bool = True
    is_container: bool = False
    container: Optional[str] = None      # id of the container holding this
    supported_by: Optional[str] = None   # id of the object under this
    container_radius: float = 0.15       # planar capture radius (containers)
    support_radius: float = 0.05         # planar radius that counts as "on top"

    def to_dict(self) -> dict:
        return {"id": self.id, "pose": self.pose.to_dict(), "movable": self.movable,
                "is_container": self.is_container, "container": self.container,
                "supported_by": self.supported_by}


@dataclass
class RobotState:
    base_pose: Pose
    arm_tip: tuple[float, float, float]
    held_object: Optional[str] = None

    def __post_init__(self):
        self.arm_tip = tuple(float(v) for v in self.arm_tip)

    def to_dict(self) -> dict:
        return {"base_pose": self.base_pose.to_dict(), "arm_tip": list(self.arm_tip),
                "held_object": self.held_object}


@dataclass(frozen=True)
class MotionDelta:
    arm_dist: float = 0.0
    base_dist: float = 0.0


@dataclass(frozen=True)
class ActionCommand:
    node_id: str
    act_kind: str
    params: NodeParams
    progress: float  # remaining motion distance, meters (0 for idle!)

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "act_kind": self.act_kind,
                "progress": self.progress}


@dataclass
class World:
    scenario_id: str
    objects: dict[str, ObjectState]
    robot: RobotState
    goals: list[GoalCondition] = field(default_factory=list)
    allowed_nodes: tuple[str, ...] = ()
    description: str = ""
    goal_text: str = ""
    base_speed: float = 0.5   # m per tick
    turn_speed: float = 0.5   # rad per tick
    arm_speed: float = 0.5    # m per tick
    tick_index: int = 0
    rng_seed: int = 0         # reserved; tasks are deterministic
    tick_arm_dist: float = 0.0
    tick_base_dist: float = 0.0
    _initial: Optional[dict] = None

    def __post_init__(self):
        if self._initial is None:
            self._initial = self._snapshot()

    # -- lifecycle ---------------------------------------------------------

    def _snapshot(self) -> dict:
        return {"objects": copy.deepcopy(self.objects),
                "robot": copy.deepcopy(self.robot)}

    def reset(self) -> None:
        self.objects = copy.deepcopy(self._initial["objects"])
        self.robot = copy.deepcopy(self._initial["robot"])
        self.tick_index = 0
        self.tick_arm_dist = 0.0
        self.tick_base_dist = 0.0

    def clone(self) -> "World":
        return copy.deepcopy(self)

    def begin_tick(self) -> None:
        self.tick_index += 1
        self.tick_arm_dist = 0.0
        self.tick_base_dist = 0.0

    # -- queries -----------------------------------------------------------

    def obj(self, object_id: Optional[str]) -> ObjectState:
        if object_id is None or object_id not in self.objects:
            raise WorldError(f"unknown object {object_id!r}")
        return self.objects[object_id]

    def movable_ids(self) -> list[str]:
        return [o.id for o in self.objects.values() if o.movable]

    def container_ids(self) -> list[str]:
        return [o.id for o in self.objects.values() if o.is_container]

    def supports_something(self, object_id: str) -> Optional[str]:
        for o in self.objects.values():
            if o.supported_by == object_id:
                return o.id
        return None

    def near(self, point: tuple[float, ...]) -> bool:
        return dist2(self.robot.base_pose.position, point) <= NEAR_DIST

    # -- conditions --------------------------------------------------------

    def eval_condition(self, cond_kind: str, params: NodeParams) -> bool:
        if cond_kind == "grasped?":
            self.obj(params.target_object)
            return self.robot.held_object == params.target_object
        if cond_kind == "in?":
            target = self.obj(params.target_object)
            container = self.obj(params.relative_object)
            if not container.is_container:
                raise WorldError(f"{container.id!r} is not a container")
            return target.container == container.id
        if cond_kind == "at_pos?":
            target = self.obj(params.target_object)
            rel = self.obj(params.relative_object)
            if self.robot.held_object == target.id:
                # an object still in the gripper is "in hand", not placed;
                # without this, goal guards fire mid-carry and thrash
                return False
            goal = offset_point(rel.pose.position, rel.pose.yaw,
                                params.offset or (0.0, 0.0, 0.0))
            goal_yaw = norm_angle(rel.pose.yaw + (params.angle or 0.0))
            return (dist3(target.pose.position, goal) <= AT_POS_TOL
                    and angle_dist(target.pose.yaw, goal_yaw) <= AT_POS_ANGLE_TOL)
        if cond_kind == "robot_at?":
            target = self.obj(params.target_object)
            goal = offset_point(target.pose.position, target.pose.yaw,
                                params.offset or (0.0, 0.0))
            goal_yaw = norm_angle(target.pose.yaw + (params.angle or 0.0))
            return (dist2(self.robot.base_pose.position, goal) <= ROBOT_AT_TOL
                    and angle_dist(self.robot.base_pose.yaw, goal_yaw)
                    <= ROBOT_AT_ANGLE_TOL)
        if cond_kind == "robot_near?":
            target = self.obj(params.target_object)
            point = target.pose.position
            if params.offset is not None:
                # planner-generated reach checks aim at an offset point
                point = offset_point(target.pose.position, target.pose.yaw,
                                     params.offset)
            return dist2(self.robot.base_pose.position, point) <= NEAR_DIST
        raise WorldError(f"unknown condition kind {cond_kind!r}")

    # -- motion primitives (one per-tick budget each) ------------------------

    def _move_arm_towards(self, point: tuple[float, float, float]) -> bool:
        tip = self.robot.arm_tip
        d = dist3(tip, point)
        if d <= ARRIVE_EPS:
            return True
        step = min(d, self.arm_speed)
        f = step / d
        new_tip = (tip[0] + (point[0] - tip[0]) * f,
                   tip[1] + (point[1] - tip[1]) * f,
                   tip[2] + (point[2] - tip[2]) * f)
        self.robot.arm_tip = new_tip
        self.tick_arm_dist += step
        if self.robot.held_object is not None:
            self.objects[self.robot.held_object].pose.position = new_tip
        return d - step <= ARRIVE_EPS

    def _move_base_towards(self, goal_xy: tuple[float, float], goal_yaw: float) -> None:
        base = self.robot.base_pose
        bx, by, bz = base.position
        dx, dy = goal_xy[0] - bx, goal_xy[1] - by
        d = math.hypot(dx, dy)
        if d > ARRIVE_EPS:
            step = min(d, self.base_speed)
            f = step / d
            bx, by = bx + dx * f, by + dy * f
            self.tick_base_dist += step
        dyaw = norm_angle(goal_yaw - base.yaw)
        turn = max(-self.turn_speed, min(self.turn_speed, dyaw))
        moved = (bx - base.position[0], by - base.position[1])
        old_base = base.position
        base.position = (bx, by, bz)
        base.yaw = norm_angle(base.yaw + turn)
        # the arm rides on the base: rigid translate + rotate about base z
        rel = (self.robot.arm_tip[0] - old_base[0],
               self.robot.arm_tip[1] - old_base[1])
        rx, ry = rotate_xy(rel[0], rel[1], turn)
        self.robot.arm_tip = (bx + rx, by + ry, self.robot.arm_tip[2])
        if self.robot.held_object is not None:
            held = self.objects[self.robot.held_object]
            held.pose.position = self.robot.arm_tip
            held.pose.yaw = norm_angle(held.pose.yaw + turn)

    # -- placement relations -------------------------------------------------

    def _settle(self, obj: ObjectState) -> None:
        """Recompute containment and support for a just-released object."""
        obj.container = None
        obj.supported_by = None
        pos = obj.pose.position
        for other in self.objects.values():
            if other.id == obj.id or not other.is_container:
                continue
            dz = pos[2] - other.pose.position[2]
            if (dist2(pos, other.pose.position) <= other.container_radius
                    and 0.0 <= dz <= CONTAIN_Z_WINDOW):
                obj.container = other.id
                return
        best = None
        for other in self.objects.values():
            if other.id == obj.id:
                continue
            dz = pos[2] - other.pose.position[2]
            if (dist2(pos, other.pose.position) <= other.support_radius
                    and 0.0 < dz <= SUPPORT_Z_WINDOW):
                if best is None or other.pose.position[2] > best.pose.position[2]:
                    best = other
        if best is not None:
            obj.supported_by = best.id

    def _attach(self, obj: ObjectState) -> None:
        self.robot.held_object = obj.id
        obj.container = None
        obj.supported_by = None

    # -- actions -------------------------------------------------------------

    def execute_action(self, act_kind: str, params: NodeParams) -> NodeStatus:
        """Advance one action by one tick. Post-conditions already met
        return SUCCESS without motion; infeasible actions return FAILURE;
        a tick that moves anything returns RUNNING (completion surfaces on
        the next tick), so at most one action moves per tick.
        """
        if act_kind == "idle!":
            return NodeStatus.RUNNING
        if act_kind == "grasp!":
            return self._grasp(params)
        if act_kind == "place!":
            return self._place(params)
        if act_kind == "place_in!":
            return self._place_in(params)
        if act_kind == "move_to!":
            return self._move_to(params)
        raise WorldError(f"unknown action kind {act_kind!r}")

    def _grasp(self, params: NodeParams) -> NodeStatus:
        target = self.obj(params.target_object)
        if self.robot.held_object == target.id:
            return NodeStatus.SUCCESS
        if self.robot.held_object is not None:
            return NodeStatus.FAILURE
        if not target.movable:
            return NodeStatus.FAILURE
        if self.supports_something(target.id) is not None:
            return NodeStatus.FAILURE  # blocked pick: something rests on it
        if not self.near(target.pose.position):
            return NodeStatus.FAILURE
        if self._move_arm_towards(target.pose.position):
            self._attach(target)
        return NodeStatus.RUNNING

    def _place(self, params: NodeParams) -> NodeStatus:
        target = self.obj(params.target_object)
        rel = self.obj(params.relative_object)
        if self.eval_condition("at_pos?", params):
            return NodeStatus.SUCCESS
        if self.robot.held_object != target.id:
            return NodeStatus.FAILURE
        dest = offset_point(rel.pose.position, rel.pose.yaw,
                            params.offset or (0.0, 0.0, 0.0))
        if not self.near(dest):
            return NodeStatus.FAILURE
        if self._move_arm_towards(dest):
            self.robot.held_object = None
            target.pose.position = dest
            target.pose.yaw = norm_angle(rel.pose.yaw + (params.angle or 0.0))
            self._settle(target)
        return NodeStatus.RUNNING

    def _place_in(self, params: NodeParams) -> NodeStatus:
        target = self.obj(params.target_object)
        container = self.obj(params.relative_object)
        if not container.is_container:
            return NodeStatus.FAILURE
        if target.container == container.id:
            return NodeStatus.SUCCESS
        if self.robot.held_object != target.id:
            return NodeStatus.FAILURE
        if not self.near(container.pose.position):
            return NodeStatus.FAILURE
        slot = (container.pose.position[0], container.pose.position[1],
                container.pose.position[2] + CONTAINER_SLOT_Z)
        if self._move_arm_towards(slot):
            self.robot.held_object = None
            target.pose.position = slot
            target.container = container.id
            target.supported_by = None
        return NodeStatus.RUNNING

    def _move_to(self, params: NodeParams) -> NodeStatus:
        target = self.obj(params.target_object)
        goal = offset_point(target.pose.position, target.pose.yaw,
                            params.offset or (0.0, 0.0))
        goal_yaw = norm_angle(target.pose.yaw + (params.angle or 0.0))
        if self.eval_condition("robot_at?", params):
            return NodeStatus.SUCCESS
        self._move_base_towards((goal[0], goal[1]), goal_yaw)
        return NodeStatus.RUNNING

    def command_for(self, node) -> ActionCommand:
        return ActionCommand(node_id=node.node_id, act_kind=node.kind,
                             params=node.params,
                             progress=self._remaining_motion(node.kind, node.params))

    def _remaining_motion(self, act_kind: str, params: NodeParams) -> float:
        if act_kind == "grasp!":
            return dist3(self.robot.arm_tip, self.obj(params.target_object).pose.position)
        if act_kind == "place!":
            rel = self.obj(params.relative_object)
            dest = offset_point(rel.pose.position, rel.pose.yaw,
                                params.offset or (0.0, 0.0, 0.0))
            return dist3(self.robot.arm_tip, dest)
        if act_kind == "place_in!":
            c = self.obj(params.relative_object)
            slot = (c.pose.position[0], c.pose.position[1],
                    c.pose.position[2] + CONTAINER_SLOT_Z)
            return dist3(self.robot.arm_tip, slot)
        if act_kind == "move_to!":
            t = self.obj(params.target_object)
            goal = offset_point(t.pose.position, t.pose.yaw,
                                params.offset or (0.0, 0.0))
            return dist2(self.robot.base_pose.position, goal)
        return 0.0

    # -- reporting -----------------------------------------------------------

    def summary(self) -> str:
        """Compact world description used in provider prompts and failures."""
        lines = [f"scenario: {self.scenario_id}"]
        base = self.robot.base_pose
        lines.append(f"robot base at ({base.position[0]:.2f}, {base.position[1]:.2f}),"
                     f" holding: {self.robot.held_object or 'nothing'}")
        for o in self.objects.values():
            flags = []
            if o.is_container:
                flags.append("container")
            if not o.movable:
                flags.append("static")
            rel = ""
            if o.container:
                rel = f" in {o.container}"
            elif o.supported_by:
                rel = f" on {o.supported_by}"
            tag = f" ({', '.join(flags)})" if flags else ""
            p = o.pose.position
            lines.append(f"- {o.id}{tag} at ({p[0]:.2f}, {p[1]:.2f}, {p[2]:.2f}){rel}")
        return "\n".join(lines)

    def state_dict(self) -> dict:
        return {"robot": self.robot.to_dict(),
                "objects": {k: v.to_dict() for k, v in self.objects.items()},
                "tick_index": self.tick_index}


# ---------------------------------------------------------------------------
# scenario loading

def _data_text(relative: str) -> str:
    return resources.files("btstudio").joinpath("data").joinpath(relative).read_text()


def scenario_names() -> tuple[str, ...]:
    return SCENARIO_NAMES


def load_scenario(name: str) -> World:
    if name not in SCENARIO_NAMES:
        raise WorldError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}")
    spec = json.loads(_data_text(f"scenarios/{name}.json"))
    objects: dict[str, ObjectState] = {}
    for od in spec["objects"]:
        obj = ObjectState(
            id=od["id"],
            pose=Pose(tuple(od["position"]), od.get("yaw", 0.0)),
            movable=od.get("movable", True),
            is_container=od.get("is_container", False),
            supported_by=od.get("supported_by"),
            container=od.get("container"),
            container_radius=od.get("container_radius", 0.15),
            support_radius=od.get("support_radius", 0.05),
        )
        objects[obj.id] = obj
    r = spec["robot"]
    robot = RobotState(base_pose=Pose(tuple(r["base_position"]), r.get("base_yaw", 0.0)),
                       arm_tip=tuple(r["arm_tip"]))
    goals = [GoalCondition.from_dict(g) for g in spec["goals"]]
    speeds = spec.get("speeds", {})
    return World(
        scenario_id=name,
        objects=objects,
        robot=robot,
        goals=goals,
        allowed_nodes=tuple(spec["allowed_nodes"]),
        description=spec.get("description", ""),
        goal_text=spec.get("goal_text", ""),
        base_speed=speeds.get("base", 0.5),
        turn_speed=speeds.get("turn", 0.5),
        arm_speed=speeds.get("arm", 0.5),
    )


def load_solution(name: str) -> BehaviorTree:
    """Reference solution tree shipped with each scenario."""
    from .tree import deserialize
    return deserialize(_data_text(f"solutions/{name}.json"))


def load_best_known() -> dict[str, float]:
    return json.loads(_data_text("best_known.json"))


def goal_condition_tree(world: World) -> BehaviorTree:
    """The scenario's benchmark goals as a Sequence of condition leaves,
    i.e. the tree a user would assemble in the goal editor.
    """
    from .tree import leaf, seq
    leaves = []
    for i, g in enumerate(world.goals, start=1):
        if g.kind == "containment":
            leaves.append(leaf("in?", target=g.target, relative=g.relative,
                               node_id=f"g{i}"))
        else:
            leaves.append(leaf("at_pos?", target=g.target, relative=g.relative,
                               offset=g.offset, angle=g.angle, node_id=f"g{i}"))
    return BehaviorTree(seq(*leaves, node_id="g0"))


def baseline_tree(world: World) -> BehaviorTree:
    """Minimal two-node tree that fails on its first tick: nothing is held
    at episode start, so a lone grasped? condition under a Sequence fails.
    """
    from .tree import leaf, seq
    target = sorted(world.movable_ids())[0]
    return BehaviorTree(seq(leaf("grasped?", target=target, node_id="b2"),
                            node_id="b1"))


# ---------------------------------------------------------------------------
# episode execution

def run_episode(tree_: BehaviorTree, world: World, max_ticks: int = MAX_TICKS,
                weights: Optional[ScoreWeights] = None,
                goals: Optional[list[GoalCondition]] = None,
                with_trace: bool = True) -> EpisodeResult:
    """Run one scored episode on a copy of ``world`` (the caller's world is
    untouched). Ends early on a root verdict, extrapolating the final tick
    over the remaining budget; otherwise times out at ``max_ticks``.
    """
    w = world.clone()
    weights = weights if weights is not None else ScoreWeights()
    goals = goals if goals is not None else w.goals
    m = metrics(tree_)
    index = preorder_index(tree_)
    last_running: Optional[int] = None
    totals: list[float] = []
    trace: list[TickRecord] = []
    arm_total = 0.0
    base_total = 0.0
    ended_early = False
    root_status = NodeStatus.RUNNING

    for t in range(1, max_ticks + 1):
        w.begin_tick()
        result = tick(tree_, w, index)
        root_status = result.root_status
        terminal = root_status in (NodeStatus.SUCCESS, NodeStatus.FAILURE)
        backtrack = 0
        if result.running_index is not None:
            if last_running is not None and result.running_index < last_running:
                backtrack = 1
            last_running = result.running_index
        events = TickEvents(
            timeout=int(t == max_ticks and not terminal),
            tree_failure=int(root_status is NodeStatus.FAILURE),
            failed_actions=result.failed_actions,
            backtrack=backtrack,
            holding=int(w.robot.held_object is not None),
        )
        delta = MotionDelta(w.tick_arm_dist, w.tick_base_dist)
        arm_total += delta.arm_dist
        base_total += delta.base_dist
        score = tick_score(w, m, events, delta, goals, weights)
        totals.append(score.total)
        if with_trace:
            trace.append(TickRecord(
                tick_index=t,
                root_status=root_status.value,
                statuses={nid: s.value for nid, s in result.statuses.items()},
                robot=w.robot.to_dict(),
                objects={oid: o.to_dict() for oid, o in w.objects.items()},
                score=score,
                events=events,
                commands=[c.to_dict() for c in result.issued],
            ))
        if terminal:
            ended_early = True
            break

    ticks_executed = len(totals)
    raw = accumulate(totals, ticks_executed, ended_early, max_ticks)
    remaining = (max_ticks - ticks_executed) if ended_early else 0
    components: dict[str, float] = {"goal": 0.0, "tree": 0.0, "energy": 0.0}
    if with_trace:
        for i, rec in enumerate(trace):
            factor = 1 + remaining if i == ticks_executed - 1 else 1
            components["goal"] += rec.score.goal * factor
            components["tree"] += rec.score.tree * factor
            components["energy"] += rec.score.energy * factor
    solved = all(g.met(w, weights) for g in goals)
    return EpisodeResult(
        raw_score=raw,
        components=components,
        ticks_executed=ticks_executed,
        solved=solved,
        root_status=root_status.value,
        ended_early=ended_early,
        arm_dist=arm_total,
        base_dist=base_total,
        trace=trace,
    )
