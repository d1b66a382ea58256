/** Wire formats of the btstudio API (see the repo README). */

export type ControlKind = 'Sequence' | 'Fallback';
export type ConditionKind = 'at_pos?' | 'grasped?' | 'in?' | 'robot_at?' | 'robot_near?';
export type ActionKind = 'grasp!' | 'place!' | 'place_in!' | 'move_to!' | 'idle!';
export type NodeKind = ControlKind | ConditionKind | ActionKind;

export const CONTROL_KINDS: ControlKind[] = ['Sequence', 'Fallback'];
export const CONDITION_KINDS: ConditionKind[] = [
  'at_pos?', 'grasped?', 'in?', 'robot_at?', 'robot_near?',
];
export const ACTION_KINDS: ActionKind[] = [
  'grasp!', 'place!', 'place_in!', 'move_to!', 'idle!',
];

/** Serialized tree node; unset fields are omitted on the wire. */
export interface TreeJson {
  kind: NodeKind;
  id: string;
  locked?: boolean;
  children?: TreeJson[];
  target?: string;
  relative?: string;
  offset?: number[];
  angle?: number;
}

export type NodeStatus = 'SUCCESS' | 'FAILURE' | 'RUNNING' | 'NOT_TICKED';

export interface Violation {
  kind: string;
  node_ids: string[];
}

export interface Pose {
  position: number[];
  yaw: number;
}

export interface ObjectStateJson {
  id: string;
  pose: Pose;
  movable: boolean;
  is_container: boolean;
  container: string | null;
  supported_by: string | null;
}

export interface RobotJson {
  base_pose: Pose;
  arm_tip: number[];
  held_object: string | null;
}

export interface WorldStateJson {
  robot: RobotJson;
  objects: Record<string, ObjectStateJson>;
  tick_index?: number;
}

export interface ScenarioDetail {
  name: string;
  description: string;
  goal_text: string;
  allowed_nodes: string[];
  objects: Record<string, ObjectStateJson>;
  robot: RobotJson;
  goals: Array<Record<string, unknown>>;
}

export interface TickRecordJson {
  tick_index: number;
  root_status: NodeStatus;
  statuses: Record<string, NodeStatus>;
  robot: RobotJson;
  objects: Record<string, ObjectStateJson>;
  score: { goal: number; tree: number; energy: number; total: number };
  commands: Array<{ node_id: string; act_kind: string; progress: number }>;
}

export interface EpisodeResultJson {
  raw_score: number;
  normalized_score: number | null;
  ticks_executed: number;
  solved: boolean;
  root_status: NodeStatus;
  trace: TickRecordJson[];
}

export interface SuggestionJson {
  tree: TreeJson;
  raw_score: number;
  normalized_score: number | null;
  size: number;
  solved: boolean;
  provenance: string;
  timestamp: number;
}

export interface SessionInfo {
  session_id: string;
  scenario: string;
  variant: string;
  remaining_seconds: number;
  expired: boolean;
  structure_allowed: boolean;
  assistant_enabled: boolean;
  llm_enabled: boolean;
  best_suggestion: SuggestionJson | null;
}

export interface StepResultJson {
  tick_index: number;
  root_status: NodeStatus | null;
  statuses: Record<string, NodeStatus>;
  world: WorldStateJson;
  solved: boolean;
}
