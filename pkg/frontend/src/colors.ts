/**
 * Node status to border color: green means Success, red means Failure,
 * yellow means Running, grey means the node was not ticked.
 */

import type { NodeStatus } from './types.js';

export const STATUS_COLORS: Record<NodeStatus, string> = {
  SUCCESS: '#2e7d32',    // green
  FAILURE: '#c62828',    // red
  RUNNING: '#f9a825',    // yellow
  NOT_TICKED: '#9e9e9e', // grey
};

/** Border color for an editor node outside of playback. */
export const IDLE_BORDER = '#5c6b7a';

export function statusColor(status: NodeStatus | undefined): string {
  return status ? STATUS_COLORS[status] : IDLE_BORDER;
}
