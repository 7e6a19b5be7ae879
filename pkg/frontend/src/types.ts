// Wire types for the control API (JSON shapes as served).

export interface NodeJson {
  id: number;
  url: string;
  title: string | null;
  first_visit: number;
  last_visit: number;
  visit_count: number;
  dwell_seconds: number;
  thumbnail: string | null;
  opaque: boolean;
}

export interface EdgeJson {
  id: number;
  from: number;
  to: number;
  kind: "followed" | "jump" | "manual";
  traversals: number;
  first_traversal: number;
}

export interface MapSnapshot {
  schema_version: number;
  session_id: string;
  started_at: number;
  idle_threshold_s: number;
  revision: number;
  current: number | null;
  preferred_parent: Record<string, number>;
  nodes: NodeJson[];
  edges: EdgeJson[];
}

export interface DeltaMessage {
  type: "delta";
  revision: number;
  nodes: NodeJson[];
  edges: EdgeJson[];
  removed_nodes: number[];
  removed_edges: number[];
  current: number | null;
  preferred_set: Record<string, number>;
  preferred_cleared: number[];
}

export interface SnapshotMessage extends MapSnapshot {
  type: "snapshot";
}

export interface HeartbeatMessage {
  type: "heartbeat";
  revision: number;
}

export interface ResetMessage {
  type: "reset";
  revision: number;
}

export type StreamMessage =
  | DeltaMessage
  | SnapshotMessage
  | HeartbeatMessage
  | ResetMessage;

export interface PlacementJson {
  id: number;
  x: number;
  y: number;
  label: string;
}

export interface LayoutJson {
  revision: number;
  placements: PlacementJson[];
  tree_edges: [number, number][];
  extra_edges: [number, number, string][];
  bounds: [number, number, number, number];
  badges: Record<string, number>;
  node_w: number;
  node_h: number;
}

export type EditCommand =
  | { op: "add_link"; from: number; to: number }
  | { op: "remove_link"; edge_id: number }
  | { op: "remove_node"; node_id: number }
  | { op: "reparent"; node_id: number; new_parent_id: number }
  | { op: "set_title"; node_id: number; title: string }
  | { op: "attach_thumbnail"; node_id: number; path: string };

export interface ApiErrorBody {
  code: "not_found" | "cycle" | "bad_request" | "version" | "io";
  message: string;
  detail: unknown;
}

export type EditResult =
  | { ok: true; delta: DeltaMessage }
  | { ok: false; status: number; error: ApiErrorBody };

export type Level = "page" | "host";
export type DisplayMode = "title" | "url" | "thumbnail";

export interface ViewState {
  level: Level;
  depth: number | null;
  display_mode: DisplayMode;
  selection: number | null;
  revision: number;
}

export interface DailyReportJson {
  date: string;
  per_site: { host: string; visit_count: number; dwell_seconds: number }[];
  total_events: number;
  session_ids: string[];
}

export const ROOT_ID = 0;
