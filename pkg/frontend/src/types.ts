/** Wire payload shapes returned by the district and top-level endpoints. */

export interface CompatReport {
  contradictory: Array<{ attribute: string; existing: string; incoming: string }>;
  coincident: string[];
  complementary_existing: string[];
  complementary_incoming: string[];
  notes: string[];
  compatible: boolean;
}

export interface CandidateRow {
  local_id: number | string;
  attr_score: number;
  rel_score: number;
  report: CompatReport;
}

export interface RequestMessage {
  kind: string;
  report?: CompatReport;
  candidates?: CandidateRow[];
  notes?: string[];
}

export interface ActionRequest {
  request_id: string;
  ids: string[];
  data: {
    type_name?: string;
    local_id?: number;
    attributes?: Record<string, unknown>;
    provenance?: [string, string][];
    [key: string]: unknown;
  };
  iid: number;
  message: RequestMessage;
  status: string;
  history: Array<{ actor: string; action: string; status: string }>;
}

export type DecisionKind = "merge" | "create_new" | "split" | "fix_attributes";

export interface Decision {
  kind: DecisionKind;
  global_id?: string;
  edits?: Record<string, unknown>;
  move_bindings?: [number, number][];
  attributes_for_new?: Record<string, unknown>;
}

export interface ResolutionResult {
  request_id: string;
  status: string;
  bindings_by_instance: Record<string, Record<string, string>>;
}

export interface BindingRow {
  iid: number;
  local_id: number;
}

export interface MentionRow {
  iid: number;
  doc_id: string;
  ann_id: string;
  start: number;
  end: number;
  text?: string;
}

export interface RelationshipRow {
  rel: string;
  other: number | string;
  other_type: string | null;
  role: "source" | "target";
  validity: { start: string; end: string | null } | null;
}

export interface EntityView {
  permission: string;
  counts: Record<string, number>;
  entity?: {
    ref?: number | string;
    type?: string;
    attributes?: Record<string, unknown>;
  };
  relationships?: RelationshipRow[];
  mentions?: MentionRow[];
  documents?: Array<{ iid: number; doc_id: string; metadata?: Record<string, string> }>;
  editable?: boolean;
  read_only?: boolean;
  global_id?: string;
}

export interface QueryHit {
  match: { attr_score: number; rel_score: number };
  view: EntityView;
}

export interface FederatedHit {
  global_id: string;
  match: { attr_score: number; rel_score: number };
  view: EntityView;
  fragments: Array<{ iid: number; local_id?: number; denied?: boolean; view?: EntityView }>;
}

export interface QueryResult {
  proto_version: string;
  local_hits: QueryHit[];
  federated_hits: FederatedHit[];
  completeness: string;
  token?: string;
}

export interface DocumentSpan {
  tag: string;
  rendering: "plain" | "anonymized" | "redacted";
  entity_ref?: number | string;
  section: string;
  start: number;
  end: number;
}

export interface DocumentView {
  doc_id: string;
  metadata: Record<string, string>;
  sections: Array<{ name: string; content: string }>;
  counts: Record<string, number>;
  annotations: DocumentSpan[];
}

export interface GraphNode {
  kind: "entity" | "document" | "document_counts";
  ref?: number | string;
  type?: string;
  attributes?: Record<string, unknown>;
  counts?: Record<string, number>;
  doc_id?: string;
  metadata?: Record<string, string>;
}

export interface GraphEdge {
  kind: "mention" | "relationship";
  rel?: string;
  source: string;
  target: string;
}

export interface GraphPayload {
  nodes: Record<string, GraphNode>;
  edges: GraphEdge[];
}

export interface ApiErrorPayload {
  code: string;
  message: string;
  details?: Record<string, unknown>;
}
