// Payload shapes of the fleetops HTTP API. These mirror the JSON the
// server emits; nothing here is invented client-side.

export interface StatusPayload {
  scenario: string;
  seed: number;
  pace: number;
  duration_s: number;
  finished: boolean;
  seq: number;
  t: number;
  events: number;
}

export interface PowerBits {
  dc12: boolean;
  analog: boolean;
  controller: boolean;
}

export interface ProbeSummary {
  t: number;
  ok: number;
  rtt_s: number | null;
}

export interface SystemInfo {
  id: string;
  drawer: string;
  rack: string;
  productive: boolean;
  op_state: "free" | "allocated" | "drained";
  drain_pending: boolean;
  allocation: string | null;
  user: string | null;
  power: PowerBits;
  fpga_revision: string;
  probe: ProbeSummary | null;
  alerts: string[];
}

export interface DrawerInfo {
  id: string;
  rack: string;
  systems: string[];
  dc12: boolean;
}

export interface RackInfo {
  id: string;
  drawers: string[];
}

export interface FleetSnapshot {
  t: number;
  scenario: string;
  stable_revision: string;
  systems: SystemInfo[];
  drawers: DrawerInfo[];
  racks: RackInfo[];
  queue: { id: string; user: string; selector: string; t_submit: number }[];
}

export interface MetricSet {
  key: string;
  tags: Record<string, string>;
  points: [number, number][];
}

export interface MetricsPayload {
  system: string;
  series: string;
  from: number;
  to: number;
  res: number | null;
  sets: MetricSet[];
  applied_t: number;
}

export interface AlertInfo {
  t: number;
  rule: string;
  system: string;
  transition: "firing" | "resolved";
  severity: string;
  value: number;
}

export interface AnnotationInfo {
  id: string;
  t_start: number;
  t_end: number | null;
  category: string;
  text: string;
  systems: string[];
}

export interface JobInfo {
  name: string;
  state: string;
  outcome: "pass" | "fail" | null;
  t_start: number | null;
  t_end: number | null;
  pool: string | null;
  runner: string | null;
}

export interface PipelineInfo {
  id: string;
  kind: string;
  revision: string;
  state: string;
  vote: number | null;
  approved: boolean;
  artifact: string | null;
  jobs: JobInfo[];
}

// Journal records from GET /events (NDJSON). Discriminated on `kind`.

interface JournalBase {
  seq: number;
  t: number;
}

export interface AllocationRecord extends JournalBase {
  kind: "allocation";
  op: string;
  allocation: string;
  user: string;
  node: string;
  system: string | null;
  system_state: string | null;
  generation: number;
}

export interface PipelineRecord extends JournalBase {
  kind: "pipeline";
  pipeline: string;
  transition: string;
  job: string | null;
  outcome: string | null;
}

export interface AlertRecord extends JournalBase {
  kind: "alert";
  rule: string;
  system: string;
  transition: "firing" | "resolved";
  severity: string;
  value: number;
}

export interface AnnotationRecord extends JournalBase {
  kind: "annotation";
  id: string;
  t_start: number;
  t_end: number | null;
  category: string;
  text: string;
  systems: string[];
}

export interface RunEndRecord extends JournalBase {
  kind: "run_end";
}

export type JournalRecord =
  | AllocationRecord
  | PipelineRecord
  | AlertRecord
  | AnnotationRecord
  | RunEndRecord;

export interface ApiErrorBody {
  error: string;
  detail?: unknown;
}
