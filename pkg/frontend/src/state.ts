import type {
  AlertRecord,
  AnnotationRecord,
  FleetSnapshot,
  JournalRecord,
  PipelineInfo,
} from "./types.js";

// Everything rendered comes from a server snapshot or a journal record;
// the reducer never fabricates a status. Commands in flight only add a
// pending marker, cleared by the applied-time acknowledgment.

export interface AlertEntry {
  seq: number;
  t: number;
  rule: string;
  system: string;
  transition: "firing" | "resolved";
  severity: string;
  value: number;
  acked: boolean;
}

export interface PendingCommand {
  key: string;
  label: string;
  startedAt: number;
}

export interface ConsoleState {
  fleet: FleetSnapshot | null;
  pipelines: PipelineInfo[];
  lastSeq: number;
  gaps: number[]; // seqs that arrived non-contiguously
  feed: JournalRecord[];
  alerts: AlertEntry[];
  annotations: AnnotationRecord[];
  pending: Map<string, PendingCommand>;
  selected: string | null;
  finished: boolean;
  // set when a record implies the snapshot is stale; main() refetches
  fleetDirty: boolean;
  pipelinesDirty: boolean;
}

export const FEED_LIMIT = 500;

export function newState(): ConsoleState {
  return {
    fleet: null,
    pipelines: [],
    lastSeq: 0,
    gaps: [],
    feed: [],
    alerts: [],
    annotations: [],
    pending: new Map(),
    selected: null,
    finished: false,
    fleetDirty: false,
    pipelinesDirty: false,
  };
}

export function applyFleet(state: ConsoleState, snap: FleetSnapshot): void {
  state.fleet = snap;
  state.fleetDirty = false;
  if (state.selected && !snap.systems.some((s) => s.id === state.selected)) {
    state.selected = null;
  }
}

export function applyPipelines(state: ConsoleState, pipelines: PipelineInfo[]): void {
  state.pipelines = pipelines;
  state.pipelinesDirty = false;
}

export function applyRecord(state: ConsoleState, rec: JournalRecord): void {
  if (rec.seq <= state.lastSeq) {
    return; // duplicate after a resume; already applied
  }
  if (state.lastSeq > 0 && rec.seq !== state.lastSeq + 1) {
    state.gaps.push(rec.seq);
  }
  state.lastSeq = rec.seq;
  state.feed.push(rec);
  if (state.feed.length > FEED_LIMIT) {
    state.feed.splice(0, state.feed.length - FEED_LIMIT);
  }
  switch (rec.kind) {
    case "allocation":
      state.fleetDirty = true;
      break;
    case "pipeline":
      state.pipelinesDirty = true;
      break;
    case "alert":
      state.alerts.push(toAlertEntry(rec));
      state.fleetDirty = true; // cell badges change
      break;
    case "annotation":
      state.annotations.push(rec);
      break;
    case "run_end":
      state.finished = true;
      break;
  }
}

function toAlertEntry(rec: AlertRecord): AlertEntry {
  return {
    seq: rec.seq,
    t: rec.t,
    rule: rec.rule,
    system: rec.system,
    transition: rec.transition,
    severity: rec.severity,
    value: rec.value,
    acked: false,
  };
}

export function acknowledgeAlert(state: ConsoleState, seq: number): void {
  const entry = state.alerts.find((a) => a.seq === seq);
  if (entry) entry.acked = true;
}

export function unackedCount(state: ConsoleState): number {
  return state.alerts.filter((a) => a.transition === "firing" && !a.acked).length;
}

export function beginPending(state: ConsoleState, key: string, label: string): void {
  state.pending.set(key, { key, label, startedAt: Date.now() });
}

export function resolvePending(state: ConsoleState, key: string): void {
  state.pending.delete(key);
}

export function pendingFor(state: ConsoleState, key: string): PendingCommand | undefined {
  return state.pending.get(key);
}

// One-line provenance footer: the seq everything on screen derives from.
export function debugFooter(state: ConsoleState): string {
  const snap = state.fleet ? `t=${state.fleet.t.toFixed(1)}` : "no snapshot";
  const gaps = state.gaps.length ? ` gaps=[${state.gaps.join(",")}]` : "";
  const end = state.finished ? " finished" : "";
  return `seq ${state.lastSeq} ${snap}${gaps}${end}`;
}
