import { ApiError, FleetClient } from "./client.js";
import { openEventStream } from "./stream.js";
import {
  acknowledgeAlert,
  applyFleet,
  applyPipelines,
  applyRecord,
  beginPending,
  debugFooter,
  newState,
  resolvePending,
  unackedCount,
} from "./state.js";
import { buildGrid, renderGrid } from "./grid.js";
import { renderChart } from "./charts.js";
import type { PipelineInfo } from "./types.js";

const base = (window as { FLEETOPS_BASE?: string }).FLEETOPS_BASE ?? window.location.origin;
const client = new FleetClient(base);
const state = newState();

const $ = (id: string) => document.getElementById(id)!;

let renderQueued = false;
function scheduleRender(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    render();
  });
}

function toast(msg: string, isError = false): void {
  const el = $("toast");
  el.textContent = msg;
  el.className = isError ? "toast error" : "toast";
  el.classList.remove("hidden");
  setTimeout(() => el.classList.add("hidden"), 4000);
}

function surface(err: unknown): void {
  if (err instanceof ApiError) {
    toast(`${err.status} ${err.message}`, true);
  } else {
    toast(String(err), true);
  }
}

async function command(key: string, label: string, run: () => Promise<{ applied_t: number }>) {
  beginPending(state, key, label);
  scheduleRender();
  try {
    const res = await run();
    toast(`${label} applied at t=${res.applied_t.toFixed(1)}`);
  } catch (err) {
    surface(err);
  } finally {
    resolvePending(state, key);
    scheduleRender();
  }
}

async function refreshFleet(): Promise<void> {
  try {
    applyFleet(state, await client.fleet());
  } catch (err) {
    surface(err);
  }
  scheduleRender();
}

async function refreshPipelines(): Promise<void> {
  try {
    applyPipelines(state, await client.pipelines());
  } catch (err) {
    surface(err);
  }
  scheduleRender();
}

async function refreshChart(): Promise<void> {
  const sid = state.selected;
  const seriesSel = $("series-select") as HTMLSelectElement;
  if (!sid) {
    $("chart-box").innerHTML = `<div class="chart-hint">select a system</div>`;
    return;
  }
  try {
    const payload = await client.metrics(sid, seriesSel.value);
    $("chart-box").innerHTML = renderChart({
      width: 560,
      height: 180,
      sets: payload.sets,
      annotations: state.annotations.map((a) => ({
        id: a.id,
        t_start: a.t_start,
        t_end: a.t_end,
        category: a.category,
        text: a.text,
        systems: a.systems,
      })),
    });
    $("chart-title").textContent = `${sid} ${seriesSel.value}`;
  } catch (err) {
    surface(err);
  }
}

function pipelineRow(p: PipelineInfo): string {
  const pendingKey = `pipeline:${p.id}`;
  const pending = state.pending.has(pendingKey) ? " (pending)" : "";
  const jobs = p.jobs
    .map((j) => `<span class="job job-${j.state}" title="${j.name}: ${j.state}">${j.name}</span>`)
    .join(" ");
  const canApprove = p.vote === 1 && !p.approved;
  return `<tr>
    <td>${p.id}</td><td>${p.kind}</td><td>${p.revision}</td>
    <td class="pstate-${p.state}">${p.state}${pending}</td>
    <td>${p.vote === null ? "" : p.vote > 0 ? "+1" : "-1"}</td>
    <td>${jobs}</td>
    <td>${canApprove ? `<button class="approve" data-pid="${p.id}">approve</button>` : p.approved ? "approved" : ""}</td>
  </tr>`;
}

function render(): void {
  if (state.fleet) {
    $("grid-box").innerHTML = renderGrid(buildGrid(state.fleet, state));
    $("queue-box").textContent = state.fleet.queue.length
      ? `queue: ${state.fleet.queue.map((q) => `${q.id}(${q.user})`).join(", ")}`
      : "queue: empty";
    $("revision-box").textContent = `stable ${state.fleet.stable_revision}`;
  }

  $("pipeline-rows").innerHTML = state.pipelines.map(pipelineRow).join("");

  const alertRows = [...state.alerts]
    .reverse()
    .slice(0, 40)
    .map(
      (a) => `<li class="alert-${a.transition}${a.acked ? " acked" : ""}">
        <span>t=${a.t.toFixed(0)} ${a.rule} ${a.system} ${a.transition} (${a.severity})</span>
        ${a.transition === "firing" && !a.acked ? `<button class="ack" data-seq="${a.seq}">ack</button>` : ""}
      </li>`,
    )
    .join("");
  $("alert-list").innerHTML = alertRows || `<li class="quiet">no alerts</li>`;
  $("alert-count").textContent = String(unackedCount(state));

  $("annotation-list").innerHTML =
    state.annotations
      .slice(-20)
      .reverse()
      .map((a) => `<li>[${a.category}] t=${a.t_start.toFixed(0)} ${a.text}</li>`)
      .join("") || `<li class="quiet">none</li>`;

  const sel = state.selected;
  $("selected-box").textContent = sel ?? "none";
  ($("btn-drain") as HTMLButtonElement).disabled = sel === null;
  ($("btn-undrain") as HTMLButtonElement).disabled = sel === null;
  ($("btn-health") as HTMLButtonElement).disabled = sel === null;

  $("footer").textContent = debugFooter(state);
}

function wire(): void {
  $("grid-box").addEventListener("click", (ev) => {
    const cell = (ev.target as HTMLElement).closest<HTMLElement>("[data-sid]");
    if (!cell) return;
    state.selected = cell.dataset.sid ?? null;
    scheduleRender();
    void refreshChart();
  });

  $("btn-drain").addEventListener("click", () => {
    const sid = state.selected;
    if (sid) void command(`system:${sid}`, `drain ${sid}`, () => client.drain(sid));
  });
  $("btn-undrain").addEventListener("click", () => {
    const sid = state.selected;
    if (sid) void command(`system:${sid}`, `undrain ${sid}`, () => client.undrain(sid));
  });
  $("btn-health").addEventListener("click", () => {
    const sid = state.selected;
    if (!sid) return;
    void command(`system:${sid}`, `health check ${sid}`, async () => {
      const res = await client.healthCheck(sid);
      toast(`${sid} health ${res.ok ? "ok" : "NOT OK"}`);
      return res;
    });
  });

  $("annotate-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const category = ($("ann-category") as HTMLSelectElement).value;
    const text = ($("ann-text") as HTMLInputElement).value.trim();
    if (!text) return;
    const systems = state.selected ? [state.selected] : [];
    void command("annotate", "annotation", () => client.annotate({ category, text, systems }));
    ($("ann-text") as HTMLInputElement).value = "";
  });

  $("pipeline-rows").addEventListener("click", (ev) => {
    const btn = (ev.target as HTMLElement).closest<HTMLElement>("button.approve");
    if (!btn) return;
    const pid = btn.dataset.pid!;
    void command(`pipeline:${pid}`, `approve ${pid}`, () => client.approve(pid));
  });

  $("alert-list").addEventListener("click", (ev) => {
    const btn = (ev.target as HTMLElement).closest<HTMLElement>("button.ack");
    if (!btn) return;
    acknowledgeAlert(state, Number(btn.dataset.seq));
    scheduleRender();
  });
}

async function start(): Promise<void> {
  wire();
  try {
    const status = await client.status();
    $("scenario-box").textContent = `${status.scenario} seed ${status.seed} pace ${status.pace}x`;
  } catch (err) {
    surface(err);
  }
  await refreshFleet();
  await refreshPipelines();

  openEventStream(base, (rec) => {
    applyRecord(state, rec);
    scheduleRender();
  }, {
    onError: () => toast("event stream dropped, reconnecting", true),
    onEnd: () => scheduleRender(),
  });

  // journal records mark snapshots dirty; refetch on a short cadence
  setInterval(() => {
    if (state.fleetDirty) void refreshFleet();
    if (state.pipelinesDirty) void refreshPipelines();
  }, 500);
  setInterval(() => void refreshFleet(), 5000);
  setInterval(() => void refreshChart(), 2500);
}

void start();
