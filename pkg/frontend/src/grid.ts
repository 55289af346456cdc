import type { FleetSnapshot, SystemInfo } from "./types.js";
import type { ConsoleState } from "./state.js";

// Fleet grid: rack -> drawer -> system, mirroring the physical layout.

export interface GridCell {
  system: SystemInfo;
  classes: string[];
  badge: string;
}

export interface GridDrawer {
  id: string;
  dc12: boolean;
  cells: GridCell[];
}

export interface GridRack {
  id: string;
  drawers: GridDrawer[];
}

export interface GridModel {
  racks: GridRack[];
  systems: number;
  productive: number;
}

export function buildGrid(snap: FleetSnapshot, state?: ConsoleState): GridModel {
  const byId = new Map(snap.systems.map((s) => [s.id, s]));
  const drawerById = new Map(snap.drawers.map((d) => [d.id, d]));
  const racks: GridRack[] = [];
  for (const rack of [...snap.racks].sort((a, b) => a.id.localeCompare(b.id))) {
    const drawers = rack.drawers.map((did) => {
      const d = drawerById.get(did);
      return {
        id: did,
        dc12: d?.dc12 ?? false,
        cells: (d?.systems ?? []).map((sid) => toCell(byId.get(sid), sid, state)),
      };
    });
    racks.push({ id: rack.id, drawers });
  }
  return {
    racks,
    systems: snap.systems.length,
    productive: snap.systems.filter((s) => s.productive).length,
  };
}

function toCell(sys: SystemInfo | undefined, sid: string, state?: ConsoleState): GridCell {
  if (!sys) {
    return { system: missing(sid), classes: ["cell", "missing"], badge: "?" };
  }
  const classes = ["cell", `op-${sys.op_state}`];
  if (!sys.productive) classes.push("nonproductive");
  if (sys.drain_pending) classes.push("drain-pending");
  if (sys.alerts.length > 0) classes.push("alerting");
  if (!sys.power.dc12 || !sys.power.analog) classes.push("power-fault");
  if (state?.pending.has(`system:${sid}`)) classes.push("pending");
  if (state?.selected === sid) classes.push("selected");
  let badge = "";
  if (sys.alerts.length > 0) badge = "!";
  else if (sys.op_state === "allocated" && sys.user) badge = sys.user;
  return { system: sys, classes, badge };
}

function missing(sid: string): SystemInfo {
  return {
    id: sid,
    drawer: "",
    rack: "",
    productive: false,
    op_state: "free",
    drain_pending: false,
    allocation: null,
    user: null,
    power: { dc12: false, analog: false, controller: false },
    fpga_revision: "",
    probe: null,
    alerts: [],
  };
}

export function headline(model: GridModel): string {
  return `${model.systems} systems / ${model.productive} productive`;
}

const esc = (s: string) =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");

export function renderGrid(model: GridModel): string {
  if (model.systems === 0) {
    return `<div class="grid-empty">no systems in topology</div>`;
  }
  const rackHtml = model.racks
    .map(
      (rack) => `
    <div class="rack" data-rack="${esc(rack.id)}">
      <div class="rack-label">${esc(rack.id)}</div>
      ${rack.drawers
        .map(
          (d) => `
      <div class="drawer ${d.dc12 ? "" : "drawer-dark"}" data-drawer="${esc(d.id)}">
        <span class="drawer-label">${esc(d.id)}</span>
        ${d.cells
          .map(
            (c) => `
        <button class="${c.classes.join(" ")}" data-sid="${esc(c.system.id)}"
                title="${esc(cellTitle(c.system))}">
          <span class="cell-id">${esc(c.system.id)}</span>
          <span class="cell-badge">${esc(c.badge)}</span>
        </button>`,
          )
          .join("")}
      </div>`,
        )
        .join("")}
    </div>`,
    )
    .join("");
  return `<div class="grid-head">${esc(headline(model))}</div><div class="racks">${rackHtml}</div>`;
}

function cellTitle(sys: SystemInfo): string {
  const bits = [sys.id, sys.op_state];
  if (sys.user) bits.push(`user ${sys.user}`);
  if (sys.drain_pending) bits.push("drain pending");
  if (sys.alerts.length) bits.push(`alerts: ${sys.alerts.join(", ")}`);
  bits.push(`rev ${sys.fpga_revision}`);
  return bits.join(" | ");
}
