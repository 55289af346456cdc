import { describe, expect, it } from "vitest";

import { buildGrid, headline, renderGrid } from "../src/grid.js";
import { newState } from "../src/state.js";
import type { FleetSnapshot, SystemInfo } from "../src/types.js";

function system(id: string, drawer: string, rack: string, over: Partial<SystemInfo> = {}): SystemInfo {
  return {
    id,
    drawer,
    rack,
    productive: true,
    op_state: "free",
    drain_pending: false,
    allocation: null,
    user: null,
    power: { dc12: true, analog: true, controller: true },
    fpga_revision: "stable-1",
    probe: null,
    alerts: [],
    ...over,
  };
}

// Two racks, four drawers each, two systems per drawer: the default fleet
// shape. The last drawer of r2 holds the three non-productive systems'
// drawer mates, so mark s13..s15 non-productive.
function fullSnapshot(): FleetSnapshot {
  const systems: SystemInfo[] = [];
  const drawers = [];
  const racks = [];
  let n = 0;
  for (const rack of ["r1", "r2"]) {
    const rackDrawers: string[] = [];
    for (let d = 1; d <= 4; d++) {
      const did = `${rack}d${d}`;
      const pair: string[] = [];
      for (let k = 0; k < 2; k++) {
        const sid = `s${String(n).padStart(2, "0")}`;
        systems.push(system(sid, did, rack, { productive: n < 13 }));
        pair.push(sid);
        n++;
      }
      drawers.push({ id: did, rack, systems: pair, dc12: true });
      rackDrawers.push(did);
    }
    racks.push({ id: rack, drawers: rackDrawers });
  }
  return {
    t: 60,
    scenario: "baseline",
    stable_revision: "stable-1",
    systems,
    drawers,
    racks,
    queue: [],
  };
}

describe("grid grouping", () => {
  it("groups rack -> drawer -> system and counts productive", () => {
    const model = buildGrid(fullSnapshot());
    expect(model.systems).toBe(16);
    expect(model.productive).toBe(13);
    expect(model.racks.map((r) => r.id)).toEqual(["r1", "r2"]);
    expect(model.racks[0]!.drawers).toHaveLength(4);
    expect(model.racks[0]!.drawers[0]!.cells.map((c) => c.system.id)).toEqual(["s00", "s01"]);
    expect(headline(model)).toBe("16 systems / 13 productive");
  });

  it("classes cells by op state, alerts and power", () => {
    const snap = fullSnapshot();
    snap.systems[1] = system("s01", "r1d1", "r1", {
      op_state: "allocated",
      user: "alice",
      allocation: "a0007",
    });
    snap.systems[2] = system("s02", "r1d2", "r1", { op_state: "drained" });
    snap.systems[3] = system("s03", "r1d2", "r1", {
      alerts: ["temp_high"],
      power: { dc12: true, analog: false, controller: true },
    });
    const model = buildGrid(snap);
    const cells = new Map(
      model.racks.flatMap((r) => r.drawers.flatMap((d) => d.cells)).map((c) => [c.system.id, c]),
    );
    expect(cells.get("s01")!.classes).toContain("op-allocated");
    expect(cells.get("s01")!.badge).toBe("alice");
    expect(cells.get("s02")!.classes).toContain("op-drained");
    expect(cells.get("s03")!.classes).toContain("alerting");
    expect(cells.get("s03")!.classes).toContain("power-fault");
    expect(cells.get("s03")!.badge).toBe("!");
    expect(cells.get("s15")!.classes).toContain("nonproductive");
  });

  it("marks pending and selected cells from console state", () => {
    const st = newState();
    st.selected = "s00";
    st.pending.set("system:s01", { key: "system:s01", label: "drain s01", startedAt: 0 });
    const model = buildGrid(fullSnapshot(), st);
    const cells = model.racks[0]!.drawers[0]!.cells;
    expect(cells[0]!.classes).toContain("selected");
    expect(cells[1]!.classes).toContain("pending");
  });
});

describe("grid rendering", () => {
  it("renders one button per system with the headline", () => {
    const html = renderGrid(buildGrid(fullSnapshot()));
    expect(html).toContain("16 systems / 13 productive");
    expect(html.match(/data-sid=/g)).toHaveLength(16);
    expect(html.match(/class="rack"/g)).toHaveLength(2);
  });

  it("renders an empty-state view for an empty topology", () => {
    const html = renderGrid(
      buildGrid({
        t: 0,
        scenario: "empty",
        stable_revision: "none",
        systems: [],
        drawers: [],
        racks: [],
        queue: [],
      }),
    );
    expect(html).toContain("no systems");
    expect(html).not.toContain("data-sid");
  });

  it("escapes html in server-provided strings", () => {
    const snap = fullSnapshot();
    snap.systems[0] = system("s00", "r1d1", "r1", {
      op_state: "allocated",
      user: `<img src=x onerror=alert(1)>`,
    });
    const html = renderGrid(buildGrid(snap));
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
  });
});
