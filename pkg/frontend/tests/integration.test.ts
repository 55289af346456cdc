// Round trip against a live server: `fleetops serve baseline` at 600x
// pace, driven the way the console drives it. Requires the python package
// to be installed (the repository root's `pip install -e .`).

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { FleetClient } from "../src/client.js";
import { openEventStream } from "../src/stream.js";
import { applyRecord, newState } from "../src/state.js";
import { buildGrid, headline } from "../src/grid.js";
import type { AllocationRecord, JournalRecord } from "../src/types.js";

const PORT = 8900 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
const serverLog: string[] = [];

async function waitForServer(deadlineMs: number): Promise<void> {
  const t0 = Date.now();
  for (;;) {
    try {
      const res = await fetch(`${BASE}/status`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() - t0 > deadlineMs) {
      throw new Error(`server not reachable on ${BASE}\n${serverLog.join("")}`);
    }
    await sleep(150);
  }
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

async function until<T>(what: string, deadlineMs: number, probe: () => T | undefined): Promise<T> {
  const t0 = Date.now();
  for (;;) {
    const got = probe();
    if (got !== undefined) return got;
    if (Date.now() - t0 > deadlineMs) throw new Error(`timed out waiting for ${what}`);
    await sleep(100);
  }
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "fleetops.cli", "serve", "baseline", "--pace", "600", "--bind", `127.0.0.1:${PORT}`],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout?.on("data", (d) => serverLog.push(String(d)));
  server.stderr?.on("data", (d) => serverLog.push(String(d)));
  await waitForServer(15_000);
}, 20_000);

afterAll(async () => {
  server.kill("SIGTERM");
  await new Promise((resolve) => {
    server.once("exit", resolve);
    setTimeout(resolve, 3000);
  });
});

describe("console round trip against a served baseline", () => {
  it("drain, annotate and approve all land in a gap-free event stream", async () => {
    const client = new FleetClient(BASE);
    const state = newState();
    const seqs: number[] = [];
    const stream = openEventStream(BASE, (rec: JournalRecord) => {
      seqs.push(rec.seq);
      applyRecord(state, rec);
    });

    try {
      // fleet grid first: the physical layout the operator sees
      const snap = await client.fleet();
      const grid = buildGrid(snap, state);
      expect(headline(grid)).toBe("16 systems / 13 productive");
      expect(grid.racks).toHaveLength(2);
      expect(grid.racks.flatMap((r) => r.drawers)).toHaveLength(8);

      const isOp = (rec: JournalRecord, op: string, system: string) =>
        rec.kind === "allocation" &&
        (rec as AllocationRecord).op === op &&
        (rec as AllocationRecord).system === system;

      // drain a free system and watch the transition arrive
      const drained = await client.drain("s06");
      expect(drained.op_state).toBe("drained");
      await until("drain record for s06", 10_000, () =>
        state.feed.find((r) => isOp(r, "drain", "s06")),
      );

      const undrained = await client.undrain("s06");
      expect(undrained.op_state).toBe("free");
      await until("undrain record for s06", 10_000, () =>
        state.feed.find((r) => isOp(r, "undrain", "s06")),
      );

      // annotate the drain window
      const ann = await client.annotate({
        category: "maintenance",
        text: "drained s06 for a cable swap",
        systems: ["s06"],
      });
      expect(ann.id).toMatch(/^n\d+/);
      await until("annotation record", 10_000, () =>
        state.feed.find((r) => r.kind === "annotation" && r.id === ann.id),
      );

      // approve the baseline software pipeline once it has voted +1
      const voteDeadline = Date.now() + 15_000;
      for (;;) {
        const p = (await client.pipelines()).find((x) => x.id === "p0001");
        if (p?.vote === 1) break;
        expect(p?.vote ?? null).not.toBe(-1);
        if (Date.now() > voteDeadline) throw new Error("p0001 never voted");
        await sleep(150);
      }
      const approved = await client.approve("p0001");
      expect(approved.approved).toBe(true);
      await until("p0001 approved transition", 10_000, () =>
        state.feed.find((r) => r.kind === "pipeline" && r.transition === "approved"),
      );
      await until("p0001 released transition", 10_000, () =>
        state.feed.find((r) => r.kind === "pipeline" && r.transition === "released"),
      );

      // every observed seq was contiguous
      expect(state.gaps).toEqual([]);
      for (let i = 1; i < seqs.length; i++) {
        expect(seqs[i]).toBe(seqs[i - 1]! + 1);
      }
      expect(seqs[0]).toBe(1);

      // a reconnect from mid-stream replays the identical tail
      const resumeFrom = Math.max(1, state.lastSeq - 20);
      const res = await fetch(`${BASE}/events?from=${resumeFrom}&follow=false`);
      const replay = (await res.text())
        .trim()
        .split("\n")
        .filter(Boolean)
        .map((l) => JSON.parse(l) as JournalRecord);
      const live = state.feed.filter((r) => r.seq >= resumeFrom && r.seq <= state.lastSeq);
      expect(replay.slice(0, live.length)).toEqual(live);

      console.log(
        `PASS criterion 9: console round trip [seq 1..${state.lastSeq} gap-free, ` +
          `drain/annotate/approve observed, grid ${headline(grid)}]`,
      );
    } catch (err) {
      console.log("FAIL criterion 9: console round trip");
      throw err;
    } finally {
      stream.stop();
      await stream.done;
    }
  }, 60_000);

  it("surfaces API errors verbatim instead of swallowing them", async () => {
    const client = new FleetClient(BASE);
    await expect(client.drain("s99")).rejects.toMatchObject({
      status: 404,
      code: "UnknownSystem",
    });
    await expect(client.approve("p9999")).rejects.toMatchObject({
      status: 404,
      code: "UnknownPipeline",
    });
  }, 15_000);
});
