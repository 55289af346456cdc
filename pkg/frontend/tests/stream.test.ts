import { describe, expect, it } from "vitest";

import { ndjsonLines } from "../src/stream.js";

function chunked(chunks: string[]): ReadableStream<Uint8Array> {
  const enc = new TextEncoder();
  let i = 0;
  return new ReadableStream({
    pull(ctl) {
      if (i < chunks.length) {
        ctl.enqueue(enc.encode(chunks[i]!));
        i++;
      } else {
        ctl.close();
      }
    },
  });
}

async function collect(stream: ReadableStream<Uint8Array>): Promise<string[]> {
  const out: string[] = [];
  for await (const line of ndjsonLines(stream)) out.push(line);
  return out;
}

describe("ndjsonLines", () => {
  it("splits complete lines", async () => {
    const lines = await collect(chunked(['{"seq":1}\n{"seq":2}\n']));
    expect(lines).toEqual(['{"seq":1}', '{"seq":2}']);
  });

  it("reassembles lines broken across chunk boundaries", async () => {
    const lines = await collect(chunked(['{"seq":1,"ki', 'nd":"alloc', 'ation"}\n{"s', 'eq":2}\n']));
    expect(lines).toEqual(['{"seq":1,"kind":"allocation"}', '{"seq":2}']);
  });

  it("yields a trailing line without a final newline", async () => {
    const lines = await collect(chunked(['{"seq":1}\n{"seq":2}']));
    expect(lines).toEqual(['{"seq":1}', '{"seq":2}']);
  });

  it("skips blank lines", async () => {
    const lines = await collect(chunked(["\n\n", '{"seq":1}\n', "\n"]));
    expect(lines).toEqual(['{"seq":1}']);
  });

  it("survives multi-byte characters split across chunks", async () => {
    const enc = new TextEncoder();
    const bytes = enc.encode('{"text":"überhöht"}\n');
    const cut = 9; // inside the two-byte ü sequence
    const stream = new ReadableStream<Uint8Array>({
      start(ctl) {
        ctl.enqueue(bytes.slice(0, cut));
        ctl.enqueue(bytes.slice(cut));
        ctl.close();
      },
    });
    const lines = await collect(stream);
    expect(JSON.parse(lines[0]!).text).toBe("überhöht");
  });
});
