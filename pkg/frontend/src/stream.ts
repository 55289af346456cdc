import type { JournalRecord } from "./types.js";

// GET /events yields newline-delimited JSON with strictly increasing seq.
// Chunk boundaries fall anywhere, so the parser buffers partial lines.

export async function* ndjsonLines(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<string> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buf = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buf += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = buf.indexOf("\n")) >= 0) {
        const line = buf.slice(0, nl).trim();
        buf = buf.slice(nl + 1);
        if (line) yield line;
      }
    }
    buf += decoder.decode();
    const tail = buf.trim();
    if (tail) yield tail;
  } finally {
    reader.releaseLock();
  }
}

export interface StreamHandle {
  stop(): void;
  done: Promise<void>;
}

export interface StreamOptions {
  fromSeq?: number;
  follow?: boolean;
  // reconnect delay; doubles up to 10x on repeated failures
  backoffMs?: number;
  onError?: (err: unknown) => void;
  onEnd?: () => void;
}

// Connect to /events and deliver records in order. On connection loss the
// stream resumes from the last seen seq + 1, so the caller never sees a
// duplicate and can detect server-side gaps by inspecting seq itself.
export function openEventStream(
  base: string,
  onRecord: (rec: JournalRecord) => void,
  opts: StreamOptions = {},
): StreamHandle {
  const follow = opts.follow ?? true;
  let nextSeq = opts.fromSeq ?? 1;
  let backoff = opts.backoffMs ?? 500;
  const baseBackoff = backoff;
  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | null = null;
  const ctl = new AbortController();

  const done = (async () => {
    while (!stopped) {
      const u = new URL("/events", base);
      u.searchParams.set("from", String(nextSeq));
      u.searchParams.set("follow", String(follow));
      try {
        const res = await fetch(u, { signal: ctl.signal });
        if (!res.ok || !res.body) {
          throw new Error(`event stream HTTP ${res.status}`);
        }
        backoff = baseBackoff;
        for await (const line of ndjsonLines(res.body)) {
          const rec = JSON.parse(line) as JournalRecord;
          nextSeq = rec.seq + 1;
          onRecord(rec);
          if (stopped) break;
        }
        if (!follow || stopped) break;
        // A follow stream ends cleanly when the run finished or the
        // connection dropped without an error. Ask which it was.
        const st = await fetch(new URL("/status", base), { signal: ctl.signal });
        if (st.ok && (await st.json()).finished) break;
      } catch (err) {
        if (stopped) break;
        opts.onError?.(err);
        await new Promise<void>((resolve) => {
          timer = setTimeout(resolve, backoff);
        });
        backoff = Math.min(backoff * 2, baseBackoff * 10);
      }
    }
    opts.onEnd?.();
  })();

  return {
    stop() {
      stopped = true;
      if (timer) clearTimeout(timer);
      ctl.abort();
    },
    done: done.catch(() => undefined),
  };
}
