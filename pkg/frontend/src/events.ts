/** NDJSON event stream reader with seq-based dedupe and resume.
 *
 * The orchestrator streams one JSON event per line over a long-lived
 * response. Reconnects resume from the last seen seq, and the dedupe guard
 * guarantees a consumer never sees the same seq twice even if the server
 * replays history.
 */

import type { RackEvent } from './types.js';

export class EventDeduper {
  private lastSeq = 0;

  /** Returns the event if it is new, null if already seen. */
  accept(event: RackEvent): RackEvent | null {
    if (event.seq <= this.lastSeq) {
      return null;
    }
    this.lastSeq = event.seq;
    return event;
  }

  get cursor(): number {
    return this.lastSeq;
  }
}

export function parseEventLines(chunk: string): { events: RackEvent[]; rest: string } {
  const events: RackEvent[] = [];
  let buffer = chunk;
  for (;;) {
    const newline = buffer.indexOf('\n');
    if (newline < 0) {
      break;
    }
    const line = buffer.slice(0, newline).trim();
    buffer = buffer.slice(newline + 1);
    if (line.length > 0) {
      events.push(JSON.parse(line) as RackEvent);
    }
  }
  return { events, rest: buffer };
}

export interface StreamOptions {
  base?: string;
  since?: number;
  signal?: AbortSignal;
}

/** Async stream of deduped events; resumes across reconnects. */
export async function* streamEvents(
  streamId: string,
  options: StreamOptions = {},
): AsyncGenerator<RackEvent> {
  const deduper = new EventDeduper();
  let since = options.since ?? 0;
  const base = options.base ?? '';
  for (;;) {
    let response: Response;
    try {
      response = await fetch(`${base}/v1/events/${streamId}?since=${since}`, {
        signal: options.signal,
      });
    } catch {
      return; // aborted or server gone
    }
    if (!response.ok || response.body === null) {
      return;
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let pending = '';
    let sawTerminal = false;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      pending += decoder.decode(value, { stream: true });
      const { events, rest } = parseEventLines(pending);
      pending = rest;
      for (const event of events) {
        const fresh = deduper.accept(event);
        if (fresh !== null) {
          since = deduper.cursor;
          if (fresh.kind === 'ScanFinished' || fresh.kind === 'SessionTerminal') {
            sawTerminal = true;
          }
          yield fresh;
        }
      }
    }
    if (sawTerminal || options.signal?.aborted) {
      return;
    }
    // connection dropped mid-stream: reconnect and resume from the cursor
  }
}
