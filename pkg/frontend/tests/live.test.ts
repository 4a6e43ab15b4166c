/** Secondary acceptance: the console models against a live orchestrator.
 *
 * Spawns the Python service (the primary component's external interface) and
 * checks: a 2x2 scan delivers 4 PixelMeasured events then ScanFinished into
 * the heatmap; approval buttons enable exactly while AwaitingApproval; the
 * stub I-V run charts 21 points.
 */

import { spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync } from 'node:fs';
import { createServer } from 'node:net';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { approvalPanelState } from '../src/approval.js';
import { ivSeries } from '../src/chart.js';
import { streamEvents } from '../src/events.js';
import { HeatmapModel, pixelToCell } from '../src/heatmap.js';
import type { PixelPayload, RackEvent, SessionView } from '../src/types.js';

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, '127.0.0.1', () => {
      const port = (probe.address() as { port: number }).port;
      probe.close(() => resolve(port));
    });
    probe.on('error', reject);
  });
}

function ivStubReplies(smuResource: string): string[] {
  const bad = [
    'Probing the error interface first.',
    '```labscript',
    `OPEN smu "${smuResource}" SCPI`,
    'QUERY smu ":FOO?" -> probe',
    'PRINT "probe={probe}"',
    '```',
  ].join('\n');
  const good = [
    'Switching to the supported command tree. DONE',
    '```labscript',
    `OPEN smu "${smuResource}" SCPI`,
    'WRITE smu "*RST"',
    'WRITE smu ":SOUR:VOLT:ILIM 0.1"',
    'WRITE smu ":OUTP ON"',
    'SWEEP v FROM -1.0 TO 1.0 STEP 0.1',
    'WRITE smu ":SOUR:VOLT {v}"',
    'QUERY smu ":READ?" -> i',
    'RECORD v, i',
    'END',
    'WRITE smu ":OUTP OFF"',
    'SAVE "iv.csv"',
    '```',
  ].join('\n');
  return [bad, good];
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  const response = await fetch(url, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  });
  if (!response.ok) {
    throw new Error(`POST ${url} -> ${response.status}`);
  }
  return (await response.json()) as T;
}

async function waitFor<T>(probe: () => Promise<T | null>, timeoutMs: number): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = await probe().catch(() => null);
    if (value !== null) {
      return value;
    }
    if (Date.now() > deadline) {
      throw new Error('timed out waiting for condition');
    }
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}

describe('live orchestrator acceptance', () => {
  let service: ChildProcess;
  let base: string;
  let api: ApiClient;
  let smuResource: string;

  beforeAll(async () => {
    const [httpPort, smuPort, stagePort] = [
      await freePort(), await freePort(), await freePort(),
    ];
    base = `http://127.0.0.1:${httpPort}`;
    const dataDir = mkdtempSync(join(tmpdir(), 'autolab-console-'));
    service = spawn('python3', [
      '-m', 'autolab.cli', 'serve',
      '--port', String(httpPort),
      '--smu-port', String(smuPort),
      '--stage-port', String(stagePort),
      '--device', 'ohmic', '--resistance', '1000',
      '--data-dir', dataDir,
    ], { stdio: ['ignore', 'pipe', 'pipe'] });
    api = new ApiClient(base);
    const rack = await waitFor(async () => {
      const view = await api.rack();
      return view.resources.length === 2 ? view : null;
    }, 15000);
    smuResource = rack.resources[0].resource_id;
  }, 30000);

  afterAll(() => {
    service.kill('SIGTERM');
  });

  it('heatmap: 2x2 scan delivers 4 PixelMeasured then ScanFinished', async () => {
    const { id } = await postJson<{ id: string }>(`${base}/v1/scans`, { nx: 2, ny: 2 });
    const model = new HeatmapModel(2, 2);
    const kinds: string[] = [];
    const order: Array<[number, number]> = [];
    for await (const event of streamEvents(id, { base })) {
      kinds.push(event.kind);
      if (event.kind === 'PixelMeasured') {
        const pixel = event.payload as unknown as PixelPayload;
        model.ingest(pixelToCell(pixel));
        order.push([pixel.col, pixel.row]);
      } else if (event.kind === 'ScanFinished') {
        model.markFinished();
      }
    }
    expect(kinds).toEqual([
      'PixelMeasured', 'PixelMeasured', 'PixelMeasured', 'PixelMeasured', 'ScanFinished',
    ]);
    expect(order).toEqual([[0, 0], [1, 0], [1, 1], [0, 1]]); // snake order
    expect(model.pixelsReceived).toBe(4);
    expect(model.isFinished).toBe(true);
    // ohmic device + flat bias: constant frame renders uniform
    expect(new Set(model.levels())).toEqual(new Set([0]));

    const frame = await api.scanFrame(id);
    expect(frame.pixels_measured).toBe(4);
    expect(frame.complete).toBe(true);
  }, 30000);

  it('approval buttons enable exactly while AwaitingApproval', async () => {
    const { id } = await postJson<{ id: string }>(`${base}/v1/sessions`, {
      goal: 'gated I-V sweep',
      mode: 'step',
      max_iters: 4,
      stub: { replies: ivStubReplies(smuResource) },
      predicate: { file_rows: { path: 'iv.csv', min_rows: 21 } },
    });

    const awaiting = await waitFor(async () => {
      const view = await api.session(id);
      return view.state === 'AwaitingApproval' ? view : null;
    }, 15000);
    let panel = approvalPanelState(awaiting);
    expect(panel.approveEnabled).toBe(true);
    expect(panel.rejectEnabled).toBe(true);
    expect(panel.pendingCode).toContain(':FOO?');

    expect(await api.approve(id)).toBe(204);
    // approve both iterations; in every non-awaiting state the buttons stay off
    const terminal = await waitFor(async () => {
      const view = await api.session(id);
      if (view.state === 'AwaitingApproval') {
        await api.approve(id);
        return null;
      }
      if (view.state === 'Succeeded' || view.state === 'Failed') {
        return view;
      }
      panel = approvalPanelState(view);
      expect(panel.approveEnabled).toBe(false);
      return null;
    }, 15000);

    expect(terminal.state).toBe('Succeeded');
    panel = approvalPanelState(terminal);
    expect(panel.approveEnabled).toBe(false);
    expect(panel.rejectEnabled).toBe(false);
    // conflict surfaces as 409 when approving a finished session
    expect(await api.approve(id)).toBe(409);
  }, 30000);

  it('charts 21 I-V points from the stub run', async () => {
    const { id } = await postJson<{ id: string }>(`${base}/v1/sessions`, {
      goal: 'I-V characteristics of the photoresistor',
      mode: 'auto',
      stub: { replies: ivStubReplies(smuResource) },
      predicate: { file_rows: { path: 'iv.csv', min_rows: 21 } },
    });
    const kinds: string[] = [];
    for await (const event of streamEvents(id, { base })) {
      kinds.push(event.kind);
    }
    expect(kinds[kinds.length - 1]).toBe('SessionTerminal');

    const view: SessionView = await api.session(id);
    expect(view.state).toBe('Succeeded');
    const lastExec = [...view.iterations].reverse().find((i) => i.exec !== null)?.exec;
    const points = ivSeries(lastExec?.records ?? []);
    expect(points).toHaveLength(21);
    for (const point of points) {
      expect(Math.abs(point.y - point.x / 1000)).toBeLessThan(1e-9);
    }
  }, 30000);
});
