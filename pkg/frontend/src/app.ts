/** Console wiring: rack status, live heatmap, session transcript with the
 * STEP approval gate, and the I-V chart. Renders exclusively from the
 * orchestrator API; the only mutating calls are approve/reject.
 */

import { ApiClient } from './api.js';
import { approvalPanelState, canSubmitReject } from './approval.js';
import { chartScale, ivSeries } from './chart.js';
import { streamEvents } from './events.js';
import { HeatmapModel, LEVEL_MAX, pixelToCell } from './heatmap.js';
import type { PixelPayload, SessionView } from './types.js';

const api = new ApiClient('');

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

// ------------------------------- rack panel -------------------------------

async function refreshRack(): Promise<void> {
  const target = el<HTMLUListElement>('rack-list');
  try {
    const rack = await api.rack();
    target.innerHTML = '';
    for (const resource of rack.resources) {
      const item = document.createElement('li');
      item.textContent = `${resource.resource_id} — ${resource.label}`;
      target.appendChild(item);
    }
    el('rack-status').textContent = 'connected';
  } catch {
    el('rack-status').textContent = 'unreachable';
  }
}

// ------------------------------ scan heatmap ------------------------------

let scanAbort: AbortController | null = null;

function drawHeatmap(model: HeatmapModel, canvas: HTMLCanvasElement): void {
  const context = canvas.getContext('2d');
  if (!context) return;
  const cellW = canvas.width / model.nx;
  const cellH = canvas.height / model.ny;
  const levels = model.levels();
  context.fillStyle = '#10141c';
  context.fillRect(0, 0, canvas.width, canvas.height);
  for (let row = 0; row < model.ny; row += 1) {
    for (let col = 0; col < model.nx; col += 1) {
      const level = levels[row * model.nx + col];
      if (level === null) {
        context.fillStyle = '#1b2433'; // placeholder: not measured yet
      } else {
        const g = Math.round((level / LEVEL_MAX) * 255);
        context.fillStyle = `rgb(${g},${g},${g})`;
      }
      // image y-axis points up: frame row 0 at the bottom of the canvas
      const y = canvas.height - (row + 1) * cellH;
      context.fillRect(col * cellW, y, Math.ceil(cellW), Math.ceil(cellH));
    }
  }
}

async function watchScan(): Promise<void> {
  const scanId = el<HTMLInputElement>('scan-id').value.trim();
  if (!scanId) return;
  scanAbort?.abort();
  scanAbort = new AbortController();
  const status = el('scan-status');
  let frame;
  try {
    frame = await api.scanFrame(scanId);
  } catch {
    status.textContent = 'unknown scan id';
    return;
  }
  const model = new HeatmapModel(frame.nx, frame.ny);
  const canvas = el<HTMLCanvasElement>('heatmap');
  drawHeatmap(model, canvas);
  status.textContent = 'streaming…';
  let batched = 0;
  for await (const event of streamEvents(scanId, { signal: scanAbort.signal })) {
    if (event.kind === 'PixelMeasured') {
      model.ingest(pixelToCell(event.payload as unknown as PixelPayload));
      batched += 1;
      if (batched >= Math.max(1, Math.floor((model.nx * model.ny) / 50))) {
        drawHeatmap(model, canvas); // normalization recomputed per batch
        batched = 0;
      }
      status.textContent = `${model.pixelsReceived}/${model.nx * model.ny} pixels`;
    } else if (event.kind === 'ScanFinished') {
      model.markFinished();
      drawHeatmap(model, canvas);
      status.textContent = `finished (${model.pixelsReceived} pixels)`;
    }
  }
  drawHeatmap(model, canvas);
}

// ---------------------------- session + approval ----------------------------

let sessionAbort: AbortController | null = null;

function renderSession(session: SessionView): void {
  el('session-state').textContent =
    session.state + (session.fail_reason ? ` (${session.fail_reason})` : '');
  const transcript = el<HTMLDivElement>('transcript');
  transcript.innerHTML = '';
  for (const message of session.transcript) {
    const entry = document.createElement('div');
    entry.className = `msg msg-${message.role}`;
    const who = document.createElement('span');
    who.className = 'role';
    who.textContent = message.role;
    const body = document.createElement('pre');
    body.textContent = message.content;
    entry.append(who, body);
    transcript.appendChild(entry);
  }
  transcript.scrollTop = transcript.scrollHeight;

  const panel = approvalPanelState(session);
  el<HTMLButtonElement>('approve-btn').disabled = !panel.approveEnabled;
  const reason = el<HTMLInputElement>('reject-reason');
  el<HTMLButtonElement>('reject-btn').disabled =
    !panel.rejectEnabled || !canSubmitReject(session.state, reason.value);
  el<HTMLPreElement>('pending-code').textContent =
    panel.pendingCode || '(no code awaiting approval)';

  const last = [...session.iterations].reverse().find((entry) => entry.exec !== null);
  drawChart(ivSeries(last?.exec?.records ?? []));
}

function drawChart(points: { x: number; y: number }[]): void {
  const svg = el<HTMLElement>('iv-chart');
  const width = 320;
  const height = 200;
  const scale = chartScale(points);
  const px = (x: number): number =>
    ((x - scale.xMin) / (scale.xMax - scale.xMin)) * (width - 20) + 10;
  const py = (y: number): number =>
    height - (((y - scale.yMin) / (scale.yMax - scale.yMin)) * (height - 20) + 10);
  let body = `<line class="axis" x1="10" y1="${height - 10}" x2="${width - 10}" y2="${height - 10}"/>`;
  body += `<line class="axis" x1="10" y1="10" x2="10" y2="${height - 10}"/>`;
  if (points.length > 1) {
    const path = points.map((p) => `${px(p.x).toFixed(1)},${py(p.y).toFixed(1)}`).join(' ');
    body += `<polyline class="series" points="${path}"/>`;
  }
  for (const point of points) {
    body += `<circle class="dot" cx="${px(point.x).toFixed(1)}" cy="${py(point.y).toFixed(1)}" r="2.5"/>`;
  }
  svg.innerHTML = body;
  el('chart-status').textContent = points.length
    ? `${points.length} points`
    : 'no records yet';
}

async function watchSession(): Promise<void> {
  const sessionId = el<HTMLInputElement>('session-id').value.trim();
  if (!sessionId) return;
  sessionAbort?.abort();
  sessionAbort = new AbortController();
  try {
    renderSession(await api.session(sessionId));
  } catch {
    el('session-state').textContent = 'unknown session id';
    return;
  }
  for await (const _event of streamEvents(sessionId, { signal: sessionAbort.signal })) {
    try {
      renderSession(await api.session(sessionId));
    } catch {
      break;
    }
  }
}

function currentSessionId(): string {
  return el<HTMLInputElement>('session-id').value.trim();
}

function bind(): void {
  el<HTMLButtonElement>('rack-refresh').addEventListener('click', () => void refreshRack());
  el<HTMLButtonElement>('scan-watch').addEventListener('click', () => void watchScan());
  el<HTMLButtonElement>('session-watch').addEventListener('click', () => void watchSession());
  el<HTMLButtonElement>('approve-btn').addEventListener('click', () => {
    void api.approve(currentSessionId());
  });
  const reason = el<HTMLInputElement>('reject-reason');
  reason.addEventListener('input', () => {
    void api.session(currentSessionId()).then(renderSession).catch(() => undefined);
  });
  el<HTMLButtonElement>('reject-btn').addEventListener('click', () => {
    if (reason.value.trim()) {
      void api.reject(currentSessionId(), reason.value.trim());
      reason.value = '';
    }
  });
  void refreshRack();
}

document.addEventListener('DOMContentLoaded', bind);
