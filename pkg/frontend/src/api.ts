/** Thin client for the orchestrator API.
 *
 * The console is read-only except for the two approval endpoints; no other
 * mutating call exists on this surface on purpose.
 */

import type { FrameView, RackView, SessionView } from './types.js';

export class ApiClient {
  constructor(private readonly base: string = '') {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) {
      throw new Error(`GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  rack(): Promise<RackView> {
    return this.getJson<RackView>('/v1/rack');
  }

  session(id: string): Promise<SessionView> {
    return this.getJson<SessionView>(`/v1/sessions/${id}`);
  }

  scanFrame(id: string): Promise<FrameView> {
    return this.getJson<FrameView>(`/v1/scans/${id}/frame`);
  }

  async approve(sessionId: string, by = 'console'): Promise<number> {
    const response = await fetch(`${this.base}/v1/sessions/${sessionId}/approve`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ by }),
    });
    return response.status;
  }

  async reject(sessionId: string, reason: string, by = 'console'): Promise<number> {
    const response = await fetch(`${this.base}/v1/sessions/${sessionId}/reject`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ by, reason }),
    });
    return response.status;
  }
}
