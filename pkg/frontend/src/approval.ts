/** STEP approval panel state: the buttons enable exactly when the session
 * is parked awaiting approval, and reject never submits without a reason.
 */

import type { SessionState, SessionView } from './types.js';

export interface ApprovalPanelState {
  approveEnabled: boolean;
  rejectEnabled: boolean;
  pendingCode: string;
}

export function approvalPanelState(session: SessionView | null): ApprovalPanelState {
  const awaiting: boolean = session !== null && session.state === 'AwaitingApproval';
  const last = session?.iterations[session.iterations.length - 1];
  return {
    approveEnabled: awaiting,
    rejectEnabled: awaiting,
    pendingCode: awaiting && last ? last.proposed_code : '',
  };
}

/** Client-side gate: a reject without a written reason never reaches the API. */
export function canSubmitReject(state: SessionState | undefined, reason: string): boolean {
  return state === 'AwaitingApproval' && reason.trim().length > 0;
}
