/** Wire types mirrored from the orchestrator /v1/ API. */

export interface ResourceDescriptor {
  resource_id: string;
  kind: 'SCPI_SMU' | 'XYP_STAGE';
  label: string;
}

export interface RackView {
  resources: ResourceDescriptor[];
}

export type EventKind =
  | 'IterationStarted'
  | 'CodeProposed'
  | 'AwaitingApproval'
  | 'Executed'
  | 'Feedback'
  | 'PixelMeasured'
  | 'ScanFinished'
  | 'SessionTerminal';

export interface RackEvent {
  seq: number;
  id: string;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface PixelPayload {
  col: number;
  row: number;
  current_A: number;
}

export type SessionState = 'Running' | 'AwaitingApproval' | 'Succeeded' | 'Failed';

export interface TranscriptMessage {
  role: 'system' | 'user' | 'assistant';
  content: string;
}

export interface ExecView {
  exit: string;
  stdout: string;
  stderr: string;
  records: number[][];
  instructions_executed: number;
  saved_files: string[];
}

export interface IterationView {
  index: number;
  proposed_code: string;
  artifact_path: string;
  approval: { status: string; by?: string; reason?: string };
  exec: ExecView | null;
}

export interface SessionView {
  id: string;
  goal: string;
  mode: 'AUTO' | 'STEP';
  state: SessionState;
  fail_reason: string | null;
  transcript: TranscriptMessage[];
  iterations: IterationView[];
}

export interface FrameView {
  nx: number;
  ny: number;
  data: number[];
  pixels_measured: number;
  state: string;
  complete: boolean;
}
