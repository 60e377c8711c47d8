/**
 * Wire protocol types for the debug server WebSocket.
 *
 * Client to server: {id, cmd, args}. Server to client: exactly one
 * response per request ({id, ok, data|error}) plus unsolicited events
 * ("hello" on connect, "stopped" whenever execution pauses).
 */

export const PROTOCOL_VERSION = 1;

export type Cmd =
  | "attach"
  | "tasks"
  | "regs"
  | "read-mem"
  | "break-set"
  | "break-clear"
  | "continue"
  | "pause"
  | "step"
  | "reverse-step"
  | "run-to-icount"
  | "where"
  | "events"
  | "detach";

export interface Request {
  id: number;
  cmd: Cmd;
  args: Record<string, unknown>;
}

export interface Response {
  id: number;
  ok: boolean;
  data?: unknown;
  error?: string;
  divergence?: unknown;
}

export interface HelloEvent {
  event: "hello";
  protocol_version: number;
  final_icount: number;
  event_count: number;
  checkpoint_interval: number;
  counter_profile: string;
  mem_size: number;
  symbols_available: boolean;
  icount: number;
}

export type StopReason = "breakpoint" | "step" | "icount" | "halt" | "pause";

export interface StopEvent {
  event: "stopped";
  reason: StopReason;
  icount: number;
  task_id: number;
  pc: number;
}

export type ServerEvent = HelloEvent | StopEvent;
export type ServerMessage = Response | ServerEvent;

export interface TaskView {
  task_id: number;
  state: string;
  pc: number;
  regs: number[];
  is_current: boolean;
}

export interface RegsView {
  pc: number;
  r: number[];
  mode: string;
  ie: number;
  icount: number;
}

export interface LoggedEvent {
  seq: number;
  icount: number;
  kind: string;
  line?: number;
  addr?: number;
  value?: number;
  hash?: string;
}

export function isResponse(msg: ServerMessage): msg is Response {
  return "id" in msg && !("event" in msg);
}

export function isStop(msg: ServerMessage): msg is StopEvent {
  return "event" in msg && msg.event === "stopped";
}

export function isHello(msg: ServerMessage): msg is HelloEvent {
  return "event" in msg && msg.event === "hello";
}
