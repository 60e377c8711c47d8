/**
 * WebSocket debug client: single socket, requests serialized by
 * pending-id correlation, unsolicited events fanned out to listeners.
 *
 * The client holds no replay state of its own; panels re-fetch
 * everything from the server after each stop event.
 */

import {
  Cmd,
  HelloEvent,
  LoggedEvent,
  PROTOCOL_VERSION,
  RegsView,
  ServerMessage,
  StopEvent,
  TaskView,
  isHello,
  isResponse,
  isStop,
} from "./protocol.js";

/** Minimal surface of a WebSocket this client needs; the real DOM
 * WebSocket satisfies it, and tests substitute a scripted fake. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: any) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: any) => void) | null;
  onerror: ((ev?: any) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export class ProtocolError extends Error {
  divergence?: unknown;
  constructor(message: string, divergence?: unknown) {
    super(message);
    this.divergence = divergence;
  }
}

interface Pending {
  resolve: (data: unknown) => void;
  reject: (err: Error) => void;
}

export class DebugClient {
  hello: HelloEvent | null = null;
  private socket: SocketLike | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private stopListeners: Array<(stop: StopEvent) => void> = [];
  private closeListeners: Array<(reason: string) => void> = [];

  onStop(fn: (stop: StopEvent) => void): void {
    this.stopListeners.push(fn);
  }

  onClose(fn: (reason: string) => void): void {
    this.closeListeners.push(fn);
  }

  /** Opens the socket and resolves once the hello handshake arrives.
   * Rejects on connection failure or protocol-version mismatch; the
   * caller decides whether to retry (the UI shows a banner instead). */
  connect(url: string, factory: SocketFactory): Promise<HelloEvent> {
    return new Promise((resolve, reject) => {
      let settled = false;
      const fail = (msg: string) => {
        if (!settled) {
          settled = true;
          reject(new ProtocolError(msg));
        }
      };
      let socket: SocketLike;
      try {
        socket = factory(url);
      } catch (err) {
        reject(new ProtocolError(`connection failed: ${err}`));
        return;
      }
      this.socket = socket;
      socket.onerror = () => fail(`cannot connect to ${url}`);
      socket.onclose = () => {
        fail(`connection closed by ${url}`);
        this.handleClose("connection closed");
      };
      socket.onmessage = (ev) => {
        const msg = JSON.parse(ev.data) as ServerMessage;
        if (!settled && isHello(msg)) {
          if (msg.protocol_version !== PROTOCOL_VERSION) {
            fail(
              `protocol version mismatch: server ${msg.protocol_version}, ` +
                `client ${PROTOCOL_VERSION}`,
            );
            socket.close();
            return;
          }
          this.hello = msg;
          settled = true;
          resolve(msg);
          return;
        }
        this.handleMessage(msg);
      };
    });
  }

  private handleMessage(msg: ServerMessage): void {
    if (isResponse(msg)) {
      const pend = this.pending.get(msg.id);
      if (!pend) return; // response to a request we gave up on
      this.pending.delete(msg.id);
      if (msg.ok) {
        pend.resolve(msg.data);
      } else {
        pend.reject(
          new ProtocolError(msg.error ?? "unknown error", msg.divergence),
        );
      }
    } else if (isStop(msg)) {
      for (const fn of this.stopListeners) fn(msg);
    }
  }

  private handleClose(reason: string): void {
    for (const [, pend] of this.pending) {
      pend.reject(new ProtocolError(reason));
    }
    this.pending.clear();
    for (const fn of this.closeListeners) fn(reason);
  }

  request(cmd: Cmd, args: Record<string, unknown> = {}): Promise<unknown> {
    if (!this.socket) {
      return Promise.reject(new ProtocolError("not connected"));
    }
    const id = this.nextId++;
    const socket = this.socket;
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      socket.send(JSON.stringify({ id, cmd, args }));
    });
  }

  // typed convenience wrappers

  tasks(): Promise<TaskView[]> {
    return this.request("tasks") as Promise<TaskView[]>;
  }

  regs(): Promise<RegsView> {
    return this.request("regs") as Promise<RegsView>;
  }

  readMem(addr: number, len: number): Promise<{ addr: number; bytes: string }> {
    return this.request("read-mem", { addr, len }) as Promise<{
      addr: number;
      bytes: string;
    }>;
  }

  setBreakpoint(addr: number, task?: number): Promise<{ id: number }> {
    const args: Record<string, unknown> = { addr };
    if (task !== undefined) args.task = task;
    return this.request("break-set", args) as Promise<{ id: number }>;
  }

  clearBreakpoint(id: number): Promise<unknown> {
    return this.request("break-clear", { id });
  }

  continue_(): Promise<unknown> {
    return this.request("continue");
  }

  pause(): Promise<unknown> {
    return this.request("pause");
  }

  step(task?: number): Promise<unknown> {
    return this.request("step", task === undefined ? {} : { task });
  }

  reverseStep(task?: number): Promise<unknown> {
    return this.request("reverse-step", task === undefined ? {} : { task });
  }

  runToIcount(n: number): Promise<unknown> {
    return this.request("run-to-icount", { n });
  }

  events(from: number, to: number): Promise<LoggedEvent[]> {
    return this.request("events", { from, to }) as Promise<LoggedEvent[]>;
  }

  where(): Promise<Record<string, unknown>> {
    return this.request("where") as Promise<Record<string, unknown>>;
  }

  detach(): Promise<unknown> {
    const done = this.request("detach");
    done.finally(() => this.socket?.close());
    return done;
  }
}
