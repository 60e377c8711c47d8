/**
 * Scripted stand-in for the debug server: a SocketLike whose far end
 * implements the wire protocol over a tiny deterministic replay model.
 * Register values are a pure function of icount, so reverse-step
 * restoring earlier values is observable.
 */

import { SocketLike } from "../src/client.js";

const FINAL_ICOUNT = 10_000;
const HALT_PC = 0x4000;

interface Bp {
  id: number;
  addr: number;
  task?: number;
}

export class MockServer {
  icount = 0;
  breakpoints: Bp[] = [];
  nextBp = 1;
  detached = false;
  log: Array<Record<string, unknown>> = []; // requests seen, for assertions

  private outbox: ((data: string) => void) | null = null;

  // replay model: pc advances 4 per instruction, wrapping in task code;
  // even icounts belong to task 0, odd to task 1 (crude but deterministic)
  pcAt(icount: number): number {
    if (icount >= FINAL_ICOUNT) return HALT_PC;
    return 0x10000 + (icount % 64) * 4;
  }

  taskAt(icount: number): number {
    return icount >= FINAL_ICOUNT ? -1 : icount % 2;
  }

  regsAt(icount: number): number[] {
    const r = new Array(16).fill(0);
    for (let i = 1; i < 16; i++) r[i] = (icount * i) >>> 0;
    return r;
  }

  socket(): SocketLike {
    const server = this;
    const sock: SocketLike = {
      onopen: null,
      onmessage: null,
      onclose: null,
      onerror: null,
      send(data: string) {
        server.handle(JSON.parse(data));
      },
      close() {
        sock.onclose?.();
      },
    };
    this.outbox = (data) => sock.onmessage?.({ data });
    queueMicrotask(() => {
      sock.onopen?.();
      server.emit({
        event: "hello",
        protocol_version: 1,
        final_icount: FINAL_ICOUNT,
        event_count: 12,
        checkpoint_interval: 1000,
        counter_profile: "exact",
        mem_size: 1 << 20,
        symbols_available: true,
        icount: 0,
      });
    });
    return sock;
  }

  emit(msg: Record<string, unknown>): void {
    this.outbox?.(JSON.stringify(msg));
  }

  private stop(reason: string): void {
    this.emit({
      event: "stopped",
      reason,
      icount: this.icount,
      task_id: this.taskAt(this.icount),
      pc: this.pcAt(this.icount),
    });
  }

  private bpHit(icount: number): boolean {
    const pc = this.pcAt(icount);
    const task = this.taskAt(icount);
    return this.breakpoints.some(
      (bp) => bp.addr === pc && (bp.task === undefined || bp.task === task),
    );
  }

  handle(req: { id: number; cmd: string; args: Record<string, unknown> }): void {
    this.log.push(req);
    const ok = (data: unknown = null) =>
      this.emit({ id: req.id, ok: true, data });
    const err = (error: string) => this.emit({ id: req.id, ok: false, error });
    const args = req.args ?? {};
    switch (req.cmd) {
      case "tasks":
        ok(
          [0, 1].map((t) => ({
            task_id: t,
            state: this.icount >= FINAL_ICOUNT ? "exited" : "ready",
            pc: this.pcAt(this.icount),
            regs: this.regsAt(this.icount),
            is_current: this.taskAt(this.icount) === t,
          })),
        );
        break;
      case "regs":
        ok({
          pc: this.pcAt(this.icount),
          r: this.regsAt(this.icount),
          mode: "user",
          ie: 1,
          icount: this.icount,
        });
        break;
      case "read-mem": {
        const len = Number(args.len);
        ok({ addr: Number(args.addr), bytes: "00".repeat(len) });
        break;
      }
      case "break-set": {
        const addr = Number(args.addr);
        const task = args.task === undefined ? undefined : Number(args.task);
        const dup = this.breakpoints.find(
          (b) => b.addr === addr && b.task === task,
        );
        if (dup) {
          ok({ id: dup.id });
          break;
        }
        const bp = { id: this.nextBp++, addr, task };
        this.breakpoints.push(bp);
        ok({ id: bp.id });
        break;
      }
      case "break-clear": {
        const idx = this.breakpoints.findIndex((b) => b.id === Number(args.id));
        if (idx < 0) {
          err("no such breakpoint");
        } else {
          this.breakpoints.splice(idx, 1);
          ok({ cleared: true });
        }
        break;
      }
      case "continue": {
        ok({ running: true });
        let c = this.icount + 1;
        while (c < FINAL_ICOUNT && !this.bpHit(c)) c++;
        this.icount = c;
        this.stop(c >= FINAL_ICOUNT ? "halt" : "breakpoint");
        break;
      }
      case "step":
        ok({ running: true });
        this.icount = Math.min(this.icount + 1, FINAL_ICOUNT);
        this.stop(this.icount >= FINAL_ICOUNT ? "halt" : "step");
        break;
      case "reverse-step":
        if (this.icount === 0) {
          err("AtStartError: already at the start of the replay");
          break;
        }
        ok({ running: true });
        this.icount -= 1;
        this.stop("step");
        break;
      case "run-to-icount":
        ok({ running: true });
        this.icount = Math.min(Number(args.n), FINAL_ICOUNT);
        this.stop("icount");
        break;
      case "events": {
        const from = Number(args.from ?? 0);
        const to = Number(args.to ?? FINAL_ICOUNT);
        const events = [];
        for (let seq = 1; seq <= 10; seq++) {
          const icount = seq * 1000;
          if (icount >= from && icount <= to) {
            events.push({ seq, icount, kind: "IrqDelivery", line: 0 });
          }
        }
        ok(events);
        break;
      }
      case "where":
        ok({ pc: this.pcAt(this.icount), icount: this.icount,
             symbol: "task0.loop", offset: 0, text: "ADDI r1, r1, 1" });
        break;
      case "pause":
        ok({ pausing: true });
        break;
      case "detach":
        this.detached = true;
        ok({ detached: true });
        break;
      case "write-mem":
      case "write-reg":
        err("read-only replay");
        break;
      default:
        err(`unknown cmd '${req.cmd}'`);
    }
  }
}

/** Mismatched-version variant for the banner test. */
export class WrongVersionServer extends MockServer {
  socket(): SocketLike {
    const sock = super.socket();
    const inner = this.emit.bind(this);
    this.emit = (msg) => {
      if (msg.event === "hello") msg = { ...msg, protocol_version: 99 };
      inner(msg);
    };
    return sock;
  }
}

/** Connection-refused variant: closes before any hello. */
export function refusedSocket(): SocketLike {
  const sock: SocketLike = {
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
    send() {},
    close() {},
  };
  queueMicrotask(() => {
    sock.onerror?.();
    sock.onclose?.();
  });
  return sock;
}
