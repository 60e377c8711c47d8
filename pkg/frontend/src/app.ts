/**
 * Application wiring: one DebugClient, panels refreshed from the server
 * after every stop event, transport controls issuing protocol commands.
 */

import { DebugClient, ProtocolError, SocketFactory } from "./client.js";
import {
  ListingLine,
  renderBanner,
  renderListing,
  renderMemory,
  renderRegs,
  renderStatus,
  renderTasks,
  renderTimeline,
} from "./panels.js";
import { StopEvent } from "./protocol.js";

export interface AppElements {
  banner: HTMLElement;
  status: HTMLElement;
  tasks: HTMLElement;
  regs: HTMLElement;
  memory: HTMLElement;
  timeline: HTMLElement;
  listing: HTMLElement;
  controls: HTMLElement;
}

export class DebuggerApp {
  client = new DebugClient();
  breakpoints = new Map<number, number>(); // addr -> server breakpoint id
  memAddr = 0x1000;
  memLen = 128;
  listingLines: ListingLine[] = [];
  lastStop: StopEvent | null = null;
  private refreshing: Promise<void> = Promise.resolve();

  constructor(private el: AppElements) {}

  async start(url: string, factory: SocketFactory): Promise<void> {
    renderBanner(this.el.banner, null);
    try {
      const hello = await this.client.connect(url, factory);
      this.el.status.textContent =
        `connected: protocol v${hello.protocol_version}, ` +
        `final icount ${hello.final_icount}, ${hello.event_count} events`;
      this.client.onStop((stop) => this.onStop(stop));
      this.client.onClose((reason) => renderBanner(this.el.banner, reason));
      this.buildControls();
      await this.loadListing();
      await this.refresh();
    } catch (err) {
      renderBanner(this.el.banner, String((err as Error).message ?? err));
      throw err;
    }
  }

  private onStop(stop: StopEvent): void {
    this.lastStop = stop;
    renderStatus(this.el.status, stop);
    // chain refreshes so panel fetches never interleave
    this.refreshing = this.refreshing.then(() => this.refresh());
  }

  /** Re-fetch everything shown from the server; the UI itself holds no
   * replay state. */
  async refresh(): Promise<void> {
    const hello = this.client.hello;
    if (!hello) return;
    try {
      const [tasks, regs, mem, events] = await Promise.all([
        this.client.tasks(),
        this.client.regs(),
        this.client.readMem(this.memAddr, this.memLen),
        this.client.events(0, hello.final_icount),
      ]);
      renderTasks(this.el.tasks, tasks);
      renderRegs(this.el.regs, regs);
      renderMemory(this.el.memory, mem.addr, mem.bytes);
      renderTimeline(this.el.timeline, events, hello.final_icount,
        regs.icount, (n) => void this.runTo(n));
      renderListing(this.el.listing, this.listingLines, regs.pc,
        this.breakpoints, (addr) => void this.toggleBreakpoint(addr));
    } catch (err) {
      this.showError(err);
    }
  }

  private async loadListing(): Promise<void> {
    // the protocol exposes no bulk-listing command; derive a window of
    // addresses around pc from memory reads is out of scope, so the
    // listing panel starts from the current pc context via `where`
    try {
      const where = await this.client.where();
      const pc = where.pc as number;
      this.listingLines = [{ addr: pc, text: String(where.text ?? "") }];
    } catch {
      this.listingLines = [];
    }
  }

  setListing(lines: ListingLine[]): void {
    this.listingLines = lines;
  }

  async toggleBreakpoint(addr: number): Promise<void> {
    try {
      const existing = this.breakpoints.get(addr);
      if (existing !== undefined) {
        await this.client.clearBreakpoint(existing);
        this.breakpoints.delete(addr);
      } else {
        const res = await this.client.setBreakpoint(addr);
        this.breakpoints.set(addr, res.id);
      }
      await this.refresh();
    } catch (err) {
      this.showError(err);
    }
  }

  async runTo(icount: number): Promise<void> {
    try {
      await this.client.runToIcount(icount);
    } catch (err) {
      this.showError(err);
    }
  }

  private buildControls(): void {
    const root = this.el.controls;
    root.replaceChildren();
    const button = (label: string, action: () => Promise<unknown>) => {
      const b = document.createElement("button");
      b.textContent = label;
      b.dataset.action = label;
      b.addEventListener("click", () => {
        action().catch((err) => this.showError(err));
      });
      root.appendChild(b);
      return b;
    };
    button("continue", () => this.client.continue_());
    button("pause", () => this.client.pause());
    button("step", () => this.client.step(this.currentTaskArg()));
    button("reverse-step", () => this.client.reverseStep(this.currentTaskArg()));

    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = String(this.client.hello?.final_icount ?? 0);
    slider.dataset.action = "run-to-icount";
    slider.addEventListener("change", () => {
      void this.runTo(Number(slider.value));
    });
    root.appendChild(slider);
  }

  private currentTaskArg(): number | undefined {
    if (this.lastStop && this.lastStop.task_id >= 0) {
      return this.lastStop.task_id;
    }
    return undefined;
  }

  private showError(err: unknown): void {
    const msg =
      err instanceof ProtocolError && err.divergence
        ? `replay diverged: ${err.message}`
        : String((err as Error).message ?? err);
    renderBanner(this.el.banner, msg);
  }
}

/** Looks up the fixed panel ids in the document; index.html provides them. */
export function elementsFromDocument(doc: Document): AppElements {
  const get = (id: string) => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing #${id}`);
    return el;
  };
  return {
    banner: get("banner"),
    status: get("status"),
    tasks: get("tasks"),
    regs: get("regs"),
    memory: get("memory"),
    timeline: get("timeline"),
    listing: get("listing"),
    controls: get("controls"),
  };
}
