/**
 * DOM panels. Pure render functions: given server data, (re)build the
 * panel's contents. No panel keeps replay state; the app re-fetches
 * after every stop event.
 */

import { LoggedEvent, RegsView, StopEvent, TaskView } from "./protocol.js";

const hex = (v: number, pad = 8) => "0x" + v.toString(16).toUpperCase().padStart(pad, "0");

export function renderTasks(root: HTMLElement, tasks: TaskView[]): void {
  root.replaceChildren();
  const table = document.createElement("table");
  table.className = "tasks";
  const head = table.insertRow();
  for (const h of ["task", "state", "pc", ""]) {
    const th = document.createElement("th");
    th.textContent = h;
    head.appendChild(th);
  }
  for (const t of tasks) {
    const row = table.insertRow();
    row.dataset.taskId = String(t.task_id);
    if (t.is_current) row.classList.add("current");
    row.insertCell().textContent = String(t.task_id);
    row.insertCell().textContent = t.state;
    row.insertCell().textContent = hex(t.pc);
    row.insertCell().textContent = t.is_current ? "▶" : "";
  }
  root.appendChild(table);
}

export function renderRegs(root: HTMLElement, regs: RegsView): void {
  root.replaceChildren();
  const meta = document.createElement("div");
  meta.className = "regs-meta";
  meta.textContent =
    `pc=${hex(regs.pc)} mode=${regs.mode} ie=${regs.ie} icount=${regs.icount}`;
  root.appendChild(meta);
  const grid = document.createElement("div");
  grid.className = "regs-grid";
  regs.r.forEach((value, i) => {
    const cell = document.createElement("span");
    cell.className = "reg";
    cell.dataset.reg = `r${i}`;
    cell.textContent = `r${i}=${hex(value)}`;
    grid.appendChild(cell);
  });
  root.appendChild(grid);
}

export function renderMemory(
  root: HTMLElement,
  addr: number,
  bytesHex: string,
): void {
  root.replaceChildren();
  const pre = document.createElement("pre");
  pre.className = "memdump";
  const bytes: number[] = [];
  for (let i = 0; i < bytesHex.length; i += 2) {
    bytes.push(parseInt(bytesHex.slice(i, i + 2), 16));
  }
  const lines: string[] = [];
  for (let off = 0; off < bytes.length; off += 16) {
    const row = bytes.slice(off, off + 16);
    const hexes = row.map((b) => b.toString(16).padStart(2, "0")).join(" ");
    const ascii = row
      .map((b) => (b >= 0x20 && b < 0x7f ? String.fromCharCode(b) : "."))
      .join("");
    lines.push(
      (addr + off).toString(16).toUpperCase().padStart(8, "0") +
        "  " + hexes.padEnd(47) + "  " + ascii,
    );
  }
  pre.textContent = lines.join("\n");
  root.appendChild(pre);
}

/** Event timeline plotted by icount (replay has no wall time). Each
 * event becomes a marker positioned proportionally to final_icount;
 * a cursor line tracks the current position. Clicking the strip seeks. */
export function renderTimeline(
  root: HTMLElement,
  events: LoggedEvent[],
  finalIcount: number,
  currentIcount: number,
  onSeek: (icount: number) => void,
): void {
  root.replaceChildren();
  const strip = document.createElement("div");
  strip.className = "timeline";
  strip.dataset.finalIcount = String(finalIcount);
  for (const ev of events) {
    const mark = document.createElement("span");
    mark.className = `ev ev-${ev.kind}`;
    mark.title = `#${ev.seq} ${ev.kind} @${ev.icount}`;
    mark.dataset.icount = String(ev.icount);
    mark.style.left = `${(100 * ev.icount) / Math.max(finalIcount, 1)}%`;
    strip.appendChild(mark);
  }
  const cursor = document.createElement("span");
  cursor.className = "cursor";
  cursor.dataset.icount = String(currentIcount);
  cursor.style.left = `${(100 * currentIcount) / Math.max(finalIcount, 1)}%`;
  strip.appendChild(cursor);
  strip.addEventListener("click", (ev) => {
    const rect = strip.getBoundingClientRect();
    const frac = rect.width > 0 ? (ev.clientX - rect.left) / rect.width : 0;
    onSeek(Math.round(frac * finalIcount));
  });
  root.appendChild(strip);
}

export interface ListingLine {
  addr: number;
  text: string;
}

/** Disassembly/listing view with a breakpoint gutter. Clicking the
 * gutter toggles a breakpoint at that address via the callbacks. */
export function renderListing(
  root: HTMLElement,
  lines: ListingLine[],
  pc: number,
  breakpoints: Map<number, number>, // addr -> breakpoint id
  onToggle: (addr: number) => void,
): void {
  root.replaceChildren();
  const list = document.createElement("div");
  list.className = "listing";
  for (const line of lines) {
    const row = document.createElement("div");
    row.className = "asm-row";
    row.dataset.addr = String(line.addr);
    if (line.addr === pc) row.classList.add("pc");
    const gutter = document.createElement("span");
    gutter.className = "gutter";
    if (breakpoints.has(line.addr)) gutter.classList.add("bp");
    gutter.textContent = breakpoints.has(line.addr) ? "●" : " ";
    gutter.addEventListener("click", () => onToggle(line.addr));
    const addr = document.createElement("span");
    addr.className = "addr";
    addr.textContent = hex(line.addr);
    const text = document.createElement("span");
    text.className = "text";
    text.textContent = line.text;
    row.append(gutter, addr, text);
    list.appendChild(row);
  }
  root.appendChild(list);
}

export function renderBanner(root: HTMLElement, message: string | null): void {
  root.replaceChildren();
  if (message === null) {
    root.classList.remove("visible");
    return;
  }
  root.classList.add("visible");
  const div = document.createElement("div");
  div.className = "banner-text";
  div.textContent = message;
  root.appendChild(div);
}

export function renderStatus(root: HTMLElement, stop: StopEvent | null): void {
  if (stop === null) {
    root.textContent = "paused at icount 0";
    return;
  }
  const task = stop.task_id < 0 ? "kernel" : `task ${stop.task_id}`;
  root.textContent =
    `stopped (${stop.reason}) at icount ${stop.icount}, ${task}, pc ${hex(stop.pc)}`;
}
