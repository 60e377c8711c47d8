"""Guest-structure-aware time-travel debugger over a replay session.

The debugger never patches guest memory and offers no write commands at
all: breakpoints are engine-side address watches, inspection is pure
reads. A replay driven through any sequence of debug commands therefore
finishes with exactly the same state hash as an undebugged one.

Task views are parsed straight out of guest memory using the fixed task
table layout; the guest needs no cooperation (it is only replaying).
"""

import threading
from dataclasses import dataclass, field

from .engine import ReplaySession, seek
from .errors import Divergence, GuestLayoutError
from .guest import (CURRENT_ADDR, CURRENT_NONE, MAX_TASKS, NUM_TASKS_ADDR,
                    TASK_DESC_STRIDE, TASK_STATE_NAMES, TASK_TABLE_ADDR)
from .machine import MODE_USER

PROTOCOL_VERSION = 1
KERNEL_TASK_ID = -1

STOP_BREAKPOINT = "breakpoint"
STOP_STEP = "step"
STOP_ICOUNT = "icount"
STOP_HALT = "halt"
STOP_PAUSE = "pause"


class AtStartError(ValueError):
    """reverse_step with no prior attributed instruction."""


@dataclass(frozen=True)
class TaskView:
    task_id: int
    state: str
    pc: int
    regs: tuple
    is_current: bool

    def to_dict(self):
        return {"task_id": self.task_id, "state": self.state, "pc": self.pc,
                "regs": list(self.regs), "is_current": self.is_current}


@dataclass(frozen=True)
class StopEvent:
    reason: str
    icount: int
    task_id: int
    pc: int

    def to_dict(self):
        return {"event": "stopped", "reason": self.reason,
                "icount": self.icount, "task_id": self.task_id, "pc": self.pc}


@dataclass
class Breakpoint:
    bp_id: int
    addr: int
    task_id: int = None  # None: any task


def _word(mem, addr):
    return int.from_bytes(mem[addr:addr + 4], "little")


class DebugSession:
    """One debug session per replay; commands are applied between
    instruction boundaries only (the transports serialize on `lock`)."""

    def __init__(self, log, kernel_image, disk_image=b"", symbols=None,
                 listing=None, profile_override=None):
        self.session = ReplaySession(log, kernel_image, disk_image,
                                     profile_override)
        self.kernel_image = bytes(kernel_image)
        self.disk_image = bytes(disk_image)
        self.symbols = symbols or {}
        self.listing = listing or {}
        self.breakpoints = {}
        self._next_bp_id = 1
        self.lock = threading.RLock()
        self.pause_requested = threading.Event()
        self.dead = False  # set after a divergence ends the session
        self.final_icount = max((e.icount for e in self.session.events), default=0)

    # -- guest structure -------------------------------------------------

    def _num_tasks(self):
        n = _word(self.session.machine.mem, NUM_TASKS_ADDR)
        if n > MAX_TASKS:
            raise GuestLayoutError("implausible NUM_TASKS %d" % n)
        return n

    def current_task(self):
        """Task owning the next instruction: CURRENT in user mode, the
        kernel pseudo-task otherwise."""
        m = self.session.machine
        if m.mode != MODE_USER:
            return KERNEL_TASK_ID
        cur = _word(m.mem, CURRENT_ADDR)
        if cur == CURRENT_NONE or cur >= self._num_tasks():
            return KERNEL_TASK_ID
        return cur

    def read_tasks(self):
        m = self.session.machine
        cur = self.current_task()
        views = []
        for t in range(self._num_tasks()):
            desc = TASK_TABLE_ADDR + t * TASK_DESC_STRIDE
            state = _word(m.mem, desc)
            if state not in TASK_STATE_NAMES:
                raise GuestLayoutError("task %d has bad state code %d" % (t, state))
            if t == cur:
                # the running task's descriptor is stale; use live state
                pc = m.pc
                regs = tuple(m.regs)
            else:
                pc = _word(m.mem, desc + 4)
                regs = tuple(_word(m.mem, desc + 8 + 4 * k) for k in range(16))
            views.append(TaskView(task_id=t, state=TASK_STATE_NAMES[state],
                                  pc=pc, regs=regs, is_current=t == cur))
        return views

    # -- breakpoints -----------------------------------------------------

    def set_breakpoint(self, addr, task_id=None):
        for bp in self.breakpoints.values():
            if bp.addr == addr and bp.task_id == task_id:
                return bp.bp_id
        bp = Breakpoint(self._next_bp_id, addr, task_id)
        self._next_bp_id += 1
        self.breakpoints[bp.bp_id] = bp
        return bp.bp_id

    def clear_breakpoint(self, bp_id):
        return self.breakpoints.pop(bp_id, None) is not None

    def _hits_breakpoint(self):
        m = self.session.machine
        if m.mode != MODE_USER or not self.breakpoints:
            return False
        pc = m.pc
        cur = None
        for bp in self.breakpoints.values():
            if bp.addr != pc:
                continue
            if bp.task_id is None:
                return True
            if cur is None:
                cur = self.current_task()
            if bp.task_id == cur:
                return True
        return False

    # -- stopping --------------------------------------------------------

    def _stop(self, reason):
        s = self.session
        return StopEvent(reason=reason, icount=s.corrected(),
                         task_id=self.current_task(), pc=s.machine.pc)

    def continue_(self):
        """Run until a breakpoint, pause request, or the end of the log."""
        s = self.session
        self.pause_requested.clear()
        first = True
        while True:
            s._process_boundary_events()
            if s.done:
                return self._stop(STOP_HALT)
            if not first and self._hits_breakpoint():
                return self._stop(STOP_BREAKPOINT)
            if not first and self.pause_requested.is_set():
                return self._stop(STOP_PAUSE)
            first = False
            s.step_instr()

    def step_task(self, task_id):
        """Advance until exactly one instruction attributed to task_id
        retires; kernel and other-task instructions run transparently."""
        s = self.session
        while True:
            s._process_boundary_events()
            if s.done:
                return self._stop(STOP_HALT)
            attributed = self.current_task() == task_id
            r0 = s.machine.retired
            s.step_instr()
            if attributed and s.machine.retired > r0:
                return self._stop(STOP_STEP)

    def reverse_step(self, task_id):
        """Re-position just before the attributed instruction that most
        recently retired; realized as checkpoint restore + forward replay."""
        target = self._find_prev_attributed(task_id)
        self._seek(target)
        return self._stop(STOP_STEP)

    def _find_prev_attributed(self, task_id):
        s = self.session
        now = s.corrected()
        if now == 0:
            raise AtStartError("already at the start of the replay")
        start = now
        while True:
            ckpt = s.log.load_checkpoint(max(start - 1, 0))
            base = ckpt.icount if ckpt is not None else 0
            probe = ReplaySession(s.log, self.kernel_image, self.disk_image,
                                  profile_override=self.session.config.profile)
            if ckpt is not None:
                probe.restore_checkpoint(ckpt)
            dbg = DebugSession.__new__(DebugSession)  # lightweight attribution probe
            dbg.session = probe
            last = None
            while probe.corrected() < now:
                probe._process_boundary_events()
                if probe.done:
                    break
                c = probe.corrected()
                attributed = DebugSession.current_task(dbg) == task_id
                r0 = probe.machine.retired
                probe.step_instr()
                if attributed and probe.machine.retired > r0 and c < now:
                    last = c
            if last is not None:
                return last
            if base == 0:
                raise AtStartError(
                    "no instruction of task %d retired before this point" % task_id)
            start = base  # look further back

    def run_to_icount(self, target):
        """Forward or backward; backward is a seek through checkpoints."""
        s = self.session
        if target < s.corrected():
            self._seek(target)
        else:
            s.run_to_icount(target)
        return self._stop(STOP_ICOUNT)

    def _seek(self, target):
        s = self.session
        ckpt = s.log.load_checkpoint(target)
        if ckpt is not None and ckpt.icount <= target:
            s.restore_checkpoint(ckpt)
        else:
            s.restart()
        s.run_to_icount(target)

    # -- inspection ------------------------------------------------------

    def regs(self):
        s = self.session
        m = s.machine
        return {"pc": m.pc, "r": list(m.regs), "mode": "user" if m.mode == MODE_USER
                else "supervisor", "ie": m.ie, "icount": s.corrected()}

    def read_mem(self, addr, length):
        mem = self.session.machine.mem
        if addr < 0 or length < 0 or addr + length > len(mem):
            raise ValueError("read outside guest memory")
        return bytes(mem[addr:addr + length])

    def where(self):
        pc = self.session.machine.pc
        out = {"pc": pc, "icount": self.session.corrected()}
        sym = None
        best = None
        for name, addr in self.symbols.items():
            if addr <= pc and (best is None or addr > best):
                best, sym = addr, name
        if sym is not None:
            out["symbol"] = sym
            out["offset"] = pc - best
        line = self.listing.get(pc)
        if line is not None:
            out["line"] = line[0] if isinstance(line, (tuple, list)) else line
            out["text"] = line[1] if isinstance(line, (tuple, list)) else None
        return out

    def events_between(self, icount_from, icount_to):
        return [e.to_dict() for e in self.session.events
                if icount_from <= e.icount <= icount_to]

    # -- protocol dispatch ----------------------------------------------

    def handshake(self):
        header = self.session.log.header
        return {
            "event": "hello",
            "protocol_version": PROTOCOL_VERSION,
            "final_icount": self.final_icount,
            "event_count": len(self.session.events),
            "checkpoint_interval": header.checkpoint_interval,
            "counter_profile": header.counter_config.profile,
            "mem_size": header.mem_size,
            "symbols_available": bool(self.symbols),
            "icount": self.session.corrected(),
        }

    def handle_request(self, request):
        """Returns (response_dict, stop_event_dict_or_None). Exactly one
        response per request; stop events ride separately."""
        req_id = request.get("id")
        cmd = request.get("cmd")
        args = request.get("args") or {}

        def ok(data=None):
            return {"id": req_id, "ok": True, "data": data}

        def err(message):
            return {"id": req_id, "ok": False, "error": message}

        if self.dead and cmd not in ("detach",):
            return err("session ended after divergence"), None
        if cmd == "pause":
            # handled without the session lock: a running continue holds it
            self.pause_requested.set()
            return ok({"pausing": True}), None
        try:
            with self.lock:
                if cmd == "attach":
                    return ok(self.handshake()), None
                if cmd == "tasks":
                    return ok([t.to_dict() for t in self.read_tasks()]), None
                if cmd == "regs":
                    return ok(self.regs()), None
                if cmd == "read-mem":
                    addr = _to_int(args["addr"])
                    length = _to_int(args["len"])
                    data = self.read_mem(addr, length)
                    return ok({"addr": addr, "bytes": data.hex()}), None
                if cmd == "break-set":
                    bp_id = self.set_breakpoint(_to_int(args["addr"]),
                                                args.get("task"))
                    return ok({"id": bp_id}), None
                if cmd == "break-clear":
                    found = self.clear_breakpoint(_to_int(args["id"]))
                    return (ok({"cleared": True}) if found
                            else err("no such breakpoint")), None
                if cmd == "continue":
                    stop = self.continue_()
                    return ok({"running": True}), stop.to_dict()
                if cmd == "step":
                    task = args.get("task")
                    if task is None:
                        task = self.current_task()
                    stop = self.step_task(task)
                    return ok({"running": True}), stop.to_dict()
                if cmd == "reverse-step":
                    task = args.get("task")
                    if task is None:
                        task = self.current_task()
                    stop = self.reverse_step(task)
                    return ok({"running": True}), stop.to_dict()
                if cmd == "run-to-icount":
                    stop = self.run_to_icount(_to_int(args["n"]))
                    return ok({"running": True}), stop.to_dict()
                if cmd == "where":
                    return ok(self.where()), None
                if cmd == "events":
                    lo = _to_int(args.get("from", 0))
                    hi = _to_int(args.get("to", self.final_icount))
                    return ok(self.events_between(lo, hi)), None
                if cmd == "detach":
                    return ok({"detached": True}), None
                if cmd in ("write-mem", "write-reg", "write"):
                    return err("read-only replay"), None
                return err("unknown cmd %r" % (cmd,)), None
        except Divergence as exc:
            self.dead = True
            return {"id": req_id, "ok": False, "error": "divergence",
                    "divergence": exc.report()}, None
        except (AtStartError, GuestLayoutError, ValueError, KeyError) as exc:
            return err("%s: %s" % (type(exc).__name__, exc)), None


def _to_int(v):
    if isinstance(v, str):
        return int(v, 0)
    return int(v)


def open_debug_session(log_path, kernel_image, disk_image=b"", symbols=None,
                       listing=None):
    """Session paused at icount 0, ready for transports or the REPL."""
    return DebugSession(log_path, kernel_image, disk_image,
                        symbols=symbols, listing=listing)
