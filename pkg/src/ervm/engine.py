"""Record and replay execution phases.

Record runs the guest live: host-clock driven stimulus and timer, every
nondeterministic input logged against the corrected instruction count.
Replay re-executes from reset with external interrupts gated off and
applies logged events when the corrected count reaches their stamp,
verifying state hashes along the way. Events carry corrected counts (not
raw ones), which is what makes logs portable across counter profiles.

Records are made with both privilege modes counted, so the corrected
count advances on every retire and uniquely identifies an instruction
boundary; partial-mode or marked-only filters are for counter analysis
runs, not for replayable logs.
"""

import hashlib
import time
from dataclasses import dataclass, field

from .counter import (Counter, CounterConfig, PROFILE_X86_FLAKY,
                      UnusableCounter)
from .devices import (Devices, MODE_FREE, MODE_RECORD, MODE_REPLAY,
                      parse_stimulus)
from .errors import Divergence, ImageMismatch
from .machine import Machine, reset
from . import tracelog
from .tracelog import (Checkpoint, Event, TraceHeader, TraceLog, TraceWriter,
                       EV_DEVICE_READ, EV_HALT, EV_IRQ, EV_STATE_HASH,
                       serialize_state, deserialize_state, state_hash,
                       DEFAULT_CHECKPOINT_INTERVAL)

DEFAULT_MAX_INSTRUCTIONS = 100_000_000
POLL_MASK = 0x1FF  # stimulus/timer poll cadence during live runs
IRQ_RETRY_LIMIT = 1_000_000

EXIT_HALTED = "halted"
EXIT_LIMIT = "limit"
EXIT_DIVERGENCE = "divergence"


@dataclass
class RunSummary:
    final_icount: int
    exit_reason: str
    final_state_hash: str
    event_count: int
    wall_time_ms: int = 0
    divergence: dict = None


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def _wire(machine, counter, devices):
    machine.counter = counter
    machine.devices = devices
    devices.machine = machine


# -- live execution (plain and record) ----------------------------------

def _live_loop(machine, counter, devices, stimulus, max_instructions,
               writer=None, checkpoint_interval=DEFAULT_CHECKPOINT_INTERVAL):
    """Shared loop for plain emulation and record; `writer` switches the
    logging on. Returns (exit_reason, seq)."""
    t0 = time.monotonic()

    def now_ms():
        return int((time.monotonic() - t0) * 1000)

    devices.now_ms = now_ms
    seq = 0
    if writer is not None:
        def emit_read(addr, value):
            nonlocal seq
            seq += 1
            writer.append_event(Event(seq, counter.raw - counter.mode_switch_snapshot,
                                      EV_DEVICE_READ, addr=addr, value=value))
        devices.emit_device_read = emit_read

    stim = list(stimulus)
    stim_idx = 0
    next_ckpt = checkpoint_interval
    ckpt_due = False
    i = 0
    while True:
        if machine.halted:
            exit_reason = EXIT_HALTED
            break
        if machine.retired >= max_instructions:
            exit_reason = EXIT_LIMIT
            break
        if ckpt_due:
            ckpt_due = False
            c = counter.raw - counter.mode_switch_snapshot
            h = state_hash(machine, counter, devices)
            seq += 1
            writer.append_event(Event(seq, c, EV_STATE_HASH, hash=h))
            writer.write_checkpoint(Checkpoint(
                icount=c, retired=machine.retired, log_cursor=seq,
                state_hash=h, state=serialize_state(machine, counter, devices)))
            next_ckpt = (c // checkpoint_interval + 1) * checkpoint_interval
        if machine.ie and machine.pending_irqs:
            p = machine.pending_irqs
            line = (p & -p).bit_length() - 1
            if writer is not None:
                seq += 1
                writer.append_event(Event(seq, counter.raw - counter.mode_switch_snapshot,
                                          EV_IRQ, line=line))
            machine.deliver_interrupt(line)
            continue
        c0 = counter.raw - counter.mode_switch_snapshot
        machine.step(False)
        if writer is not None:
            c = counter.raw - counter.mode_switch_snapshot
            if c >= next_ckpt and c > c0:
                ckpt_due = True
        i += 1
        if not (i & POLL_MASK):
            now = now_ms()
            while stim_idx < len(stim) and stim[stim_idx][0] <= now:
                devices.inject_stimulus(stim[stim_idx][1])
                stim_idx += 1
            devices.poll(now)

    c = counter.raw - counter.mode_switch_snapshot
    if writer is not None:
        h = state_hash(machine, counter, devices)
        seq += 1
        writer.append_event(Event(seq, c, EV_STATE_HASH, hash=h))
        if machine.halted:
            seq += 1
            writer.append_event(Event(seq, c, EV_HALT))
    return exit_reason, seq


def emulate(kernel_image, disk_image=b"", stimulus=(), config=None,
            max_instructions=DEFAULT_MAX_INSTRUCTIONS, mem_size=None):
    """Plain live run: no recording at all. Baseline for the record-mode
    overhead measurement and handy in tests."""
    config = config or CounterConfig()
    machine = reset(kernel_image, mem_size) if mem_size else reset(kernel_image)
    counter = Counter(config)
    devices = Devices(disk_image, MODE_FREE)
    _wire(machine, counter, devices)
    t0 = time.monotonic()
    exit_reason, _ = _live_loop(machine, counter, devices, stimulus,
                                max_instructions)
    summary = RunSummary(
        final_icount=counter.raw - counter.mode_switch_snapshot,
        exit_reason=exit_reason,
        final_state_hash=state_hash(machine, counter, devices),
        event_count=0,
        wall_time_ms=int((time.monotonic() - t0) * 1000))
    return summary, machine, counter, devices


def record(kernel_image, disk_image, stimulus, config, out_path,
           max_instructions=DEFAULT_MAX_INSTRUCTIONS,
           checkpoint_interval=DEFAULT_CHECKPOINT_INTERVAL,
           allow_flaky=False, mem_size=None):
    """Live run with full event logging. Returns the RunSummary; the trace
    lands at out_path with checkpoint sidecars."""
    if config.profile == PROFILE_X86_FLAKY and not allow_flaky:
        raise UnusableCounter(
            "x86_flaky cannot produce replayable logs; pass allow_flaky to "
            "record one anyway (it will diverge on replay)")
    machine = reset(kernel_image, mem_size) if mem_size else reset(kernel_image)
    counter = Counter(config)
    devices = Devices(disk_image, MODE_RECORD)
    _wire(machine, counter, devices)
    header = TraceHeader.fresh(
        mem_size=len(machine.mem),
        kernel_image_hash=_sha256(bytes(kernel_image)),
        disk_image_hash=_sha256(bytes(disk_image)),
        counter_config=config,
        checkpoint_interval=checkpoint_interval)
    writer = TraceWriter(out_path, header)
    t0 = time.monotonic()
    try:
        exit_reason, seq = _live_loop(machine, counter, devices, stimulus,
                                      max_instructions, writer,
                                      checkpoint_interval)
    finally:
        writer.close()
    return RunSummary(
        final_icount=counter.raw - counter.mode_switch_snapshot,
        exit_reason=exit_reason,
        final_state_hash=state_hash(machine, counter, devices),
        event_count=seq,
        wall_time_ms=int((time.monotonic() - t0) * 1000))


# -- replay -------------------------------------------------------------

class ReplaySession:
    """Deterministic re-execution of one trace.

    External IRQ lines are gated off throughout; interrupts happen only by
    applying logged IrqDelivery events. The session is also the substrate
    the time-travel debugger drives: it can pause at any instruction
    boundary and be re-positioned via checkpoints.
    """

    def __init__(self, log, kernel_image, disk_image=b"", profile_override=None):
        if isinstance(log, str):
            log = TraceLog.read(log)
        self.log = log
        header = log.header
        if _sha256(bytes(kernel_image)) != header.kernel_image_hash:
            raise ImageMismatch("kernel image hash does not match trace header")
        if _sha256(bytes(disk_image)) != header.disk_image_hash:
            raise ImageMismatch("disk image hash does not match trace header")
        cfg = header.counter_config
        if profile_override is not None:
            cfg = CounterConfig(profile=profile_override,
                                count_user=cfg.count_user,
                                count_supervisor=cfg.count_supervisor,
                                marked_only=cfg.marked_only, seed=cfg.seed)
        if cfg.profile == PROFILE_X86_FLAKY:
            raise UnusableCounter(
                "trace was recorded with the x86_flaky counter; replay needs a "
                "profile with a corrected count (use a profile override)")
        self.config = cfg
        self.kernel_image = bytes(kernel_image)
        self.disk_image = bytes(disk_image)
        self.events = log.events
        self.shadow = []  # events as actually observed during this replay
        self.restart()

    # -- state management ----------------------------------------------

    def restart(self):
        """Back to reset state, cursor at the first event."""
        self.machine = reset(self.kernel_image, self.log.header.mem_size)
        self.counter = Counter(self.config)
        self.devices = Devices(self.disk_image, MODE_REPLAY)
        _wire(self.machine, self.counter, self.devices)
        self.devices.consume_device_read = self._consume_device_read
        self.cursor = 0
        self.shadow = []
        self._irq_retries = 0
        self._stall = 0
        self.done = len(self.events) == 0

    def restore_checkpoint(self, ckpt):
        deserialize_state(ckpt.state, self.machine, self.counter, self.devices)
        self.cursor = ckpt.log_cursor
        self.shadow = []
        self._irq_retries = 0
        self._stall = 0
        self.done = self.cursor >= len(self.events)

    def corrected(self):
        return self.counter.raw - self.counter.mode_switch_snapshot

    def state_hash(self):
        return state_hash(self.machine, self.counter, self.devices)

    # -- divergence -----------------------------------------------------

    def _diverge(self, message, expected=None, actual=None):
        ics = self.log.checkpoint_icounts()
        c = self.corrected()
        nearest = max((ic for ic in ics if ic <= c), default=0)
        raise Divergence(message,
                         at_seq=expected.seq if expected is not None else None,
                         expected=expected, actual=actual,
                         nearest_checkpoint_icount=nearest)

    # -- event application ----------------------------------------------

    def _consume_device_read(self, addr):
        c = self.corrected()
        ev = self.events[self.cursor] if self.cursor < len(self.events) else None
        if ev is None or ev.kind != EV_DEVICE_READ or ev.addr != addr \
                or ev.icount != c:
            self._diverge(
                "device read does not match the log",
                expected=ev, actual={"icount": c, "addr": addr})
        self.cursor += 1
        self.shadow.append(ev)
        return ev.value

    def _process_boundary_events(self):
        """Apply every event due at the current boundary, in seq order.
        Returns True while progress was made."""
        progressed = False
        while self.cursor < len(self.events):
            ev = self.events[self.cursor]
            c = self.corrected()
            if ev.kind == EV_STATE_HASH:
                if c < ev.icount:
                    break
                if c > ev.icount:
                    self._diverge("ran past a StateHash event", expected=ev,
                                  actual={"icount": c})
                h = self.state_hash()
                if h != ev.hash:
                    self._diverge("state hash mismatch", expected=ev,
                                  actual={"icount": c, "hash": h})
                self.cursor += 1
                self.shadow.append(ev)
                progressed = True
            elif ev.kind == EV_IRQ:
                if c < ev.icount:
                    break
                if c > ev.icount:
                    self._diverge("ran past an IrqDelivery event", expected=ev,
                                  actual={"icount": c})
                if not self.machine.ie:
                    # defensive: well-formed logs recorded the post-gating
                    # delivery moment, so ie should already be set
                    self._irq_retries += 1
                    if self._irq_retries > IRQ_RETRY_LIMIT:
                        self._diverge(
                            "interrupt enable never set at the logged delivery point",
                            expected=ev, actual={"icount": c, "ie": 0})
                    break
                self._irq_retries = 0
                self.machine.raise_irq(ev.line)
                self.machine.deliver_interrupt(ev.line)
                self.cursor += 1
                self.shadow.append(ev)
                progressed = True
            elif ev.kind == EV_HALT:
                if not self.machine.halted:
                    if c > ev.icount:
                        self._diverge("ran past the Halt event", expected=ev,
                                      actual={"icount": c})
                    break
                if c != ev.icount:
                    self._diverge("halted at the wrong instruction count",
                                  expected=ev, actual={"icount": c})
                self.cursor += 1
                self.shadow.append(Event(ev.seq, c, EV_HALT))
                progressed = True
            else:  # DeviceRead: consumed inside the guest's load instruction
                if c > ev.icount:
                    self._diverge("ran past a DeviceRead event", expected=ev,
                                  actual={"icount": c})
                break
        if self.cursor >= len(self.events):
            self.done = True
        return progressed

    # -- stepping -------------------------------------------------------

    def advance(self):
        """Process due events, then execute one instruction if the replay
        is not finished. One call == at most one retired instruction."""
        self._process_boundary_events()
        if self.done:
            return False
        self.step_instr()
        return True

    def step_instr(self):
        """Execute exactly one gated instruction (no event processing);
        callers are expected to have settled the boundary first."""
        if self.machine.halted:
            ev = self.events[self.cursor]
            self._diverge("machine halted before event", expected=ev,
                          actual={"icount": self.corrected(), "halted": True})
        c0 = self.corrected()
        cur0 = self.cursor
        self.machine.step(False)
        if self.corrected() == c0 and self.cursor == cur0:
            # supervisor spin while no admitted retires advance the count;
            # bounded so malformed logs cannot hang the replayer
            self._stall += 1
            if self._stall > IRQ_RETRY_LIMIT:
                self._diverge("replay stalled: corrected count no longer advances",
                              expected=self.events[self.cursor],
                              actual={"icount": c0})
        else:
            self._stall = 0

    def run_to_end(self):
        while not self.done:
            self.advance()

    def run_to_icount(self, target):
        """Advance until the corrected count reaches target; pauses before
        any state-changing event due at that boundary."""
        if target < self.corrected():
            raise ValueError("run_to_icount target %d is in the past" % target)
        while self.corrected() < target and not self.done:
            self.advance()
        # settle hash events due exactly at the pause point
        while (self.cursor < len(self.events)
               and self.events[self.cursor].kind == EV_STATE_HASH
               and self.events[self.cursor].icount == self.corrected()):
            self._process_boundary_events()

    # -- shadow log -----------------------------------------------------

    def write_shadow_log(self, path):
        writer = TraceWriter(path, self.log.header)
        for ev in self.shadow:
            writer.append_event(ev)
        writer.close()


def replay(log, kernel_image, disk_image=b"", profile_override=None,
           shadow_log_path=None):
    """Replay a trace to its end. Divergence is reported in the summary
    rather than raised."""
    session = ReplaySession(log, kernel_image, disk_image, profile_override)
    t0 = time.monotonic()
    divergence = None
    try:
        session.run_to_end()
        exit_reason = EXIT_HALTED if session.machine.halted else EXIT_LIMIT
    except Divergence as exc:
        divergence = exc.report()
        exit_reason = EXIT_DIVERGENCE
    if shadow_log_path and divergence is None:
        session.write_shadow_log(shadow_log_path)
    return RunSummary(
        final_icount=session.corrected(),
        exit_reason=exit_reason,
        final_state_hash=session.state_hash(),
        event_count=len(session.shadow),
        wall_time_ms=int((time.monotonic() - t0) * 1000),
        divergence=divergence)


def seek(log, kernel_image, disk_image, target_icount, profile_override=None):
    """Session positioned at target_icount: nearest checkpoint at or below,
    then forward replay. Indistinguishable from a straight replay paused
    there."""
    session = ReplaySession(log, kernel_image, disk_image, profile_override)
    ckpt = session.log.load_checkpoint(target_icount)
    if ckpt is not None:
        session.restore_checkpoint(ckpt)
    session.run_to_icount(target_icount)
    return session


def run_until(machine, counter, target):
    """Advance a gated machine until the corrected count reaches target,
    using the counter's PMI. Returns at the instruction boundary, before
    the next fetch."""
    counter.arm_pmi(target)
    while not counter.fired:
        if machine.halted:
            raise RuntimeError("machine halted before reaching target %d" % target)
        machine.step(False)
    counter.clear_pmi()
