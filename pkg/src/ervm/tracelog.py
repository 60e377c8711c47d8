"""Persistent run record: header, event stream, state hashing, checkpoints.

On-disk layout: line 1 is the header as one JSON object; every following
line is one event with fixed key order (seq, icount, kind, then payload
fields alphabetically). Checkpoints live in sidecar files
`<log>.ckpt.<icount>` next to the log. All integers are decimal, hashes
lowercase hex; files stay diffable on purpose.
"""

import base64
import glob
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass, field

from .counter import CounterConfig
from .errors import CorruptLog

FORMAT_VERSION = 1
ISA_VERSION = 1
HASH_ALG = "sha256"
DEFAULT_CHECKPOINT_INTERVAL = 100_000

EV_IRQ = "IrqDelivery"
EV_DEVICE_READ = "DeviceRead"
EV_STATE_HASH = "StateHash"
EV_HALT = "Halt"


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class Event:
    seq: int
    icount: int
    kind: str
    line: int = None        # IrqDelivery
    addr: int = None        # DeviceRead
    value: int = None       # DeviceRead
    hash: str = None        # StateHash

    def to_dict(self):
        d = {"seq": self.seq, "icount": self.icount, "kind": self.kind}
        if self.kind == EV_IRQ:
            d["line"] = self.line
        elif self.kind == EV_DEVICE_READ:
            d["addr"] = self.addr
            d["value"] = self.value
        elif self.kind == EV_STATE_HASH:
            d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(seq=d["seq"], icount=d["icount"], kind=d["kind"],
                   line=d.get("line"), addr=d.get("addr"),
                   value=d.get("value"), hash=d.get("hash"))


@dataclass
class TraceHeader:
    mem_size: int
    kernel_image_hash: str
    disk_image_hash: str
    counter_config: CounterConfig
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL
    created_at: str = ""  # informational; excluded from comparisons
    format_version: int = FORMAT_VERSION
    isa_version: int = ISA_VERSION
    hash_alg: str = HASH_ALG

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "isa_version": self.isa_version,
            "mem_size": self.mem_size,
            "kernel_image_hash": self.kernel_image_hash,
            "disk_image_hash": self.disk_image_hash,
            "counter_config": self.counter_config.to_dict(),
            "checkpoint_interval": self.checkpoint_interval,
            "hash_alg": self.hash_alg,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                mem_size=d["mem_size"],
                kernel_image_hash=d["kernel_image_hash"],
                disk_image_hash=d["disk_image_hash"],
                counter_config=CounterConfig.from_dict(d["counter_config"]),
                checkpoint_interval=d["checkpoint_interval"],
                created_at=d.get("created_at", ""),
                format_version=d["format_version"],
                isa_version=d["isa_version"],
                hash_alg=d.get("hash_alg", HASH_ALG),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptLog("bad trace header: %s" % exc) from None

    @classmethod
    def fresh(cls, mem_size, kernel_image_hash, disk_image_hash,
              counter_config, checkpoint_interval=DEFAULT_CHECKPOINT_INTERVAL):
        return cls(mem_size=mem_size, kernel_image_hash=kernel_image_hash,
                   disk_image_hash=disk_image_hash, counter_config=counter_config,
                   checkpoint_interval=checkpoint_interval,
                   created_at=time.strftime("%Y-%m-%dT%H:%M:%S"))


# -- canonical machine-state serialization ------------------------------

_HEAD = struct.Struct("<16III6IQQ")
_TAIL = struct.Struct("<QQ")


def serialize_state(machine, counter, devices):
    """Canonical byte form of the replay-relevant state. Identical state
    yields identical bytes; this feeds the divergence-oracle hash and the
    checkpoint files.

    The console-FIFO slot always serializes empty: queued-but-unread
    stimulus bytes are host-side staging that has not crossed into the
    deterministic boundary yet, and replay never populates the FIFO.
    """
    parts = [
        _HEAD.pack(*machine.regs, machine.pc, machine.status_word(),
                   machine.status_word(), *machine.csrs[1:6],
                   machine.retired, machine.mode_switches),
        bytes(machine.mem),
        # the counter serializes as its corrected view (corrected count,
        # zero snapshot): logs and hashes stay portable across profiles
        _TAIL.pack(counter.raw - counter.mode_switch_snapshot, 0),
        struct.pack("<I", 0),  # console FIFO (always empty, see above)
        struct.pack("<I", len(devices.overlay)),
    ]
    for sector in sorted(devices.overlay):
        parts.append(struct.pack("<I", sector))
        parts.append(devices.overlay[sector])
    parts.append(struct.pack("<III", devices.sector_reg, devices.buf_reg,
                             devices.status_reg))
    return b"".join(parts)


def deserialize_state(data, machine, counter, devices):
    """Inverse of serialize_state, mutating the given objects in place."""
    off = _HEAD.size
    fields = _HEAD.unpack_from(data, 0)
    machine.regs = list(fields[0:16])
    machine.pc = fields[16]
    machine._set_status(fields[17])
    machine.csrs = [fields[18]] + list(fields[19:24])
    machine.retired = fields[24]
    machine.mode_switches = fields[25]
    machine.halted = False
    machine.pending_irqs = 0
    mem_size = len(machine.mem)
    machine.mem[:] = data[off:off + mem_size]
    off += mem_size
    counter.raw, counter.mode_switch_snapshot = _TAIL.unpack_from(data, off)
    off += _TAIL.size
    (fifo_len,) = struct.unpack_from("<I", data, off)
    off += 4 + fifo_len
    devices.rx_queue.clear()
    (n_overlay,) = struct.unpack_from("<I", data, off)
    off += 4
    devices.overlay = {}
    for _ in range(n_overlay):
        (sector,) = struct.unpack_from("<I", data, off)
        off += 4
        devices.overlay[sector] = bytes(data[off:off + 512])
        off += 512
    devices.sector_reg, devices.buf_reg, devices.status_reg = \
        struct.unpack_from("<III", data, off)


def state_hash(machine, counter, devices):
    return hashlib.sha256(serialize_state(machine, counter, devices)).hexdigest()


# -- checkpoints --------------------------------------------------------

@dataclass
class Checkpoint:
    icount: int
    retired: int
    log_cursor: int  # seq of the next event after this point
    state_hash: str
    state: bytes


def checkpoint_path(log_path, icount):
    return "%s.ckpt.%d" % (log_path, icount)


def write_checkpoint(log_path, ckpt):
    doc = {
        "icount": ckpt.icount,
        "retired": ckpt.retired,
        "log_cursor": ckpt.log_cursor,
        "state_hash": ckpt.state_hash,
        "state": base64.b64encode(ckpt.state).decode("ascii"),
    }
    with open(checkpoint_path(log_path, ckpt.icount), "w") as f:
        json.dump(doc, f)
        f.write("\n")


def read_checkpoint_file(path):
    with open(path) as f:
        doc = json.load(f)
    return Checkpoint(icount=doc["icount"], retired=doc["retired"],
                      log_cursor=doc["log_cursor"], state_hash=doc["state_hash"],
                      state=base64.b64decode(doc["state"]))


def list_checkpoint_icounts(log_path):
    out = []
    for path in glob.glob(glob.escape(log_path) + ".ckpt.*"):
        suffix = path.rsplit(".", 1)[-1]
        if suffix.isdigit():
            out.append(int(suffix))
    return sorted(out)


def load_checkpoint(log_path, icount):
    """Latest checkpoint with icount <= requested, or None (meaning start
    from reset: icount 0 is an implicit checkpoint)."""
    best = None
    for ic in list_checkpoint_icounts(log_path):
        if ic <= icount and (best is None or ic > best):
            best = ic
    if best is None:
        return None
    return read_checkpoint_file(checkpoint_path(log_path, best))


# -- log writer / reader ------------------------------------------------

class TraceWriter:
    """Single-writer, append-only event log."""

    def __init__(self, path, header):
        self.path = path
        self.header = header
        self._f = open(path, "w")
        self._f.write(json.dumps(header.to_dict()) + "\n")
        self._last_seq = 0
        self._last_icount = -1
        self._halted = False

    def append_event(self, event):
        if self._halted:
            raise CorruptLog("append after terminal Halt event")
        if event.seq <= self._last_seq:
            raise CorruptLog("event seq %d not increasing (last %d)"
                             % (event.seq, self._last_seq))
        if event.icount < self._last_icount:
            raise CorruptLog("event icount %d decreased (last %d)"
                             % (event.icount, self._last_icount))
        self._last_seq = event.seq
        self._last_icount = event.icount
        if event.kind == EV_HALT:
            self._halted = True
        self._f.write(json.dumps(event.to_dict()) + "\n")

    def write_checkpoint(self, ckpt):
        write_checkpoint(self.path, ckpt)

    def flush(self):
        self._f.flush()

    def close(self):
        self._f.close()


class TraceLog:
    """Fully-read trace: header plus the validated event list."""

    def __init__(self, path, header, events):
        self.path = path
        self.header = header
        self.events = events

    @classmethod
    def read(cls, path):
        with open(path) as f:
            lines = f.read().splitlines()
        if not lines:
            raise CorruptLog("empty trace file")
        try:
            header = TraceHeader.from_dict(json.loads(lines[0]))
        except json.JSONDecodeError as exc:
            raise CorruptLog("unparseable header: %s" % exc) from None
        events = []
        last_seq, last_icount, halted = 0, -1, False
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            try:
                ev = Event.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorruptLog("line %d: %s" % (lineno, exc)) from None
            if halted:
                raise CorruptLog("line %d: event after terminal Halt" % lineno)
            if ev.seq <= last_seq:
                raise CorruptLog("line %d: seq not increasing" % lineno)
            if ev.icount < last_icount:
                raise CorruptLog("line %d: icount decreased" % lineno)
            if ev.kind not in (EV_IRQ, EV_DEVICE_READ, EV_STATE_HASH, EV_HALT):
                raise CorruptLog("line %d: unknown event kind %r" % (lineno, ev.kind))
            last_seq, last_icount = ev.seq, ev.icount
            halted = ev.kind == EV_HALT
            events.append(ev)
        return cls(path, header, events)

    def load_checkpoint(self, icount):
        return load_checkpoint(self.path, icount)

    def checkpoint_icounts(self):
        return list_checkpoint_icounts(self.path)
