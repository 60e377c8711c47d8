"""Virtual devices: console, one-shot timer, synchronous disk.

These are the only channels through which nondeterminism can enter the
machine. Reads of the nondeterministic registers (console status/rx,
timer now) are logged during record and served from the log during
replay; the disk is synchronous and content-addressed, so it stays
inside the deterministic boundary and is never logged.
"""

from collections import deque

from .errors import ErvmError

MODE_FREE = "free"      # plain emulation: live devices, nothing logged
MODE_RECORD = "record"
MODE_REPLAY = "replay"

SECTOR_SIZE = 512

CONSOLE_STATUS = 0xF000_0000  # bit0 = rx_ready
CONSOLE_RX = 0xF000_0004      # read pops the FIFO; 0 when empty
CONSOLE_TX = 0xF000_0008
TIMER_NOW = 0xF000_0010       # monotonic ms, 32-bit truncated
TIMER_CMP = 0xF000_0014       # ms from now, one-shot
DISK_SECTOR = 0xF000_0020
DISK_BUF = 0xF000_0024
DISK_CMD = 0xF000_0028        # 1: sector -> memory, 2: memory -> overlay
DISK_STATUS = 0xF000_002C     # bit0 = error

IRQ_TIMER = 0
IRQ_CONSOLE = 1

NONDET_REGS = frozenset((CONSOLE_STATUS, CONSOLE_RX, TIMER_NOW))


class StimulusInReplay(ErvmError):
    """Replay takes its input from the log only."""


class StimulusScriptError(ValueError):
    pass


def parse_stimulus(text):
    """Parse `AT <ms> CONSOLE <hex-bytes...>` lines into (at_ms, bytes)
    entries. `#` starts a comment; at_ms must be nondecreasing."""
    entries = []
    last_ms = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4 or parts[0] != "AT" or parts[2] != "CONSOLE":
            raise StimulusScriptError("line %d: expected 'AT <ms> CONSOLE <hex>...'" % lineno)
        try:
            at_ms = int(parts[1])
            payload = bytes(int(p, 16) for p in parts[3:])
        except ValueError as exc:
            raise StimulusScriptError("line %d: %s" % (lineno, exc)) from None
        if at_ms < last_ms:
            raise StimulusScriptError("line %d: at_ms decreased" % lineno)
        last_ms = at_ms
        entries.append((at_ms, payload))
    return entries


class Devices:
    """Device block owned by one emulation loop.

    Hooks wired by the engine:
      now_ms            () -> int, host monotonic ms (record/free only)
      emit_device_read  (addr, value) -> None, log one read (record only)
      consume_device_read (addr) -> int, serve + verify from log (replay only)
    """

    def __init__(self, disk_image=b"", mode=MODE_FREE):
        self.mode = mode
        self.disk_image = bytes(disk_image)
        self.overlay = {}  # sector index -> 512-byte block
        self.sector_reg = 0
        self.buf_reg = 0
        self.status_reg = 0
        self.rx_queue = deque()
        self.tx_sink = bytearray()
        self.timer_deadline = None  # host ms; record/free only
        self.machine = None  # set by the engine; disk DMA needs memory
        self.now_ms = lambda: 0
        self.emit_device_read = lambda addr, value: None
        self.consume_device_read = None

    @property
    def num_sectors(self):
        return (len(self.disk_image) + SECTOR_SIZE - 1) // SECTOR_SIZE

    # -- MMIO -----------------------------------------------------------

    def read32(self, addr):
        if addr in NONDET_REGS:
            if self.mode == MODE_REPLAY:
                return self.consume_device_read(addr)
            if addr == CONSOLE_STATUS:
                value = 1 if self.rx_queue else 0
            elif addr == CONSOLE_RX:
                value = self.rx_queue.popleft() if self.rx_queue else 0
            else:
                value = self.now_ms() & 0xFFFFFFFF
            if self.mode == MODE_RECORD:
                self.emit_device_read(addr, value)
            return value
        if addr == DISK_SECTOR:
            return self.sector_reg
        if addr == DISK_BUF:
            return self.buf_reg
        if addr == DISK_STATUS:
            return self.status_reg
        return 0

    def write32(self, addr, value):
        if addr == CONSOLE_TX:
            self.tx_sink.append(value & 0xFF)
        elif addr == TIMER_CMP:
            if self.mode != MODE_REPLAY:
                # replay never consults the host clock; logged timer
                # interrupts stand in for expiry
                self.timer_deadline = self.now_ms() + value
        elif addr == DISK_SECTOR:
            self.sector_reg = value
        elif addr == DISK_BUF:
            self.buf_reg = value
        elif addr == DISK_CMD:
            self._disk_cmd(value)

    # -- disk -----------------------------------------------------------

    def read_sector(self, sector):
        if sector in self.overlay:
            return self.overlay[sector]
        off = sector * SECTOR_SIZE
        block = self.disk_image[off:off + SECTOR_SIZE]
        return block + b"\x00" * (SECTOR_SIZE - len(block))

    def _disk_cmd(self, cmd):
        sector, buf = self.sector_reg, self.buf_reg
        mem = self.machine.mem
        if sector >= self.num_sectors or buf + SECTOR_SIZE > len(mem):
            self.status_reg |= 1
            return
        self.status_reg = 0
        if cmd == 1:
            mem[buf:buf + SECTOR_SIZE] = self.read_sector(sector)
        elif cmd == 2:
            self.overlay[sector] = bytes(mem[buf:buf + SECTOR_SIZE])
        else:
            self.status_reg |= 1

    # -- timer / stimulus (record and free modes) -----------------------

    def poll(self, now):
        """Check the one-shot timer against the host clock; called at
        instruction boundaries by the record loop."""
        if self.timer_deadline is not None and now >= self.timer_deadline:
            self.timer_deadline = None
            self.machine.raise_irq(IRQ_TIMER)

    def inject_stimulus(self, payload):
        if self.mode == MODE_REPLAY:
            raise StimulusInReplay("stimulus injection during replay")
        self.rx_queue.extend(payload)
        self.machine.raise_irq(IRQ_CONSOLE)
