"""Deterministic 32-bit CPU core: registers, memory, privilege modes,
traps, interrupt delivery, MMIO dispatch.

Everything a guest can do — including misbehaving — stays inside the
machine: bad memory accesses, illegal opcodes and privilege violations
become guest traps, never host exceptions. Given the same state and the
same interrupt gating, `step` is fully deterministic.
"""

from .isa import (
    CAUSE_ECALL, CAUSE_ILLEGAL, CAUSE_MEM_FAULT, CAUSE_PRIVILEGE,
    CSR_CAUSE, CSR_EPC, CSR_ESTATUS, CSR_IVEC, CSR_MARK, CSR_STATUS,
    MMIO_BASE, MMIO_END, NUM_CSRS,
)

MODE_USER = 0
MODE_SUPERVISOR = 1

# status word layout: bit0 = interrupt enable, bit1 = supervisor mode
STATUS_IE = 0x1
STATUS_SUP = 0x2

# step outcomes
OUT_RETIRED = 0
OUT_TRAPPED = 1
OUT_HALTED = 2

DEFAULT_MEM_SIZE = 1 << 20


class ImageTooLarge(ValueError):
    pass


class _NullDevices:
    """MMIO backend used when no device block is attached: reads as zero,
    writes discarded (still deterministic)."""

    def read32(self, addr):
        return 0

    def write32(self, addr, value):
        pass


class _NullCounter:
    count_user = True
    count_supervisor = True
    marked_only = False

    def retire(self, is_user, mark):
        pass

    def mode_switch(self, from_user, mark):
        pass


class Machine:
    __slots__ = ("regs", "pc", "mode", "ie", "csrs", "mem", "pending_irqs",
                 "halted", "retired", "mode_switches", "user_retired",
                 "last_cause", "devices", "counter")

    def __init__(self, mem_size=DEFAULT_MEM_SIZE):
        self.regs = [0] * 16
        self.pc = 0
        self.mode = MODE_SUPERVISOR
        self.ie = 0
        self.csrs = [0] * NUM_CSRS
        self.mem = bytearray(mem_size)
        self.pending_irqs = 0
        self.halted = False
        self.retired = 0
        self.mode_switches = 0
        self.user_retired = 0  # ground-truth user-mode retires, diagnostics only
        self.last_cause = None
        self.devices = _NullDevices()
        self.counter = _NullCounter()

    # -- status word ----------------------------------------------------

    def status_word(self):
        return (STATUS_SUP if self.mode == MODE_SUPERVISOR else 0) | \
               (STATUS_IE if self.ie else 0)

    def _set_status(self, word):
        self.mode = MODE_SUPERVISOR if word & STATUS_SUP else MODE_USER
        self.ie = 1 if word & STATUS_IE else 0

    # -- traps and interrupts -------------------------------------------

    def raise_irq(self, line):
        self.pending_irqs |= 1 << line

    def deliver_interrupt(self, cause):
        """Vector to IVEC. Asynchronous causes (0..15) require ie set;
        synchronous traps go through unconditionally."""
        if cause < 16:
            assert self.ie, "external IRQ delivered with interrupts disabled"
            self.pending_irqs &= ~(1 << cause)
        was_user = self.mode == MODE_USER
        csrs = self.csrs
        csrs[CSR_EPC] = self.pc
        csrs[CSR_ESTATUS] = self.status_word()
        csrs[CSR_CAUSE] = cause
        self.mode = MODE_SUPERVISOR
        self.ie = 0
        self.pc = csrs[CSR_IVEC]
        self.last_cause = cause
        if was_user:
            self.mode_switches += 1
            self.counter.mode_switch(True, csrs[CSR_MARK])

    # -- the interpreter ------------------------------------------------

    def step(self, irq_gate=True):
        """One instruction boundary: interrupt-delivery check, then fetch,
        execute, retire. Delivery consumes no retired instruction."""
        if self.halted:
            raise RuntimeError("step on a halted machine")

        if irq_gate and self.ie and self.pending_irqs:
            p = self.pending_irqs
            line = (p & -p).bit_length() - 1  # lowest pending line wins
            self.deliver_interrupt(line)
            return OUT_TRAPPED

        pc = self.pc
        mem = self.mem
        if pc & 3 or pc + 4 > len(mem):
            self.deliver_interrupt(CAUSE_MEM_FAULT)
            return OUT_TRAPPED
        word = int.from_bytes(mem[pc:pc + 4], "little")

        opcode = (word >> 24) & 0xFF
        regs = self.regs
        is_user = self.mode == MODE_USER
        counter = self.counter
        mark = self.csrs[CSR_MARK]

        if opcode == 0x00:  # HALT
            self.pc = pc + 4
            self.retired += 1
            if is_user:
                self.user_retired += 1
            counter.retire(is_user, mark)
            self.halted = True
            return OUT_HALTED

        if opcode <= 0x07:  # R-type ALU
            a = regs[(word >> 16) & 0xF]
            b = regs[(word >> 12) & 0xF]
            if opcode == 0x01:
                v = (a + b) & 0xFFFFFFFF
            elif opcode == 0x02:
                v = (a - b) & 0xFFFFFFFF
            elif opcode == 0x03:
                v = a & b
            elif opcode == 0x04:
                v = a | b
            elif opcode == 0x05:
                v = a ^ b
            elif opcode == 0x06:
                v = (a << (b & 31)) & 0xFFFFFFFF
            else:
                v = a >> (b & 31)
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = v
            self.pc = pc + 4

        elif opcode == 0x10:  # ADDI
            imm = word & 0xFFFF
            if imm & 0x8000:
                imm -= 0x10000
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = (regs[(word >> 16) & 0xF] + imm) & 0xFFFFFFFF
            self.pc = pc + 4

        elif opcode == 0x11:  # LUI
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = (word & 0xFFFF) << 16
            self.pc = pc + 4

        elif opcode == 0x20:  # LD
            imm = word & 0xFFFF
            if imm & 0x8000:
                imm -= 0x10000
            addr = (regs[(word >> 16) & 0xF] + imm) & 0xFFFFFFFF
            if MMIO_BASE <= addr <= MMIO_END:
                v = self.devices.read32(addr)
            elif addr + 4 <= len(mem):
                v = int.from_bytes(mem[addr:addr + 4], "little")
            else:
                self.deliver_interrupt(CAUSE_MEM_FAULT)
                return OUT_TRAPPED
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = v
            self.pc = pc + 4

        elif opcode == 0x21:  # ST
            imm = word & 0xFFFF
            if imm & 0x8000:
                imm -= 0x10000
            addr = (regs[(word >> 16) & 0xF] + imm) & 0xFFFFFFFF
            v = regs[(word >> 20) & 0xF]
            if MMIO_BASE <= addr <= MMIO_END:
                self.devices.write32(addr, v)
            elif addr + 4 <= len(mem):
                mem[addr:addr + 4] = v.to_bytes(4, "little")
            else:
                self.deliver_interrupt(CAUSE_MEM_FAULT)
                return OUT_TRAPPED
            self.pc = pc + 4

        elif 0x30 <= opcode <= 0x32:  # BEQ/BNE/BLT, operands in rd/rs1 slots
            a = regs[(word >> 20) & 0xF]
            b = regs[(word >> 16) & 0xF]
            if opcode == 0x30:
                taken = a == b
            elif opcode == 0x31:
                taken = a != b
            else:
                sa = a - 0x100000000 if a & 0x80000000 else a
                sb = b - 0x100000000 if b & 0x80000000 else b
                taken = sa < sb
            if taken:
                imm = word & 0xFFFF
                if imm & 0x8000:
                    imm -= 0x10000
                self.pc = (pc + 4 + 4 * imm) & 0xFFFFFFFF
            else:
                self.pc = pc + 4

        elif opcode == 0x40:  # JAL
            imm = word & 0xFFFF
            if imm & 0x8000:
                imm -= 0x10000
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = (pc + 4) & 0xFFFFFFFF
            self.pc = (pc + 4 + 4 * imm) & 0xFFFFFFFF

        elif opcode == 0x41:  # JALR
            imm = word & 0xFFFF
            if imm & 0x8000:
                imm -= 0x10000
            target = (regs[(word >> 16) & 0xF] + imm) & 0xFFFFFFFF
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = (pc + 4) & 0xFFFFFFFF
            self.pc = target

        elif opcode == 0x50:  # ECALL: retires, then traps with EPC past it
            self.pc = pc + 4
            self.retired += 1
            if is_user:
                self.user_retired += 1
            counter.retire(is_user, mark)
            self.deliver_interrupt(CAUSE_ECALL)
            return OUT_TRAPPED

        elif opcode == 0x51:  # ERET
            if is_user:
                self.deliver_interrupt(CAUSE_PRIVILEGE)
                return OUT_TRAPPED
            self.retired += 1
            counter.retire(False, mark)
            est = self.csrs[CSR_ESTATUS]
            self.pc = self.csrs[CSR_EPC]
            self._set_status(est)
            if self.mode == MODE_USER:
                self.mode_switches += 1
                counter.mode_switch(False, mark)
            return OUT_RETIRED

        elif opcode == 0x60:  # CSRR
            if is_user:
                self.deliver_interrupt(CAUSE_PRIVILEGE)
                return OUT_TRAPPED
            idx = word & 0xFFFF
            if idx >= NUM_CSRS:
                self.deliver_interrupt(CAUSE_ILLEGAL)
                return OUT_TRAPPED
            v = self.status_word() if idx == CSR_STATUS else self.csrs[idx]
            rd = (word >> 20) & 0xF
            if rd:
                regs[rd] = v
            self.pc = pc + 4

        elif opcode == 0x61:  # CSRW
            if is_user:
                self.deliver_interrupt(CAUSE_PRIVILEGE)
                return OUT_TRAPPED
            idx = word & 0xFFFF
            if idx >= NUM_CSRS:
                self.deliver_interrupt(CAUSE_ILLEGAL)
                return OUT_TRAPPED
            v = regs[(word >> 16) & 0xF]
            if idx == CSR_STATUS:
                # mode changes go only through trap/ERET, so the privilege
                # transition count stays well defined
                self.ie = v & 1
            else:
                self.csrs[idx] = v
            self.pc = pc + 4

        else:
            self.deliver_interrupt(CAUSE_ILLEGAL)
            return OUT_TRAPPED

        self.retired += 1
        if is_user:
            self.user_retired += 1
        counter.retire(is_user, mark)
        return OUT_RETIRED


def reset(kernel_image, mem_size=DEFAULT_MEM_SIZE):
    """Fresh machine: zeroed memory with the image at address 0, pc=0,
    supervisor mode, interrupts off, all counts zero."""
    if len(kernel_image) > mem_size:
        raise ImageTooLarge("image is %d bytes, memory only %d"
                            % (len(kernel_image), mem_size))
    m = Machine(mem_size)
    m.mem[:len(kernel_image)] = kernel_image
    return m
