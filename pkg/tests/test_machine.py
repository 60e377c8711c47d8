"""CPU core semantics: determinism, trap vectoring, reset."""

import random
import struct

import pytest

from ervm import isa
from ervm.machine import (MODE_SUPERVISOR, MODE_USER, OUT_HALTED, OUT_RETIRED,
                          OUT_TRAPPED, ImageTooLarge, Machine, reset)
from ervm.tracelog import state_hash
from ervm.counter import Counter, CounterConfig
from ervm.devices import Devices, MODE_FREE


def _words(*ws):
    return struct.pack("<%dI" % len(ws), *ws)


def _snapshot(m):
    return (list(m.regs), m.pc, m.mode, m.ie, list(m.csrs), bytes(m.mem),
            m.pending_irqs, m.halted, m.retired, m.mode_switches)


def test_empty_image_halts_first_step():
    m = reset(b"", 4096)
    assert m.pc == 0 and m.mode == MODE_SUPERVISOR and m.ie == 0
    assert m.step() == OUT_HALTED
    assert m.halted


def test_addi_then_halt():
    m = reset(_words(0x10100005, 0x00000000), 4096)
    assert m.step() == OUT_RETIRED
    assert m.regs[1] == 5 and m.pc == 4 and m.retired == 1
    assert m.step() == OUT_HALTED
    assert m.halted and m.retired == 2


def test_reset_twice_identical_hashes():
    img = _words(0x10100005, 0x01312000, 0x00000000)
    hashes = []
    for _ in range(2):
        m = reset(img, 4096)
        c = Counter(CounterConfig())
        d = Devices(b"", MODE_FREE)
        hashes.append(state_hash(m, c, d))
    assert hashes[0] == hashes[1]


def test_reset_image_too_large():
    with pytest.raises(ImageTooLarge):
        reset(b"\x00" * 8192, 4096)


def test_r0_immutable():
    m = reset(_words(0x10000005, 0x00000000), 4096)  # ADDI r0, r0, 5
    m.step()
    assert m.regs[0] == 0


def test_pending_irq_delivery_preempts_fetch():
    m = reset(_words(0x10100005), 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.ie = 1
    m.raise_irq(1)
    out = m.step()
    assert out == OUT_TRAPPED
    assert m.retired == 0
    assert m.mode == MODE_SUPERVISOR and m.ie == 0
    assert m.pc == 0x100 and m.csrs[isa.CSR_CAUSE] == 1
    assert m.pending_irqs == 0


def test_lowest_pending_line_wins():
    m = reset(b"", 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.ie = 1
    m.raise_irq(5)
    m.raise_irq(2)
    m.step()
    assert m.csrs[isa.CSR_CAUSE] == 2
    assert m.pending_irqs == 1 << 5


def test_gated_step_ignores_pending_irq():
    m = reset(_words(0x10100005), 4096)
    m.ie = 1
    m.raise_irq(1)
    assert m.step(irq_gate=False) == OUT_RETIRED
    assert m.regs[1] == 5 and m.pending_irqs == 1 << 1


def test_deliver_from_user_counts_mode_switch():
    m = reset(b"", 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.mode = MODE_USER
    m.ie = 1
    m.pc = 0x2000
    m.raise_irq(0)
    m.deliver_interrupt(0)
    assert m.pc == 0x100
    assert m.csrs[isa.CSR_EPC] == 0x2000
    assert m.mode_switches == 1


def test_deliver_from_supervisor_no_mode_switch():
    m = reset(b"", 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.ie = 1
    m.raise_irq(1)
    m.deliver_interrupt(1)
    assert m.mode == MODE_SUPERVISOR and m.mode_switches == 0


def test_deliver_then_eret_restores():
    # ERET placed at the vector restores the interrupted pc and status
    img = bytearray(4096)
    img[0x100:0x104] = isa.encode(isa.Instruction(isa.OP_ERET)).to_bytes(4, "little")
    m = reset(bytes(img), 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.mode = MODE_USER
    m.ie = 1
    m.pc = 0x2000
    m.raise_irq(0)
    m.deliver_interrupt(0)
    m.step()
    assert m.pc == 0x2000 and m.mode == MODE_USER and m.ie == 1
    assert m.mode_switches == 2


def test_ecall_epc_points_past_it():
    img = _words(0x50000000)
    m = reset(img, 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    assert m.step() == OUT_TRAPPED
    assert m.csrs[isa.CSR_EPC] == 4
    assert m.csrs[isa.CSR_CAUSE] == isa.CAUSE_ECALL
    assert m.retired == 1  # ECALL itself retires


def test_user_privilege_violations_trap():
    for word in (0x51000000,              # ERET
                 0x60100000,              # CSRR
                 0x61000000 | isa.CSR_IVEC):  # CSRW
        m = reset(_words(word), 4096)
        m.csrs[isa.CSR_IVEC] = 0x100
        m.mode = MODE_USER
        m.step()
        assert m.csrs[isa.CSR_CAUSE] == isa.CAUSE_PRIVILEGE
        assert m.pc == 0x100


def test_illegal_opcode_traps():
    m = reset(_words(0xAA000000), 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.step()
    assert m.csrs[isa.CSR_CAUSE] == isa.CAUSE_ILLEGAL


def test_mem_fault_on_out_of_range_load():
    m = reset(_words(0x20210000), 4096)  # LD r2, r1, 0 with r1 huge
    m.regs[1] = 0x00800000
    m.csrs[isa.CSR_IVEC] = 0x100
    m.step()
    assert m.csrs[isa.CSR_CAUSE] == isa.CAUSE_MEM_FAULT


def _random_program(rng, n):
    """ALU/branch-only program; branches jump forward so it terminates."""
    words = []
    for k in range(n):
        kind = rng.randrange(6)
        rd = rng.randrange(1, 16)
        rs1 = rng.randrange(16)
        if kind == 0:
            words.append(0x10000000 | (rd << 20) | (rs1 << 16)
                         | rng.randrange(0x10000))
        elif kind == 1:
            words.append(0x11000000 | (rd << 20) | rng.randrange(0x10000))
        elif kind < 5:
            op = rng.choice((0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07))
            words.append((op << 24) | (rd << 20) | (rs1 << 16)
                         | (rng.randrange(16) << 12))
        else:
            op = rng.choice((0x30, 0x31, 0x32))
            skip = rng.randrange(1, 4)
            words.append((op << 24) | (rd << 20) | (rs1 << 16) | skip)
    words.append(0x00000000)
    words += [0x00000000] * 4  # branch landing pads
    return _words(*words)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_determinism_random_programs(seed):
    rng = random.Random(seed)
    img = _random_program(rng, 10_000)
    finals = []
    for _ in range(2):
        m = reset(img, len(img) + 4096)
        steps = 0
        while not m.halted and steps < 100_000:
            m.step()
            steps += 1
        finals.append(_snapshot(m))
    assert finals[0] == finals[1]


def test_retired_monotonic_under_delivery():
    m = reset(_words(0x10100005, 0x10100005), 4096)
    m.csrs[isa.CSR_IVEC] = 0x100
    m.ie = 1
    m.raise_irq(3)
    r0 = m.retired
    m.step()           # delivery, no retire
    assert m.retired == r0
    m.step()           # vector target executes (zero word halts)
    assert m.retired == r0 + 1
