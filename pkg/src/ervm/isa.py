"""Instruction set definition: fixed 32-bit encoding, decode/encode helpers.

Layout: bits[31:24] opcode, [23:20] rd, [19:16] rs1.
R-type puts rs2 in [15:12]; I-type uses [15:0] as a 16-bit immediate.
Branches reuse the rd slot for rs1 and the rs1 slot for rs2; their
immediate is a signed word offset relative to the next instruction.
"""

from dataclasses import dataclass

# Opcodes
OP_HALT = 0x00
OP_ADD = 0x01
OP_SUB = 0x02
OP_AND = 0x03
OP_OR = 0x04
OP_XOR = 0x05
OP_SHL = 0x06
OP_SHR = 0x07
OP_ADDI = 0x10
OP_LUI = 0x11
OP_LD = 0x20
OP_ST = 0x21
OP_BEQ = 0x30
OP_BNE = 0x31
OP_BLT = 0x32
OP_JAL = 0x40
OP_JALR = 0x41
OP_ECALL = 0x50
OP_ERET = 0x51
OP_CSRR = 0x60
OP_CSRW = 0x61

R_TYPE = {OP_ADD, OP_SUB, OP_AND, OP_OR, OP_XOR, OP_SHL, OP_SHR}
I_TYPE = {OP_ADDI, OP_LUI, OP_LD, OP_ST, OP_BEQ, OP_BNE, OP_BLT,
          OP_JAL, OP_JALR, OP_CSRR, OP_CSRW}
BRANCHES = {OP_BEQ, OP_BNE, OP_BLT}
KNOWN_OPCODES = {OP_HALT, OP_ECALL, OP_ERET} | R_TYPE | I_TYPE

MNEMONICS = {
    OP_HALT: "HALT", OP_ADD: "ADD", OP_SUB: "SUB", OP_AND: "AND",
    OP_OR: "OR", OP_XOR: "XOR", OP_SHL: "SHL", OP_SHR: "SHR",
    OP_ADDI: "ADDI", OP_LUI: "LUI", OP_LD: "LD", OP_ST: "ST",
    OP_BEQ: "BEQ", OP_BNE: "BNE", OP_BLT: "BLT", OP_JAL: "JAL",
    OP_JALR: "JALR", OP_ECALL: "ECALL", OP_ERET: "ERET",
    OP_CSRR: "CSRR", OP_CSRW: "CSRW",
}
OPCODES_BY_NAME = {v: k for k, v in MNEMONICS.items()}

# CSR indices
CSR_STATUS = 0
CSR_IVEC = 1
CSR_EPC = 2
CSR_ESTATUS = 3
CSR_CAUSE = 4
CSR_MARK = 5
NUM_CSRS = 6
CSR_NAMES = {0: "STATUS", 1: "IVEC", 2: "EPC", 3: "ESTATUS", 4: "CAUSE", 5: "MARK"}

# Trap causes
CAUSE_ECALL = 32
CAUSE_ILLEGAL = 33
CAUSE_MEM_FAULT = 34
CAUSE_PRIVILEGE = 35

MMIO_BASE = 0xF000_0000
MMIO_END = 0xF000_0FFF


class EncodeError(ValueError):
    """Instruction field out of range."""


@dataclass(frozen=True)
class Instruction:
    opcode: int
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm16: int = 0  # stored unsigned, 0..0xFFFF


def sext16(v):
    """Sign-extend a 16-bit value to a Python int."""
    return v - 0x10000 if v & 0x8000 else v


def decode(word):
    """Decode a 32-bit word. Unknown opcodes still decode (they trap at
    execution, not here)."""
    opcode = (word >> 24) & 0xFF
    rd = (word >> 20) & 0xF
    rs1 = (word >> 16) & 0xF
    if opcode in R_TYPE:
        return Instruction(opcode, rd, rs1, (word >> 12) & 0xF, 0)
    return Instruction(opcode, rd, rs1, 0, word & 0xFFFF)


def encode(instr):
    """Exact inverse of decode for well-formed instructions."""
    if not 0 <= instr.opcode <= 0xFF:
        raise EncodeError("opcode out of range: %d" % instr.opcode)
    for name, val in (("rd", instr.rd), ("rs1", instr.rs1), ("rs2", instr.rs2)):
        if not 0 <= val <= 15:
            raise EncodeError("register index %s=%d out of range" % (name, val))
    word = (instr.opcode << 24) | (instr.rd << 20) | (instr.rs1 << 16)
    if instr.opcode in R_TYPE:
        return word | (instr.rs2 << 12)
    if not 0 <= instr.imm16 <= 0xFFFF:
        raise EncodeError("immediate 0x%X out of 16-bit range" % instr.imm16)
    return word | instr.imm16


def disassemble(word):
    """One-line human-readable rendering; used by log dump and listings."""
    i = decode(word)
    name = MNEMONICS.get(i.opcode)
    if name is None:
        return ".word 0x%08X" % word
    if i.opcode in (OP_HALT, OP_ECALL, OP_ERET):
        return name
    if i.opcode in R_TYPE:
        return "%s r%d, r%d, r%d" % (name, i.rd, i.rs1, i.rs2)
    if i.opcode in BRANCHES:
        return "%s r%d, r%d, %d" % (name, i.rd, i.rs1, sext16(i.imm16))
    if i.opcode == OP_CSRR:
        return "CSRR r%d, %s" % (i.rd, CSR_NAMES.get(i.imm16, str(i.imm16)))
    if i.opcode == OP_CSRW:
        return "CSRW %s, r%d" % (CSR_NAMES.get(i.imm16, str(i.imm16)), i.rs1)
    if i.opcode == OP_LUI:
        return "LUI r%d, 0x%X" % (i.rd, i.imm16)
    if i.opcode == OP_JAL:
        return "JAL r%d, %d" % (i.rd, sext16(i.imm16))
    return "%s r%d, r%d, %d" % (name, i.rd, i.rs1, sext16(i.imm16))
